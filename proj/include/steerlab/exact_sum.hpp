#pragma once

#include <vector>

namespace steerlab {

// Error-free accumulation of doubles (Shewchuk-style expansion). The running
// state is a list of non-overlapping partials whose exact sum equals the exact
// sum of everything added, so the rounded total is independent of input order
// and doubling every input exactly doubles the result.
class ExactSum {
  public:
    void add(double x) {
        std::size_t keep = 0;
        for (double partial : partials_) {
            double s = x + partial;
            double big = s - x;
            double err = (x - (s - big)) + (partial - big);
            if (err != 0.0) partials_[keep++] = err;
            x = s;
        }
        partials_.resize(keep);
        partials_.push_back(x);
    }

    double value() const {
        double total = 0.0;
        for (double partial : partials_) total += partial;
        return total;
    }

  private:
    std::vector<double> partials_;  // increasing magnitude
};

}  // namespace steerlab
