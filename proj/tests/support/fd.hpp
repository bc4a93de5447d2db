#pragma once

// Central finite-difference gradient oracle. Kept independent of the
// reverse-mode path it checks: it only re-evaluates forward values under
// elementwise perturbations of a leaf.

#include <cmath>
#include <functional>
#include <vector>

#include "steerlab/grad.hpp"

namespace fd {

inline std::vector<double> gradient(steerlab::grad::Tensor leaf,
                                    const std::function<double()>& eval, double h = 1e-5) {
    auto data = leaf.mutable_data();
    std::vector<double> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        double saved = data[i];
        data[i] = saved + h;
        double up = eval();
        data[i] = saved - h;
        double down = eval();
        data[i] = saved;
        out[i] = (up - down) / (2.0 * h);
    }
    return out;
}

inline double rel_err(double analytic, double numeric) {
    double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    return std::fabs(analytic - numeric) / denom;
}

inline double max_rel_err(const std::vector<double>& analytic,
                          const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, rel_err(analytic[i], numeric[i]));
    return worst;
}

}  // namespace fd
