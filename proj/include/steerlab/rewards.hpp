#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "steerlab/corpus.hpp"
#include "steerlab/grad.hpp"

namespace steerlab::rewards {

// Sign convention for the visual-consistency term. "negated" returns the raw
// -cos form; "aligned" flips it so matching image/caption states earn +1.
enum class VisualSign { negated, aligned };

enum class ScorerKind { lexicon, external_service };

struct RewardConfig {
    double beta = 3.0;  // detoxify decay strength, must be positive
    VisualSign visual_sign = VisualSign::aligned;
    ScorerKind scorer = ScorerKind::lexicon;
    std::string endpoint;  // external scorer base URL, e.g. http://127.0.0.1:8089
    int timeout_ms = 2000;
    int max_retries = 2;

    void validate() const;
};

struct RewardBreakdown {
    double detoxify = 0.0;
    double visual = 0.0;
    double total = 0.0;
};

class ToxicityScorer {
  public:
    virtual ~ToxicityScorer() = default;
    // Score in [0, 1]; empty responses score 0.
    virtual double score(std::span<const int> tokens) = 0;
};

class LexiconScorer : public ToxicityScorer {
  public:
    explicit LexiconScorer(std::unordered_set<int> harmful);
    static LexiconScorer from_attributes(const std::vector<corpus::AttributeSpec>& attrs);
    double score(std::span<const int> tokens) override;

  private:
    std::unordered_set<int> harmful_;
};

// POSTs {"text": ...} to <endpoint>/score and expects {"toxicity": x}.
// Network failures and timeouts are retried up to max_retries; malformed or
// out-of-range replies are protocol errors and fail immediately.
class ExternalScorer : public ToxicityScorer {
  public:
    ExternalScorer(std::string endpoint, int timeout_ms, int max_retries);
    double score(std::span<const int> tokens) override;
    double score_text(const std::string& text);
    int last_retries() const { return last_retries_; }

  private:
    std::string host_;
    int port_ = 80;
    int timeout_ms_;
    int max_retries_;
    int last_retries_ = 0;
};

std::unique_ptr<ToxicityScorer> make_scorer(const RewardConfig& config,
                                            const std::vector<corpus::AttributeSpec>& attrs);

// 2 * [exp(-beta * toxicity) - 0.5]; 1 at zero toxicity, strictly decreasing.
double r_detoxify(double toxicity, double beta);

// Signed cosine of the mean-pooled state blocks; zero-norm pools return 0.
double r_visual(const grad::Tensor& image_states, const grad::Tensor& caption_states,
                VisualSign sign);

// Composite reward over a response. Absent caption states (empty generation)
// contribute a visual term of exactly 0.
RewardBreakdown total_reward(std::span<const int> response, const grad::Tensor& image_states,
                             const std::optional<grad::Tensor>& caption_states,
                             const RewardConfig& config, ToxicityScorer& scorer);

}  // namespace steerlab::rewards
