#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "steerlab/corpus.hpp"
#include "steerlab/grad.hpp"
#include "steerlab/model.hpp"
#include "steerlab/rewards.hpp"
#include "steerlab/steering.hpp"

namespace steerlab::spo {

// "literal": the raw steered/unsteered probability-ratio difference, which is
// 0 at v = 0. "centered": 1 + that difference, restoring the usual clipping
// fixed point at 1.
enum class RatioMode { literal, centered };

struct SPOConfig {
    double clip_eps = 0.9;        // clip half-width
    double critic_weight = 0.5;   // c1
    double learning_rate = 0.5;   // eta, steering-vector step
    double critic_learning_rate = 0.05;
    int total_steps = 200;        // T
    int batch_size = 16;          // m
    int layer = 3;
    RatioMode ratio_mode = RatioMode::centered;
    bool length_normalize = true;
    uint64_t seed = 0;
    int critic_hidden = 32;
    double sample_temperature = 0.5;  // on-policy reward samples
    int sample_max_new_tokens = 12;
    // Inner descent steps fitting the critic to the batch each outer step.
    // The value baseline has to track per-prompt rewards faster than the
    // vector moves, or transient advantages destabilize the policy update.
    int critic_inner_steps = 5;
    // Injection scale used throughout Stage II (sampling, reward states and
    // the steered side of the ratio). The ratio is informative only while
    // preference shifts stay inside the clip band; past it the min() turns
    // into a one-way downward ratchet. A small probe scale keeps the
    // quadruplets unsaturated during optimization; the deployment scale is
    // applied at inference.
    double hook_scale = 0.05;

    void validate() const;
};

// Two-layer perceptron d_model -> hidden -> 1 over mean-pooled prompt states.
struct CriticParams {
    grad::Tensor w1, b1, w2, b2;

    static CriticParams init(int d_model, int hidden, uint64_t seed);
    std::vector<grad::Tensor*> parameters();
};

grad::Tensor critic_value(CriticParams& critic, const grad::Tensor& prompt_states);

// Unsteered per-response log-probs, reusable across steps (they never change
// while the base stays frozen).
struct BaselineLogprobs {
    double target = 0.0;
    double opposing = 0.0;
};

// f(r_T) - f(r_O) where f(r) = exp(clamped log-prob difference between the
// v-steered and unsteered policies); differentiable w.r.t. v.
grad::Tensor policy_ratio(const model::ModelWeights& weights, const grad::Tensor& v, int layer,
                          const corpus::PreferenceQuadruplet& quad, RatioMode mode,
                          bool length_normalize,
                          const BaselineLogprobs* cached_baseline = nullptr,
                          double hook_scale = 1.0);

// -min(ratio*A, clip(ratio, 1-eps, 1+eps)*A) with constant advantage.
grad::Tensor clipped_loss(const grad::Tensor& ratio, double advantage, double clip_eps);

double advantage(double reward, double value);

// Squared error (V - R)^2 as a graph in the critic parameters.
grad::Tensor critic_loss(const grad::Tensor& value, double reward);

constexpr double kLogRatioClamp = 30.0;

struct StepRecord {
    int step = 0;
    double mean_reward = 0.0;
    double mean_advantage = 0.0;
    double mean_ratio = 0.0;
    double loss_policy = 0.0;
    double loss_critic = 0.0;
    double loss_total = 0.0;
    double vector_norm = 0.0;
};

struct TrainResult {
    steering::SteeringVector vector;  // stage2
    std::vector<StepRecord> records;
    std::vector<double> mean_toxicity;  // per step, over the on-policy samples
    std::string weights_hash_before;
    std::string weights_hash_after;
};

// Algorithm: T seeded minibatch steps over the quadruplets; per quadruplet an
// on-policy response is sampled from the currently steered model for reward
// evaluation, then v descends the clipped policy loss and the critic descends
// c1 * critic loss. Base weights must be frozen and are hash-verified.
TrainResult spo_train(const model::ModelWeights& weights, const steering::SteeringVector& v0,
                      const std::vector<corpus::PreferenceQuadruplet>& data,
                      const SPOConfig& config, const rewards::RewardConfig& reward_config,
                      rewards::ToxicityScorer& scorer);

std::string training_log_to_jsonl(const std::vector<StepRecord>& records);
void save_training_log(const std::string& path, const std::vector<StepRecord>& records);

}  // namespace steerlab::spo
