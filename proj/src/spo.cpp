#include "steerlab/spo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/rng.hpp"

namespace steerlab::spo {

using grad::Tensor;
using nlohmann::json;

void SPOConfig::validate() const {
    if (!(clip_eps > 0.0 && clip_eps < 1.0))
        fail(ErrorCode::invalid_argument, "clip_eps must lie in (0, 1)");
    if (!(critic_weight > 0.0)) fail(ErrorCode::invalid_argument, "critic_weight must be positive");
    if (learning_rate < 0.0) fail(ErrorCode::invalid_argument, "learning_rate must be >= 0");
    if (critic_learning_rate < 0.0)
        fail(ErrorCode::invalid_argument, "critic_learning_rate must be >= 0");
    if (total_steps < 0) fail(ErrorCode::invalid_argument, "total_steps must be >= 0");
    if (batch_size < 1) fail(ErrorCode::invalid_argument, "batch_size must be >= 1");
    if (layer < 1) fail(ErrorCode::invalid_argument, "layer must be >= 1");
    if (critic_hidden < 1) fail(ErrorCode::invalid_argument, "critic_hidden must be >= 1");
    if (!(sample_temperature > 0.0))
        fail(ErrorCode::invalid_argument, "sample_temperature must be positive");
    if (!(hook_scale != 0.0))
        fail(ErrorCode::invalid_argument, "hook_scale must be non-zero");
    if (sample_max_new_tokens < 1)
        fail(ErrorCode::invalid_argument, "sample_max_new_tokens must be >= 1");
    if (critic_inner_steps < 1)
        fail(ErrorCode::invalid_argument, "critic_inner_steps must be >= 1");
}

CriticParams CriticParams::init(int d_model, int hidden, uint64_t seed) {
    Rng rng(seed);
    auto gaussian = [&](int rows, int cols) {
        std::vector<double> data(static_cast<std::size_t>(rows) * cols);
        for (double& v : data) v = rng.gaussian() * 0.1;
        return data;
    };
    CriticParams c;
    c.w1 = Tensor::from_data({d_model, hidden}, gaussian(d_model, hidden), true);
    c.b1 = Tensor::zeros({hidden}, true);
    c.w2 = Tensor::from_data({hidden, 1}, gaussian(hidden, 1), true);
    c.b2 = Tensor::zeros({1}, true);
    return c;
}

std::vector<Tensor*> CriticParams::parameters() { return {&w1, &b1, &w2, &b2}; }

grad::Tensor critic_value(CriticParams& critic, const grad::Tensor& prompt_states) {
    if (!prompt_states.valid() || prompt_states.shape().size() != 2)
        fail(ErrorCode::shape_mismatch, "critic_value: prompt states must be [n, d]");
    if (prompt_states.shape()[1] != critic.w1.shape()[0])
        fail(ErrorCode::shape_mismatch, "critic_value: state width does not match critic input");
    Tensor pooled = grad::mean_pool(prompt_states);
    Tensor row = grad::reshape(pooled, {1, critic.w1.shape()[0]});
    Tensor hidden = grad::gelu(grad::add(grad::matmul(row, critic.w1), critic.b1));
    Tensor out = grad::add(grad::matmul(hidden, critic.w2), critic.b2);
    return grad::reshape(out, {1});
}

namespace {

// exp of a clamped log-difference; saturated values become flat constants,
// matching the zero slope of a hard clamp.
Tensor clamped_exp_ratio(const Tensor& steered_logprob, double baseline_logprob, int length,
                         bool length_normalize) {
    double norm = length_normalize ? 1.0 / static_cast<double>(length) : 1.0;
    Tensor delta = grad::scale(
        grad::add(steered_logprob, Tensor::scalar(-baseline_logprob)), norm);
    double value = delta.item();
    if (!std::isfinite(value))
        fail(ErrorCode::non_finite, "policy_ratio: non-finite log difference");
    if (value > kLogRatioClamp) return Tensor::scalar(std::exp(kLogRatioClamp));
    if (value < -kLogRatioClamp) return Tensor::scalar(std::exp(-kLogRatioClamp));
    return grad::exp(delta);
}

}  // namespace

grad::Tensor policy_ratio(const model::ModelWeights& weights, const grad::Tensor& v, int layer,
                          const corpus::PreferenceQuadruplet& quad, RatioMode mode,
                          bool length_normalize, const BaselineLogprobs* cached_baseline,
                          double hook_scale) {
    if (v.shape() != grad::Shape{weights.config().d_model})
        fail(ErrorCode::shape_mismatch, "policy_ratio: v length must equal d_model");
    if (quad.r_target.empty() || quad.r_opposing.empty())
        fail(ErrorCode::invalid_argument, "policy_ratio: empty response in quadruplet");

    model::MultimodalPrompt prompt = corpus::to_prompt(quad);
    model::SteeringHook hook{layer, v, hook_scale, model::PositionPolicy::all_positions};

    BaselineLogprobs baseline;
    if (cached_baseline) {
        baseline = *cached_baseline;
    } else {
        grad::NoGradGuard no_grad;
        baseline.target = model::sequence_logprob(weights, prompt, quad.r_target).item();
        baseline.opposing = model::sequence_logprob(weights, prompt, quad.r_opposing).item();
    }

    Tensor steered_target = model::sequence_logprob(weights, prompt, quad.r_target, &hook);
    Tensor steered_opposing = model::sequence_logprob(weights, prompt, quad.r_opposing, &hook);

    Tensor f_target = clamped_exp_ratio(steered_target, baseline.target,
                                        static_cast<int>(quad.r_target.size()), length_normalize);
    Tensor f_opposing =
        clamped_exp_ratio(steered_opposing, baseline.opposing,
                          static_cast<int>(quad.r_opposing.size()), length_normalize);

    Tensor difference = grad::add(f_target, grad::scale(f_opposing, -1.0));
    if (mode == RatioMode::literal) return difference;
    return grad::add(Tensor::scalar(1.0), difference);
}

grad::Tensor clipped_loss(const grad::Tensor& ratio, double advantage_value, double clip_eps) {
    if (!(clip_eps > 0.0 && clip_eps < 1.0))
        fail(ErrorCode::invalid_argument, "clipped_loss: clip_eps must lie in (0, 1)");
    double r = ratio.item();
    Tensor unclipped = grad::scale(ratio, advantage_value);
    Tensor clipped;
    if (r < 1.0 - clip_eps) {
        clipped = Tensor::scalar((1.0 - clip_eps) * advantage_value);
    } else if (r > 1.0 + clip_eps) {
        clipped = Tensor::scalar((1.0 + clip_eps) * advantage_value);
    } else {
        clipped = unclipped;
    }
    // min picked by value; ties keep the unclipped branch
    Tensor chosen = unclipped.item() <= clipped.item() ? unclipped : clipped;
    return grad::scale(chosen, -1.0);
}

double advantage(double reward, double value) { return reward - value; }

grad::Tensor critic_loss(const grad::Tensor& value, double reward) {
    return grad::mse(value, Tensor::scalar(reward));
}

TrainResult spo_train(const model::ModelWeights& weights, const steering::SteeringVector& v0,
                      const std::vector<corpus::PreferenceQuadruplet>& data,
                      const SPOConfig& config, const rewards::RewardConfig& reward_config,
                      rewards::ToxicityScorer& scorer) {
    config.validate();
    reward_config.validate();
    const model::ModelConfig& mc = weights.config();
    if (weights.trainable())
        fail(ErrorCode::invalid_argument, "spo_train: base weights must be frozen");
    if (static_cast<int>(v0.values.size()) != mc.d_model)
        fail(ErrorCode::config_mismatch, "spo_train: v0 dimension does not match the model");
    if (v0.layer != config.layer)
        fail(ErrorCode::config_mismatch, "spo_train: v0 layer does not match the config layer");
    if (config.layer > mc.n_layers)
        fail(ErrorCode::config_mismatch, "spo_train: layer exceeds model depth");
    if (data.empty()) fail(ErrorCode::invalid_argument, "spo_train: empty preference dataset");

    TrainResult result;
    result.weights_hash_before = model::weights_content_hash(weights);

    Tensor v = Tensor::from_data({mc.d_model}, v0.values, true);
    CriticParams critic = CriticParams::init(mc.d_model, config.critic_hidden,
                                             mix_seed(config.seed, 0xc511c));

    int n = static_cast<int>(data.size());
    std::vector<std::optional<BaselineLogprobs>> baselines(data.size());
    std::vector<Tensor> prompt_states(data.size());
    // Visual-consistency term per quadruplet: pooled image states against the
    // target response's states under the unsteered base. A fixed per-prompt
    // constant, so value estimates can match rewards exactly on prompts whose
    // behavior is already safe.
    std::vector<std::optional<double>> visual_terms(data.size());

    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(config.seed, 0x5af));
    int cursor = n;  // force a shuffle before the first draw

    for (int step = 0; step < config.total_steps; ++step) {
      try {
        Tensor sum_policy, sum_critic;
        double acc_reward = 0.0, acc_advantage = 0.0, acc_ratio = 0.0, acc_toxicity = 0.0;

        std::vector<std::pair<int, double>> batch_rewards;  // (quad index, R)
        for (int b = 0; b < config.batch_size; ++b) {
            if (cursor + 1 > n) {
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            int idx = order[cursor++];
            const corpus::PreferenceQuadruplet& quad = data[idx];
            model::MultimodalPrompt prompt = corpus::to_prompt(quad);
            int prompt_len = model::prompt_length(mc, prompt);

            model::SteeringHook hook{config.layer, v, config.hook_scale,
                                     model::PositionPolicy::all_positions};

            // On-policy sample from the currently steered model; tracked so
            // the training log shows the deployed policy's toxicity curve.
            model::DecodeConfig dc;
            dc.mode = model::DecodeMode::temperature_sampling;
            dc.temperature = config.sample_temperature;
            dc.max_new_tokens = config.sample_max_new_tokens;
            dc.seed = mix_seed(config.seed,
                               static_cast<uint64_t>(step) * 0x10001ULL + static_cast<uint64_t>(b));
            std::vector<int> sampled = model::generate(weights, prompt, dc, &hook);
            acc_toxicity += scorer.score(sampled);

            if (!visual_terms[idx]) {
                grad::NoGradGuard no_grad;
                if (mc.n_visual_tokens > 0) {
                    Tensor states = model::final_hidden_states(weights, prompt, quad.r_target);
                    Tensor image = grad::slice(states, 0, 0, mc.n_visual_tokens);
                    Tensor caption = grad::slice(states, 0, prompt_len,
                                                 static_cast<int>(quad.r_target.size()));
                    visual_terms[idx] =
                        rewards::r_visual(image, caption, reward_config.visual_sign);
                } else {
                    visual_terms[idx] = 0.0;
                }
            }

            // Advantage compares the target behavior's reward against the
            // learned value of the current policy: positive headroom on
            // prompts the defense still loses, near zero once they are safe.
            // Scoring the rollout inside the advantage instead couples
            // negative advantages to the preference ratio on exactly the
            // vulnerable prompts, which collapses the vector.
            double target_reward = rewards::r_detoxify(scorer.score(quad.r_target),
                                                       reward_config.beta) +
                                   *visual_terms[idx];
            double sample_reward =
                rewards::r_detoxify(scorer.score(sampled), reward_config.beta) +
                *visual_terms[idx];

            if (!prompt_states[idx].valid()) {
                grad::NoGradGuard no_grad;
                prompt_states[idx] = model::final_hidden_states(weights, prompt, {});
            }
            Tensor value = critic_value(critic, prompt_states[idx]);
            double adv = advantage(target_reward, value.item());

            if (!baselines[idx]) {
                grad::NoGradGuard no_grad;
                BaselineLogprobs base;
                base.target = model::sequence_logprob(weights, prompt, quad.r_target).item();
                base.opposing = model::sequence_logprob(weights, prompt, quad.r_opposing).item();
                baselines[idx] = base;
            }
            Tensor ratio = policy_ratio(weights, v, config.layer, quad, config.ratio_mode,
                                        config.length_normalize, &*baselines[idx],
                                        config.hook_scale);

            Tensor policy_term = clipped_loss(ratio, adv, config.clip_eps);
            Tensor critic_term = critic_loss(value, sample_reward);
            sum_policy = b == 0 ? policy_term : grad::add(sum_policy, policy_term);
            sum_critic = b == 0 ? critic_term : grad::add(sum_critic, critic_term);

            acc_reward += sample_reward;
            acc_advantage += adv;
            acc_ratio += ratio.item();
            batch_rewards.emplace_back(idx, sample_reward);
        }

        double inv_m = 1.0 / static_cast<double>(config.batch_size);
        Tensor loss_policy = grad::scale(sum_policy, inv_m);
        Tensor loss_critic = grad::scale(sum_critic, inv_m);
        Tensor loss_total = grad::add(loss_policy, grad::scale(loss_critic, config.critic_weight));
        if (!std::isfinite(loss_total.item()))
            fail(ErrorCode::training_aborted,
                 "spo_train: non-finite loss at step " + std::to_string(step));

        grad::GradTable grads = grad::backward(loss_total);
        auto apply = [&](Tensor& param, double rate) {
            const std::vector<double>* g = grads.find(param);
            if (!g) return;
            auto data = param.mutable_data();
            for (std::size_t i = 0; i < data.size(); ++i) data[i] -= rate * (*g)[i];
        };
        apply(v, config.learning_rate);
        for (Tensor* p : critic.parameters()) apply(*p, config.critic_learning_rate);

        // additional critic-only refits on the same batch
        for (int inner = 1; inner < config.critic_inner_steps; ++inner) {
            Tensor refit_sum;
            for (std::size_t k = 0; k < batch_rewards.size(); ++k) {
                auto [idx, reward] = batch_rewards[k];
                Tensor value = critic_value(critic, prompt_states[idx]);
                Tensor term = critic_loss(value, reward);
                refit_sum = k == 0 ? term : grad::add(refit_sum, term);
            }
            Tensor refit =
                grad::scale(refit_sum, config.critic_weight / config.batch_size);
            grad::GradTable refit_grads = grad::backward(refit);
            for (Tensor* p : critic.parameters()) {
                const std::vector<double>* g = refit_grads.find(*p);
                if (!g) continue;
                auto data = p->mutable_data();
                for (std::size_t i = 0; i < data.size(); ++i)
                    data[i] -= config.critic_learning_rate * (*g)[i];
            }
        }

        double norm2 = 0.0;
        for (double x : v.data()) norm2 += x * x;
        StepRecord rec;
        rec.step = step;
        rec.mean_reward = acc_reward * inv_m;
        rec.mean_advantage = acc_advantage * inv_m;
        rec.mean_ratio = acc_ratio * inv_m;
        rec.loss_policy = loss_policy.item();
        rec.loss_critic = loss_critic.item();
        rec.loss_total = loss_total.item();
        rec.vector_norm = std::sqrt(norm2);
        result.records.push_back(rec);
        result.mean_toxicity.push_back(acc_toxicity * inv_m);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::non_finite)
            fail(ErrorCode::training_aborted,
                 "spo_train: aborted at step " + std::to_string(step) + ": " + e.what());
        throw;
      }
    }

    result.weights_hash_after = model::weights_content_hash(weights);
    if (result.weights_hash_after != result.weights_hash_before)
        fail(ErrorCode::training_aborted, "spo_train: base weights changed during training");

    result.vector.layer = config.layer;
    result.vector.values.assign(v.data().begin(), v.data().end());
    result.vector.provenance = v0.provenance;
    result.vector.stage = steering::Stage::stage2;
    return result;
}

std::string training_log_to_jsonl(const std::vector<StepRecord>& records) {
    std::string out;
    for (const StepRecord& r : records) {
        json j = {{"step", r.step},
                  {"mean_reward", r.mean_reward},
                  {"mean_advantage", r.mean_advantage},
                  {"mean_ratio", r.mean_ratio},
                  {"loss_policy", r.loss_policy},
                  {"loss_critic", r.loss_critic},
                  {"loss_total", r.loss_total},
                  {"vector_norm", r.vector_norm}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

void save_training_log(const std::string& path, const std::vector<StepRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_failure, "cannot open for writing: " + path);
    std::string body = training_log_to_jsonl(records);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) fail(ErrorCode::io_failure, "write failed: " + path);
}

}  // namespace steerlab::spo
