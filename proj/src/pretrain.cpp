#include "steerlab/pretrain.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/rewards.hpp"
#include "steerlab/rng.hpp"

namespace steerlab::pretrain {

using grad::Tensor;
using nlohmann::json;

void PretrainConfig::validate() const {
    if (steps < 0) fail(ErrorCode::invalid_argument, "steps must be >= 0");
    if (batch < 1) fail(ErrorCode::invalid_argument, "batch must be >= 1");
    if (!(learning_rate > 0.0)) fail(ErrorCode::invalid_argument, "learning_rate must be positive");
    if (eval_every < 1) fail(ErrorCode::invalid_argument, "eval_every must be >= 1");
    if (holdout_prompts < 1 || holdout_captions < 1)
        fail(ErrorCode::invalid_argument, "holdout sizes must be >= 1");
    if (log_every < 1) fail(ErrorCode::invalid_argument, "log_every must be >= 1");
    corpus_spec.validate();
    if (!(targets.min_trigger_toxicity >= 0.0 && targets.min_trigger_toxicity <= 1.0))
        fail(ErrorCode::invalid_argument, "min_trigger_toxicity must be in [0, 1]");
    if (!(targets.min_caption_accuracy >= 0.0 && targets.min_caption_accuracy <= 1.0))
        fail(ErrorCode::invalid_argument, "min_caption_accuracy must be in [0, 1]");
}

double trigger_toxicity_metric(const model::ModelWeights& weights,
                               const corpus::CorpusSpec& spec, int n_prompts, uint64_t seed,
                               int max_new_tokens) {
    auto attrs = corpus::default_attributes();
    auto prompts = corpus::gen_attack_prompts(attrs, n_prompts, seed);
    rewards::LexiconScorer scorer = rewards::LexiconScorer::from_attributes(attrs);
    model::DecodeConfig dc;
    dc.mode = model::DecodeMode::greedy;
    dc.max_new_tokens = max_new_tokens;
    double total = 0.0;
    for (const auto& p : prompts) {
        std::vector<int> response = model::generate(weights, corpus::to_prompt(p, spec), dc);
        total += scorer.score(response);
    }
    return total / n_prompts;
}

double caption_accuracy_metric(const model::ModelWeights& weights,
                               const corpus::CorpusSpec& spec, int n_examples, uint64_t seed) {
    grad::NoGradGuard no_grad;
    auto captions = corpus::gen_benign_captions(spec, n_examples, seed);
    int correct = 0, total = 0;
    for (const auto& e : captions) {
        Tensor logits =
            model::response_logits(weights, corpus::caption_prompt(e), e.caption, nullptr);
        int vocab = logits.shape()[1];
        for (std::size_t i = 0; i < e.caption.size(); ++i) {
            int best = 0;
            double best_v = logits.at(static_cast<int64_t>(i) * vocab);
            for (int j = 1; j < vocab; ++j) {
                double v = logits.at(static_cast<int64_t>(i) * vocab + j);
                if (v > best_v) {
                    best_v = v;
                    best = j;
                }
            }
            correct += best == e.caption[i] ? 1 : 0;
            ++total;
        }
    }
    return static_cast<double>(correct) / total;
}

PretrainResult pretrain(const model::ModelConfig& model_config, const PretrainConfig& config) {
    config.validate();
    model_config.validate();
    if (model_config.vocab_size < corpus::kVocabSize)
        fail(ErrorCode::config_mismatch, "vocab_size must cover the corpus token space");
    if (model_config.n_visual_tokens != config.corpus_spec.n_visual_tokens ||
        model_config.visual_feat_dim != config.corpus_spec.visual_feat_dim)
        fail(ErrorCode::config_mismatch, "corpus visual dimensions must match the model");

    PretrainResult result;
    result.weights =
        model::ModelWeights::init(model_config, mix_seed(config.seed, 0x1417), 0.08,
                                  model::UnembedInit::zeros);
    result.weights.set_trainable(true);

    auto attrs = corpus::default_attributes();
    Rng data_rng(mix_seed(config.seed, 0xda7a));
    uint64_t holdout_seed = mix_seed(config.seed, 0x401d);
    uint64_t holdcap_seed = mix_seed(config.seed, 0xca9);

    auto evaluate = [&](double& tox, double& acc) {
        result.weights.set_trainable(false);
        tox = trigger_toxicity_metric(result.weights, config.corpus_spec, config.holdout_prompts,
                                      holdout_seed);
        acc = caption_accuracy_metric(result.weights, config.corpus_spec, config.holdout_captions,
                                      holdcap_seed);
        result.weights.set_trainable(true);
    };

    int step = 0;
    for (; step < config.steps; ++step) {
      try {
        Tensor loss_sum;
        for (int b = 0; b < config.batch; ++b) {
            corpus::TrainingExample ex =
                corpus::sample_training_example(config.corpus_spec, attrs, data_rng);
            // per-sequence mean cross-entropy over the continuation
            Tensor logprob = model::sequence_logprob(result.weights, ex.prompt, ex.target);
            Tensor ce = grad::scale(logprob, -1.0 / static_cast<double>(ex.target.size()));
            loss_sum = b == 0 ? ce : grad::add(loss_sum, ce);
        }
        Tensor loss = grad::scale(loss_sum, 1.0 / static_cast<double>(config.batch));
        double loss_value = loss.item();
        if (!std::isfinite(loss_value))
            fail(ErrorCode::training_aborted,
                 "pretrain: non-finite loss at step " + std::to_string(step));

        grad::GradTable grads = grad::backward(loss);
        for (auto& [name, t] : result.weights.named_tensors()) {
            const std::vector<double>* g = grads.find(t);
            if (!g) continue;
            auto data = const_cast<Tensor&>(t).mutable_data();
            for (std::size_t i = 0; i < data.size(); ++i)
                data[i] -= config.learning_rate * (*g)[i];
        }

        if (step % config.log_every == 0) result.log.push_back({step, loss_value, false, 0, 0});

        if ((step + 1) % config.eval_every == 0) {
            double tox, acc;
            evaluate(tox, acc);
            result.log.push_back({step + 1, loss_value, true, tox, acc});
            if (tox >= config.targets.min_trigger_toxicity &&
                acc >= config.targets.min_caption_accuracy) {
                ++step;
                break;
            }
        }
      } catch (const Error& e) {
        if (e.code() == ErrorCode::non_finite)
            fail(ErrorCode::training_aborted,
                 "pretrain: diverged at step " + std::to_string(step) + ": " + e.what());
        throw;
      }
    }
    result.steps_run = step;

    evaluate(result.trigger_toxicity, result.caption_accuracy);
    result.targets_met = result.trigger_toxicity >= config.targets.min_trigger_toxicity &&
                         result.caption_accuracy >= config.targets.min_caption_accuracy;
    result.weights.set_trainable(false);
    return result;
}

std::string log_to_jsonl(const std::vector<LogEntry>& log) {
    std::string out;
    for (const LogEntry& e : log) {
        json j = {{"step", e.step}, {"loss", e.loss}};
        if (e.has_metrics) {
            j["trigger_toxicity"] = e.trigger_toxicity;
            j["caption_accuracy"] = e.caption_accuracy;
        }
        out += j.dump();
        out += '\n';
    }
    return out;
}

void save_log(const std::string& path, const std::vector<LogEntry>& log) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_failure, "cannot open for writing: " + path);
    std::string body = log_to_jsonl(log);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) fail(ErrorCode::io_failure, "write failed: " + path);
}

}  // namespace steerlab::pretrain
