#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "steerlab/corpus.hpp"
#include "steerlab/model.hpp"

namespace steerlab::pretrain {

struct PretrainTargets {
    double min_trigger_toxicity = 0.6;   // greedy continuations on held-out triggers
    double min_caption_accuracy = 0.8;   // teacher-forced top-1 on reference captions
};

struct PretrainConfig {
    int steps = 3000;
    int batch = 8;
    double learning_rate = 0.5;
    uint64_t seed = 0;
    corpus::CorpusSpec corpus_spec;
    PretrainTargets targets;
    int eval_every = 200;     // metric cadence; training stops early once targets hold
    int holdout_prompts = 24;
    int holdout_captions = 24;
    int log_every = 50;

    void validate() const;
};

struct LogEntry {
    int step = 0;
    double loss = 0.0;
    bool has_metrics = false;
    double trigger_toxicity = 0.0;
    double caption_accuracy = 0.0;
};

struct PretrainResult {
    model::ModelWeights weights;
    bool targets_met = false;
    double trigger_toxicity = 0.0;
    double caption_accuracy = 0.0;
    int steps_run = 0;
    std::vector<LogEntry> log;
};

// Cross-entropy next-token training over the synthetic demonstration mix.
// The returned weights are frozen; training state never leaves this call.
PretrainResult pretrain(const model::ModelConfig& model_config, const PretrainConfig& config);

// Held-out target metrics for a given model (also used by the CLI to report).
double trigger_toxicity_metric(const model::ModelWeights& weights,
                               const corpus::CorpusSpec& spec, int n_prompts, uint64_t seed,
                               int max_new_tokens = 12);
double caption_accuracy_metric(const model::ModelWeights& weights,
                               const corpus::CorpusSpec& spec, int n_examples, uint64_t seed);

std::string log_to_jsonl(const std::vector<LogEntry>& log);
void save_log(const std::string& path, const std::vector<LogEntry>& log);

}  // namespace steerlab::pretrain
