#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "steerlab/corpus.hpp"
#include "steerlab/eval.hpp"
#include "steerlab/model.hpp"
#include "steerlab/pretrain.hpp"
#include "steerlab/rewards.hpp"
#include "steerlab/spo.hpp"

namespace steerlab::config {

struct CorpusSection {
    int n_contrastive = 64;  // per attribute, per polarity
    int n_preference = 256;
    int n_captions = 64;
    int n_attacks = 64;
    int n_classes = 8;
    double feature_noise_sigma = 0.1;
    int min_response_len = 4;
    int max_response_len = 8;
};

struct PretrainSection {
    int steps = 3000;
    int batch = 8;
    double learning_rate = 0.5;
    int eval_every = 200;
    double min_trigger_toxicity = 0.6;
    double min_caption_accuracy = 0.8;
    int holdout_prompts = 24;
    int holdout_captions = 24;
    int log_every = 50;
};

struct Stage1Section {
    int layer = 3;
    std::vector<double> weights = {0.5, 0.4, 0.4};
};

struct SteeringSection {
    double scale = 4.0;  // inference-time multiplier on the stored vector
    model::PositionPolicy policy = model::PositionPolicy::all_positions;
};

struct SpoSection {
    double clip_eps = 0.9;
    double critic_weight = 0.5;
    double learning_rate = 0.5;
    double critic_learning_rate = 0.05;
    int steps = 200;
    int batch = 16;
    spo::RatioMode ratio_mode = spo::RatioMode::centered;
    bool length_normalize = true;
    int critic_hidden = 32;
    double sample_temperature = 0.5;
    int sample_max_new_tokens = 12;
    int critic_inner_steps = 5;
    double hook_scale = 0.05;
};

struct EvalSection {
    double asr_threshold = 0.5;
    model::DecodeMode decode = model::DecodeMode::greedy;
    double temperature = 0.2;
    int max_new_tokens = 12;
};

struct RunConfig {
    uint64_t seed = 42;
    std::string output_dir = "out";
    model::ModelConfig model;
    CorpusSection corpus;
    PretrainSection pretrain;
    Stage1Section stage1;
    SteeringSection steering;
    rewards::RewardConfig rewards;
    SpoSection spo;
    EvalSection eval;

    void validate() const;

    corpus::CorpusSpec corpus_spec() const;
    pretrain::PretrainConfig pretrain_config() const;
    spo::SPOConfig spo_config() const;
    model::DecodeConfig decode_config() const;
    eval::EvalSettings eval_settings() const;
};

// Parses a JSON config (// comments allowed). The schema is strict: unknown
// keys anywhere are rejected before any work starts.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text, const std::string& origin);

// Hash of the canonical (comment- and whitespace-free) form.
std::string config_hash(const RunConfig& config);

std::string canonical_json(const RunConfig& config);

}  // namespace steerlab::config
