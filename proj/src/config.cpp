#include "steerlab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/hash.hpp"

namespace steerlab::config {

using nlohmann::json;

namespace {

// Strict object reader: every key must be consumed exactly once.
class ObjectReader {
  public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object())
            fail(ErrorCode::schema_violation, path_ + " must be a JSON object");
    }

    ~ObjectReader() = default;

    template <typename T>
    void read(const char* key, T& out) {
        auto it = j_.find(key);
        if (it == j_.end())
            fail(ErrorCode::schema_violation, path_ + ": missing key \"" + key + "\"");
        seen_.insert(key);
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            fail(ErrorCode::schema_violation, path_ + ": bad type for \"" + key + "\"");
        }
    }

    const json& child(const char* key) {
        auto it = j_.find(key);
        if (it == j_.end())
            fail(ErrorCode::schema_violation, path_ + ": missing key \"" + key + "\"");
        seen_.insert(key);
        return *it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                fail(ErrorCode::schema_violation, path_ + ": unknown key \"" + it.key() + "\"");
    }

  private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

model::PositionPolicy parse_policy(const std::string& s, const std::string& path) {
    if (s == "all-positions") return model::PositionPolicy::all_positions;
    if (s == "generated-only") return model::PositionPolicy::generated_only;
    if (s == "last-token-only") return model::PositionPolicy::last_token_only;
    fail(ErrorCode::schema_violation, path + ": bad position policy \"" + s + "\"");
}

const char* policy_name(model::PositionPolicy p) {
    switch (p) {
        case model::PositionPolicy::all_positions: return "all-positions";
        case model::PositionPolicy::generated_only: return "generated-only";
        case model::PositionPolicy::last_token_only: return "last-token-only";
    }
    return "all-positions";
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& origin) {
    json root_json;
    try {
        root_json = json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        fail(ErrorCode::schema_violation, origin + ": " + e.what());
    }

    RunConfig cfg;
    ObjectReader root(root_json, origin);
    root.read("seed", cfg.seed);
    root.read("output_dir", cfg.output_dir);

    {
        ObjectReader m(root.child("model"), origin + ".model");
        m.read("n_layers", cfg.model.n_layers);
        m.read("d_model", cfg.model.d_model);
        m.read("n_heads", cfg.model.n_heads);
        m.read("vocab_size", cfg.model.vocab_size);
        m.read("max_seq_len", cfg.model.max_seq_len);
        m.read("n_visual_tokens", cfg.model.n_visual_tokens);
        m.read("visual_feat_dim", cfg.model.visual_feat_dim);
        m.finish();
    }
    {
        ObjectReader c(root.child("corpus"), origin + ".corpus");
        c.read("n_contrastive", cfg.corpus.n_contrastive);
        c.read("n_preference", cfg.corpus.n_preference);
        c.read("n_captions", cfg.corpus.n_captions);
        c.read("n_attacks", cfg.corpus.n_attacks);
        c.read("n_classes", cfg.corpus.n_classes);
        c.read("feature_noise_sigma", cfg.corpus.feature_noise_sigma);
        c.read("min_response_len", cfg.corpus.min_response_len);
        c.read("max_response_len", cfg.corpus.max_response_len);
        c.finish();
    }
    {
        ObjectReader p(root.child("pretrain"), origin + ".pretrain");
        p.read("steps", cfg.pretrain.steps);
        p.read("batch", cfg.pretrain.batch);
        p.read("learning_rate", cfg.pretrain.learning_rate);
        p.read("eval_every", cfg.pretrain.eval_every);
        p.read("min_trigger_toxicity", cfg.pretrain.min_trigger_toxicity);
        p.read("min_caption_accuracy", cfg.pretrain.min_caption_accuracy);
        p.read("holdout_prompts", cfg.pretrain.holdout_prompts);
        p.read("holdout_captions", cfg.pretrain.holdout_captions);
        p.read("log_every", cfg.pretrain.log_every);
        p.finish();
    }
    {
        ObjectReader s(root.child("stage1"), origin + ".stage1");
        s.read("layer", cfg.stage1.layer);
        s.read("weights", cfg.stage1.weights);
        s.finish();
    }
    {
        ObjectReader s(root.child("steering"), origin + ".steering");
        s.read("scale", cfg.steering.scale);
        std::string policy;
        s.read("position_policy", policy);
        cfg.steering.policy = parse_policy(policy, origin + ".steering");
        s.finish();
    }
    {
        ObjectReader r(root.child("rewards"), origin + ".rewards");
        r.read("beta", cfg.rewards.beta);
        std::string sign, scorer;
        r.read("visual_sign", sign);
        if (sign == "alignment-positive") {
            cfg.rewards.visual_sign = rewards::VisualSign::aligned;
        } else if (sign == "negated-cosine") {
            cfg.rewards.visual_sign = rewards::VisualSign::negated;
        } else {
            fail(ErrorCode::schema_violation, origin + ".rewards: bad visual_sign \"" + sign +
                                                  "\" (alignment-positive | negated-cosine)");
        }
        r.read("scorer", scorer);
        if (scorer == "lexicon") {
            cfg.rewards.scorer = rewards::ScorerKind::lexicon;
        } else if (scorer == "external-service") {
            cfg.rewards.scorer = rewards::ScorerKind::external_service;
        } else {
            fail(ErrorCode::schema_violation, origin + ".rewards: bad scorer \"" + scorer +
                                                  "\" (lexicon | external-service)");
        }
        r.read("endpoint", cfg.rewards.endpoint);
        r.read("timeout_ms", cfg.rewards.timeout_ms);
        r.read("max_retries", cfg.rewards.max_retries);
        r.finish();
    }
    {
        ObjectReader s(root.child("spo"), origin + ".spo");
        s.read("clip_eps", cfg.spo.clip_eps);
        s.read("critic_weight", cfg.spo.critic_weight);
        s.read("learning_rate", cfg.spo.learning_rate);
        s.read("critic_learning_rate", cfg.spo.critic_learning_rate);
        s.read("steps", cfg.spo.steps);
        s.read("batch", cfg.spo.batch);
        std::string mode;
        s.read("ratio_mode", mode);
        if (mode == "centered") {
            cfg.spo.ratio_mode = spo::RatioMode::centered;
        } else if (mode == "literal") {
            cfg.spo.ratio_mode = spo::RatioMode::literal;
        } else {
            fail(ErrorCode::schema_violation,
                 origin + ".spo: bad ratio_mode \"" + mode + "\" (centered | literal)");
        }
        s.read("length_normalize", cfg.spo.length_normalize);
        s.read("critic_hidden", cfg.spo.critic_hidden);
        s.read("sample_temperature", cfg.spo.sample_temperature);
        s.read("sample_max_new_tokens", cfg.spo.sample_max_new_tokens);
        s.read("critic_inner_steps", cfg.spo.critic_inner_steps);
        s.read("hook_scale", cfg.spo.hook_scale);
        s.finish();
    }
    {
        ObjectReader e(root.child("eval"), origin + ".eval");
        e.read("asr_threshold", cfg.eval.asr_threshold);
        std::string decode;
        e.read("decode", decode);
        if (decode == "greedy") {
            cfg.eval.decode = model::DecodeMode::greedy;
        } else if (decode == "temperature") {
            cfg.eval.decode = model::DecodeMode::temperature_sampling;
        } else {
            fail(ErrorCode::schema_violation,
                 origin + ".eval: bad decode \"" + decode + "\" (greedy | temperature)");
        }
        e.read("temperature", cfg.eval.temperature);
        e.read("max_new_tokens", cfg.eval.max_new_tokens);
        e.finish();
    }
    root.finish();

    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::missing_artifact, "config not found: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path);
}

void RunConfig::validate() const {
    model.validate();
    corpus_spec().validate();
    if (output_dir.empty()) fail(ErrorCode::schema_violation, "output_dir must be non-empty");
    if (model.vocab_size < corpus::kVocabSize)
        fail(ErrorCode::config_mismatch, "model vocab_size must cover the corpus token space");
    if (corpus.n_contrastive < 1 || corpus.n_preference < 1 || corpus.n_captions < 1 ||
        corpus.n_attacks < 1)
        fail(ErrorCode::schema_violation, "corpus set sizes must be >= 1");
    if (stage1.layer < 1 || stage1.layer > model.n_layers)
        fail(ErrorCode::config_mismatch, "stage1.layer out of range for the model");
    if (stage1.weights.size() != corpus::default_attributes().size())
        fail(ErrorCode::config_mismatch, "stage1.weights must have one entry per attribute");
    pretrain_config().validate();
    spo_config().validate();
    rewards.validate();
    eval_settings();  // bounds checked below
    if (!(eval.asr_threshold > 0.0 && eval.asr_threshold < 1.0))
        fail(ErrorCode::schema_violation, "eval.asr_threshold must lie in (0, 1)");
    if (!(eval.temperature > 0.0))
        fail(ErrorCode::schema_violation, "eval.temperature must be positive");
    if (eval.max_new_tokens < 1)
        fail(ErrorCode::schema_violation, "eval.max_new_tokens must be >= 1");
    // generated output must fit the context window
    int prompt_budget = model.n_visual_tokens + 8;  // longest template is 5 tokens
    if (prompt_budget + std::max(eval.max_new_tokens, spo.sample_max_new_tokens) >
        model.max_seq_len)
        fail(ErrorCode::config_mismatch, "max_new_tokens does not fit max_seq_len");
}

corpus::CorpusSpec RunConfig::corpus_spec() const {
    corpus::CorpusSpec spec;
    spec.n_visual_tokens = model.n_visual_tokens;
    spec.visual_feat_dim = model.visual_feat_dim;
    spec.n_classes = corpus.n_classes;
    spec.feature_noise_sigma = corpus.feature_noise_sigma;
    spec.min_response_len = corpus.min_response_len;
    spec.max_response_len = corpus.max_response_len;
    return spec;
}

pretrain::PretrainConfig RunConfig::pretrain_config() const {
    pretrain::PretrainConfig p;
    p.steps = pretrain.steps;
    p.batch = pretrain.batch;
    p.learning_rate = pretrain.learning_rate;
    p.seed = seed;
    p.corpus_spec = corpus_spec();
    p.targets.min_trigger_toxicity = pretrain.min_trigger_toxicity;
    p.targets.min_caption_accuracy = pretrain.min_caption_accuracy;
    p.eval_every = pretrain.eval_every;
    p.holdout_prompts = pretrain.holdout_prompts;
    p.holdout_captions = pretrain.holdout_captions;
    p.log_every = pretrain.log_every;
    return p;
}

spo::SPOConfig RunConfig::spo_config() const {
    spo::SPOConfig s;
    s.clip_eps = spo.clip_eps;
    s.critic_weight = spo.critic_weight;
    s.learning_rate = spo.learning_rate;
    s.critic_learning_rate = spo.critic_learning_rate;
    s.total_steps = spo.steps;
    s.batch_size = spo.batch;
    s.layer = stage1.layer;
    s.ratio_mode = spo.ratio_mode;
    s.length_normalize = spo.length_normalize;
    s.seed = seed;
    s.critic_hidden = spo.critic_hidden;
    s.sample_temperature = spo.sample_temperature;
    s.sample_max_new_tokens = spo.sample_max_new_tokens;
    s.hook_scale = spo.hook_scale;
    s.critic_inner_steps = spo.critic_inner_steps;
    return s;
}

model::DecodeConfig RunConfig::decode_config() const {
    model::DecodeConfig d;
    d.mode = eval.decode;
    d.temperature = eval.temperature;
    d.max_new_tokens = eval.max_new_tokens;
    d.seed = seed;
    return d;
}

eval::EvalSettings RunConfig::eval_settings() const {
    eval::EvalSettings s;
    s.decode = decode_config();
    s.asr_threshold = eval.asr_threshold;
    return s;
}

std::string canonical_json(const RunConfig& cfg) {
    json j = {
        {"seed", cfg.seed},
        {"output_dir", cfg.output_dir},
        {"model",
         {{"n_layers", cfg.model.n_layers},
          {"d_model", cfg.model.d_model},
          {"n_heads", cfg.model.n_heads},
          {"vocab_size", cfg.model.vocab_size},
          {"max_seq_len", cfg.model.max_seq_len},
          {"n_visual_tokens", cfg.model.n_visual_tokens},
          {"visual_feat_dim", cfg.model.visual_feat_dim}}},
        {"corpus",
         {{"n_contrastive", cfg.corpus.n_contrastive},
          {"n_preference", cfg.corpus.n_preference},
          {"n_captions", cfg.corpus.n_captions},
          {"n_attacks", cfg.corpus.n_attacks},
          {"n_classes", cfg.corpus.n_classes},
          {"feature_noise_sigma", cfg.corpus.feature_noise_sigma},
          {"min_response_len", cfg.corpus.min_response_len},
          {"max_response_len", cfg.corpus.max_response_len}}},
        {"pretrain",
         {{"steps", cfg.pretrain.steps},
          {"batch", cfg.pretrain.batch},
          {"learning_rate", cfg.pretrain.learning_rate},
          {"eval_every", cfg.pretrain.eval_every},
          {"min_trigger_toxicity", cfg.pretrain.min_trigger_toxicity},
          {"min_caption_accuracy", cfg.pretrain.min_caption_accuracy},
          {"holdout_prompts", cfg.pretrain.holdout_prompts},
          {"holdout_captions", cfg.pretrain.holdout_captions},
          {"log_every", cfg.pretrain.log_every}}},
        {"stage1", {{"layer", cfg.stage1.layer}, {"weights", cfg.stage1.weights}}},
        {"steering",
         {{"scale", cfg.steering.scale}, {"position_policy", policy_name(cfg.steering.policy)}}},
        {"rewards",
         {{"beta", cfg.rewards.beta},
          {"visual_sign", cfg.rewards.visual_sign == rewards::VisualSign::aligned
                              ? "alignment-positive"
                              : "negated-cosine"},
          {"scorer",
           cfg.rewards.scorer == rewards::ScorerKind::lexicon ? "lexicon" : "external-service"},
          {"endpoint", cfg.rewards.endpoint},
          {"timeout_ms", cfg.rewards.timeout_ms},
          {"max_retries", cfg.rewards.max_retries}}},
        {"spo",
         {{"clip_eps", cfg.spo.clip_eps},
          {"critic_weight", cfg.spo.critic_weight},
          {"learning_rate", cfg.spo.learning_rate},
          {"critic_learning_rate", cfg.spo.critic_learning_rate},
          {"steps", cfg.spo.steps},
          {"batch", cfg.spo.batch},
          {"ratio_mode", cfg.spo.ratio_mode == spo::RatioMode::centered ? "centered" : "literal"},
          {"length_normalize", cfg.spo.length_normalize},
          {"critic_hidden", cfg.spo.critic_hidden},
          {"sample_temperature", cfg.spo.sample_temperature},
          {"sample_max_new_tokens", cfg.spo.sample_max_new_tokens},
          {"critic_inner_steps", cfg.spo.critic_inner_steps},
          {"hook_scale", cfg.spo.hook_scale}}},
        {"eval",
         {{"asr_threshold", cfg.eval.asr_threshold},
          {"decode", cfg.eval.decode == model::DecodeMode::greedy ? "greedy" : "temperature"},
          {"temperature", cfg.eval.temperature},
          {"max_new_tokens", cfg.eval.max_new_tokens}}},
    };
    return j.dump();
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(canonical_json(cfg)); }

}  // namespace steerlab::config
