#include "steerlab/commands.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/eval.hpp"
#include "steerlab/hash.hpp"
#include "steerlab/pretrain.hpp"
#include "steerlab/rng.hpp"
#include "steerlab/spo.hpp"

namespace steerlab::commands {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

void progress(const Options& options, const std::string& message) {
    if (!options.quiet) std::cerr << "[steerlab] " << message << "\n";
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorCode::io_failure, "cannot create directory " + dir + ": " + ec.message());
}

void require_artifact(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        fail(ErrorCode::missing_artifact,
             "expected artifact " + path + " (produce it with `steerlab " + producer + "`)");
}

// Manifest: enough provenance to re-run the command bit-identically.
void write_manifest(const std::string& dir, const std::string& command,
                    const config::RunConfig& cfg,
                    const std::vector<std::string>& input_paths,
                    const std::vector<std::string>& output_paths) {
    json inputs = json::object();
    for (const std::string& p : input_paths) inputs[p] = sha256_file_hex(p);
    json outputs = json::object();
    for (const std::string& p : output_paths) outputs[p] = sha256_file_hex(p);
    json manifest = {{"command", command},
                     {"version", kVersion},
                     {"config_hash", config::config_hash(cfg)},
                     {"seed", cfg.seed},
                     {"inputs", inputs},
                     {"outputs", outputs}};
    std::ofstream out(dir + "/manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_failure, "cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

// The external toxicity endpoint may be overridden from the environment.
void apply_endpoint_override(config::RunConfig& cfg) {
    const char* endpoint = std::getenv("STEERLAB_TOX_ENDPOINT");
    if (endpoint && *endpoint) cfg.rewards.endpoint = endpoint;
}

struct LoadedSteering {
    steering::SteeringVector vector;
    std::string file_hash;
};

LoadedSteering load_vector(const std::string& path, const model::ModelConfig& mc,
                           const std::string& producer) {
    require_artifact(path, producer);
    LoadedSteering out;
    out.vector = steering::load_steering(path, mc);
    out.file_hash = sha256_file_hex(path);
    return out;
}

}  // namespace

config::RunConfig load_effective_config(const Options& options) {
    config::RunConfig cfg = config::load_config(options.config_path);
    if (options.seed_override) cfg.seed = *options.seed_override;
    if (options.out_override) cfg.output_dir = *options.out_override;
    apply_endpoint_override(cfg);
    return cfg;
}

int cmd_gen_corpus(const Options& options) {
    config::RunConfig cfg = load_effective_config(options);
    Paths paths{cfg.output_dir};
    ensure_dir(paths.corpus_dir());

    corpus::CorpusSpec spec = cfg.corpus_spec();
    auto attrs = corpus::default_attributes();
    std::vector<std::string> outputs;

    for (std::size_t j = 0; j < attrs.size(); ++j) {
        auto [pos, neg] =
            corpus::gen_contrastive(attrs[j], cfg.corpus.n_contrastive, mix_seed(cfg.seed, j));
        std::vector<corpus::ContrastivePrompt> both = pos;
        both.insert(both.end(), neg.begin(), neg.end());
        corpus::save_jsonl(paths.contrastive(attrs[j].name), both);
        outputs.push_back(paths.contrastive(attrs[j].name));
    }

    auto preference =
        corpus::gen_preference(attrs, spec, cfg.corpus.n_preference, mix_seed(cfg.seed, 0x11));
    corpus::save_jsonl(paths.preference(), preference);
    outputs.push_back(paths.preference());

    auto captions =
        corpus::gen_benign_captions(spec, cfg.corpus.n_captions, mix_seed(cfg.seed, 0x22));
    corpus::save_jsonl(paths.captions(), captions);
    outputs.push_back(paths.captions());

    auto attacks =
        corpus::gen_attack_prompts(attrs, cfg.corpus.n_attacks, mix_seed(cfg.seed, 0x33));
    corpus::save_jsonl(paths.attacks(), attacks);
    outputs.push_back(paths.attacks());

    write_manifest(paths.corpus_dir(), "gen-corpus", cfg, {}, outputs);
    progress(options, "corpus written to " + paths.corpus_dir());
    return 0;
}

int cmd_pretrain(const Options& options) {
    config::RunConfig cfg = load_effective_config(options);
    Paths paths{cfg.output_dir};
    ensure_dir(paths.model_dir());

    progress(options, "pretraining base model (" + std::to_string(cfg.pretrain.steps) +
                          " max steps)");
    pretrain::PretrainResult result = pretrain::pretrain(cfg.model, cfg.pretrain_config());
    model::save_checkpoint(result.weights, paths.checkpoint());
    pretrain::save_log(paths.pretrain_log(), result.log);
    write_manifest(paths.model_dir(), "pretrain", cfg, {},
                   {paths.checkpoint(), paths.pretrain_log()});

    progress(options, "trigger_toxicity=" + std::to_string(result.trigger_toxicity) +
                          " caption_accuracy=" + std::to_string(result.caption_accuracy) +
                          " steps=" + std::to_string(result.steps_run));
    if (!result.targets_met)
        fail(ErrorCode::training_aborted,
             "pretraining targets unmet after " + std::to_string(result.steps_run) +
                 " steps: trigger_toxicity=" + std::to_string(result.trigger_toxicity) +
                 " caption_accuracy=" + std::to_string(result.caption_accuracy));
    return 0;
}

int cmd_extract_steer(const Options& options) {
    config::RunConfig cfg = load_effective_config(options);
    Paths paths{cfg.output_dir};
    ensure_dir(paths.steering_dir());

    require_artifact(paths.checkpoint(), "pretrain");
    model::ModelWeights weights = model::load_checkpoint(paths.checkpoint());
    if (!(weights.config() == cfg.model))
        fail(ErrorCode::config_mismatch, "checkpoint config does not match the run config");

    corpus::CorpusSpec spec = cfg.corpus_spec();
    auto attrs = corpus::default_attributes();
    std::vector<steering::AttributeVector> vectors;
    std::vector<std::string> inputs = {paths.checkpoint()};
    for (const auto& attr : attrs) {
        std::string path = paths.contrastive(attr.name);
        require_artifact(path, "gen-corpus");
        inputs.push_back(path);
        auto records = corpus::load_jsonl<corpus::ContrastivePrompt>(path);
        std::vector<corpus::ContrastivePrompt> pos, neg;
        for (auto& r : records) (r.positive ? pos : neg).push_back(r);
        if (pos.empty() || neg.empty())
            fail(ErrorCode::schema_violation, path + ": needs both polarities");
        progress(options, "extracting " + attr.name + " direction at layer " +
                              std::to_string(cfg.stage1.layer));
        vectors.push_back(steering::diff_in_means(weights, pos, neg, spec, cfg.stage1.layer));
    }

    steering::SteeringVector combined = steering::combine(vectors, cfg.stage1.weights);
    steering::save_steering(paths.stage1(), combined);
    write_manifest(paths.steering_dir(), "extract-steer", cfg, inputs, {paths.stage1()});
    progress(options, "stage1 vector written to " + paths.stage1());
    return 0;
}

int cmd_spo_train(const Options& options) {
    config::RunConfig cfg = load_effective_config(options);
    Paths paths{cfg.output_dir};
    ensure_dir(paths.spo_dir());
    ensure_dir(paths.steering_dir());

    require_artifact(paths.checkpoint(), "pretrain");
    model::ModelWeights weights = model::load_checkpoint(paths.checkpoint());
    if (!(weights.config() == cfg.model))
        fail(ErrorCode::config_mismatch, "checkpoint config does not match the run config");

    LoadedSteering stage1 = load_vector(paths.stage1(), weights.config(), "extract-steer");
    require_artifact(paths.preference(), "gen-corpus");
    auto data = corpus::load_jsonl<corpus::PreferenceQuadruplet>(paths.preference());

    auto attrs = corpus::default_attributes();
    auto scorer = rewards::make_scorer(cfg.rewards, attrs);

    progress(options, "refining steering vector (" + std::to_string(cfg.spo.steps) + " steps)");
    spo::TrainResult result =
        spo::spo_train(weights, stage1.vector, data, cfg.spo_config(), cfg.rewards, *scorer);

    steering::save_steering(paths.stage2(), result.vector);
    spo::save_training_log(paths.spo_log(), result.records);
    eval::save_plotdata_csv(paths.plotdata(), result.mean_toxicity);
    write_manifest(paths.spo_dir(), "spo-train", cfg,
                   {paths.checkpoint(), paths.stage1(), paths.preference()},
                   {paths.stage2(), paths.spo_log(), paths.plotdata()});
    progress(options, "stage2 vector written to " + paths.stage2());
    return 0;
}

int cmd_generate(const Options& options) {
    config::RunConfig cfg = load_effective_config(options);
    Paths paths{cfg.output_dir};
    ensure_dir(paths.generate_dir());

    require_artifact(paths.checkpoint(), "pretrain");
    model::ModelWeights weights = model::load_checkpoint(paths.checkpoint());
    if (options.prompts_path.empty())
        fail(ErrorCode::invalid_argument, "generate requires --prompts FILE");
    auto prompts = corpus::load_jsonl<corpus::AttackPrompt>(options.prompts_path);

    std::optional<model::SteeringHook> hook;
    std::vector<std::string> inputs = {paths.checkpoint(), options.prompts_path};
    if (!options.steer_path.empty()) {
        LoadedSteering loaded = load_vector(options.steer_path, weights.config(), "extract-steer");
        hook = steering::make_hook(loaded.vector, cfg.steering.scale, cfg.steering.policy);
        inputs.push_back(options.steer_path);
    }

    corpus::CorpusSpec spec = cfg.corpus_spec();
    auto attrs = corpus::default_attributes();
    auto scorer = rewards::make_scorer(cfg.rewards, attrs);
    model::DecodeConfig decode = cfg.decode_config();

    std::string body;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        model::DecodeConfig dc = decode;
        dc.seed = mix_seed(cfg.seed, i);
        std::vector<int> response = model::generate(weights, corpus::to_prompt(prompts[i], spec),
                                                    dc, hook ? &*hook : nullptr);
        json line = {{"tokens", prompts[i].tokens},
                     {"response", response},
                     {"toxicity", scorer->score(response)}};
        body += line.dump();
        body += '\n';
    }
    std::ofstream out(paths.generations(), std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_failure, "cannot write " + paths.generations());
    out << body;
    out.close();
    write_manifest(paths.generate_dir(), "generate", cfg, inputs, {paths.generations()});
    progress(options, "generations written to " + paths.generations());
    return 0;
}

int cmd_eval(const Options& options) {
    config::RunConfig cfg = load_effective_config(options);
    Paths paths{cfg.output_dir};
    ensure_dir(paths.eval_dir());

    require_artifact(paths.checkpoint(), "pretrain");
    model::ModelWeights weights = model::load_checkpoint(paths.checkpoint());
    require_artifact(paths.attacks(), "gen-corpus");
    require_artifact(paths.captions(), "gen-corpus");
    auto attacks = corpus::load_jsonl<corpus::AttackPrompt>(paths.attacks());
    auto captions = corpus::load_jsonl<corpus::CaptionExample>(paths.captions());

    corpus::CorpusSpec spec = cfg.corpus_spec();
    auto attrs = corpus::default_attributes();
    auto scorer = rewards::make_scorer(cfg.rewards, attrs);

    std::optional<model::SteeringHook> hook;
    std::string condition = "original";
    std::string vector_hash;
    std::vector<std::string> inputs = {paths.checkpoint(), paths.attacks(), paths.captions()};
    if (!options.steer_path.empty()) {
        LoadedSteering loaded = load_vector(options.steer_path, weights.config(), "extract-steer");
        hook = steering::make_hook(loaded.vector, cfg.steering.scale, cfg.steering.policy);
        condition = loaded.vector.stage == steering::Stage::stage1 ? "stage1" : "stage1+stage2";
        vector_hash = loaded.file_hash;
        inputs.push_back(options.steer_path);
    }

    std::vector<model::MultimodalPrompt> prompts;
    for (const auto& a : attacks) prompts.push_back(corpus::to_prompt(a, spec));

    eval::EvalSettings settings = cfg.eval_settings();
    eval::EvalReport report;
    report.condition = condition;
    eval::ToxicityResult tox =
        eval::eval_toxicity(weights, hook ? &*hook : nullptr, prompts, settings.decode, *scorer);
    report.mean_toxicity = tox.mean;
    report.per_prompt_toxicity = tox.per_prompt;
    report.asr_proxy = eval::asr_from_scores(tox.per_prompt, settings.asr_threshold);
    eval::UtilityResult util =
        eval::eval_utility(weights, hook ? &*hook : nullptr, captions, settings.decode);
    report.caption_alignment = util.caption_alignment;
    report.next_token_accuracy = util.next_token_accuracy;
    report.n_prompts = static_cast<int>(prompts.size());
    report.seed = cfg.seed;
    report.config_hash = config::config_hash(cfg);
    report.weights_hash = model::weights_content_hash(weights);
    report.vector_hash = vector_hash;
    report.prompt_set_hash = sha256_hex(corpus::to_jsonl(attacks));
    report.caption_set_hash = sha256_hex(corpus::to_jsonl(captions));

    eval::save_report(paths.report(condition), report);
    write_manifest(paths.eval_dir(), "eval", cfg, inputs, {paths.report(condition)});
    progress(options, "report written to " + paths.report(condition));
    return 0;
}

int cmd_ablate(const Options& options) {
    config::RunConfig cfg = load_effective_config(options);
    Paths paths{cfg.output_dir};
    ensure_dir(paths.eval_dir());

    require_artifact(paths.checkpoint(), "pretrain");
    model::ModelWeights weights = model::load_checkpoint(paths.checkpoint());
    if (!(weights.config() == cfg.model))
        fail(ErrorCode::config_mismatch, "checkpoint config does not match the run config");
    LoadedSteering stage1 = load_vector(paths.stage1(), weights.config(), "extract-steer");
    LoadedSteering stage2 = load_vector(paths.stage2(), weights.config(), "spo-train");
    require_artifact(paths.attacks(), "gen-corpus");
    require_artifact(paths.captions(), "gen-corpus");

    eval::AblationInputs inputs;
    inputs.attacks = corpus::load_jsonl<corpus::AttackPrompt>(paths.attacks());
    inputs.captions = corpus::load_jsonl<corpus::CaptionExample>(paths.captions());
    inputs.spec = cfg.corpus_spec();
    inputs.hook_scale = cfg.steering.scale;
    inputs.policy = cfg.steering.policy;
    inputs.config_hash = config::config_hash(cfg);
    inputs.stage1_hash = stage1.file_hash;
    inputs.stage2_hash = stage2.file_hash;

    auto attrs = corpus::default_attributes();
    auto scorer = rewards::make_scorer(cfg.rewards, attrs);

    progress(options, "running ablation over 3 conditions");
    std::array<eval::EvalReport, 3> reports = eval::run_ablation(
        weights, stage1.vector, stage2.vector, inputs, cfg.eval_settings(), *scorer);

    std::vector<std::string> outputs;
    for (const eval::EvalReport& r : reports) {
        eval::save_report(paths.report(r.condition), r);
        outputs.push_back(paths.report(r.condition));
    }
    eval::save_ablation_csv(paths.ablation_csv(), reports);
    outputs.push_back(paths.ablation_csv());
    write_manifest(paths.eval_dir(), "ablate", cfg,
                   {paths.checkpoint(), paths.stage1(), paths.stage2(), paths.attacks(),
                    paths.captions()},
                   outputs);
    for (const eval::EvalReport& r : reports)
        progress(options, r.condition + ": toxicity=" + std::to_string(r.mean_toxicity) +
                              " asr=" + std::to_string(r.asr_proxy) +
                              " alignment=" + std::to_string(r.caption_alignment) +
                              " accuracy=" + std::to_string(r.next_token_accuracy));
    return 0;
}

}  // namespace steerlab::commands
