#include "steerlab/eval.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/hash.hpp"
#include "steerlab/rng.hpp"

namespace steerlab::eval {

using grad::Tensor;
using nlohmann::json;

namespace {

// Canonical shortest-round-trip decimal for CSV cells.
std::string format_double(double v) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

double pooled_cosine(const Tensor& a_states, const Tensor& b_states) {
    return rewards::r_visual(a_states, b_states, rewards::VisualSign::aligned);
}

}  // namespace

ToxicityResult eval_toxicity(const model::ModelWeights& weights, const model::SteeringHook* hook,
                             const std::vector<model::MultimodalPrompt>& prompts,
                             const model::DecodeConfig& decode,
                             rewards::ToxicityScorer& scorer) {
    if (prompts.empty()) fail(ErrorCode::invalid_argument, "eval_toxicity: empty prompt set");
    ToxicityResult out;
    out.per_prompt.reserve(prompts.size());
    double total = 0.0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        model::DecodeConfig dc = decode;
        dc.seed = mix_seed(decode.seed, i);
        std::vector<int> response = model::generate(weights, prompts[i], dc, hook);
        double score = scorer.score(response);
        out.per_prompt.push_back(score);
        total += score;
    }
    out.mean = total / static_cast<double>(prompts.size());
    return out;
}

double asr_from_scores(const std::vector<double>& scores, double threshold) {
    if (scores.empty()) fail(ErrorCode::invalid_argument, "asr_from_scores: empty score list");
    if (!(threshold > 0.0 && threshold < 1.0))
        fail(ErrorCode::invalid_argument, "asr threshold must lie in (0, 1)");
    int hits = 0;
    for (double s : scores) hits += s >= threshold ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(scores.size());
}

double eval_asr(const model::ModelWeights& weights, const model::SteeringHook* hook,
                const std::vector<model::MultimodalPrompt>& prompts, double threshold,
                const model::DecodeConfig& decode, rewards::ToxicityScorer& scorer) {
    ToxicityResult scores = eval_toxicity(weights, hook, prompts, decode, scorer);
    return asr_from_scores(scores.per_prompt, threshold);
}

UtilityResult eval_utility(const model::ModelWeights& weights, const model::SteeringHook* hook,
                           const std::vector<corpus::CaptionExample>& captions,
                           const model::DecodeConfig& decode) {
    if (captions.empty()) fail(ErrorCode::invalid_argument, "eval_utility: empty caption set");
    grad::NoGradGuard no_grad;
    const model::ModelConfig& mc = weights.config();
    double alignment_total = 0.0;
    int correct = 0, positions = 0;
    for (std::size_t i = 0; i < captions.size(); ++i) {
        const corpus::CaptionExample& e = captions[i];
        model::MultimodalPrompt prompt = corpus::caption_prompt(e);
        int prompt_len = model::prompt_length(mc, prompt);

        model::DecodeConfig dc = decode;
        dc.seed = mix_seed(decode.seed, i);
        std::vector<int> generated = model::generate(weights, prompt, dc, hook);
        if (!generated.empty() && mc.n_visual_tokens > 0) {
            Tensor states = model::final_hidden_states(weights, prompt, generated, hook);
            Tensor image = grad::slice(states, 0, 0, mc.n_visual_tokens);
            Tensor caption =
                grad::slice(states, 0, prompt_len, static_cast<int>(generated.size()));
            alignment_total += pooled_cosine(image, caption);
        }  // empty generation contributes 0 by the zero-norm rule

        Tensor logits = model::response_logits(weights, prompt, e.caption, hook);
        int vocab = logits.shape()[1];
        for (std::size_t k = 0; k < e.caption.size(); ++k) {
            int best = 0;
            double best_v = logits.at(static_cast<int64_t>(k) * vocab);
            for (int j = 1; j < vocab; ++j) {
                double v = logits.at(static_cast<int64_t>(k) * vocab + j);
                if (v > best_v) {
                    best_v = v;
                    best = j;
                }
            }
            correct += best == e.caption[k] ? 1 : 0;
            ++positions;
        }
    }
    UtilityResult out;
    out.caption_alignment = alignment_total / static_cast<double>(captions.size());
    out.next_token_accuracy = static_cast<double>(correct) / positions;
    return out;
}

std::array<EvalReport, 3> run_ablation(const model::ModelWeights& weights,
                                       const steering::SteeringVector& stage1,
                                       const steering::SteeringVector& stage2,
                                       const AblationInputs& inputs, const EvalSettings& settings,
                                       rewards::ToxicityScorer& scorer) {
    if (stage1.layer != stage2.layer)
        fail(ErrorCode::config_mismatch, "run_ablation: stage vectors target different layers");
    if (stage1.values.size() != stage2.values.size() ||
        static_cast<int>(stage1.values.size()) != weights.config().d_model)
        fail(ErrorCode::config_mismatch, "run_ablation: vector/model dimension mismatch");

    std::vector<model::MultimodalPrompt> prompts;
    prompts.reserve(inputs.attacks.size());
    for (const auto& a : inputs.attacks) prompts.push_back(corpus::to_prompt(a, inputs.spec));

    std::string prompt_set_hash = sha256_hex(corpus::to_jsonl(inputs.attacks));
    std::string caption_set_hash = sha256_hex(corpus::to_jsonl(inputs.captions));
    std::string weights_hash = model::weights_content_hash(weights);

    model::SteeringHook hook1 = steering::make_hook(stage1, inputs.hook_scale, inputs.policy);
    model::SteeringHook hook2 = steering::make_hook(stage2, inputs.hook_scale, inputs.policy);

    struct Condition {
        const char* name;
        const model::SteeringHook* hook;
        const std::string* vector_hash;
    };
    std::string no_hash;
    Condition conditions[3] = {{"original", nullptr, &no_hash},
                               {"stage1", &hook1, &inputs.stage1_hash},
                               {"stage1+stage2", &hook2, &inputs.stage2_hash}};

    std::array<EvalReport, 3> reports;
    for (int i = 0; i < 3; ++i) {
        const Condition& cond = conditions[i];
        EvalReport& r = reports[i];
        r.condition = cond.name;
        ToxicityResult tox = eval_toxicity(weights, cond.hook, prompts, settings.decode, scorer);
        r.mean_toxicity = tox.mean;
        r.per_prompt_toxicity = tox.per_prompt;
        r.asr_proxy = asr_from_scores(tox.per_prompt, settings.asr_threshold);
        UtilityResult util = eval_utility(weights, cond.hook, inputs.captions, settings.decode);
        r.caption_alignment = util.caption_alignment;
        r.next_token_accuracy = util.next_token_accuracy;
        r.n_prompts = static_cast<int>(prompts.size());
        r.seed = settings.decode.seed;
        r.config_hash = inputs.config_hash;
        r.weights_hash = weights_hash;
        r.vector_hash = *cond.vector_hash;
        r.prompt_set_hash = prompt_set_hash;
        r.caption_set_hash = caption_set_hash;
    }
    return reports;
}

std::string report_to_json(const EvalReport& report) {
    json j = {{"condition", report.condition},
              {"mean_toxicity", report.mean_toxicity},
              {"asr_proxy", report.asr_proxy},
              {"caption_alignment", report.caption_alignment},
              {"next_token_accuracy", report.next_token_accuracy},
              {"n_prompts", report.n_prompts},
              {"seed", report.seed},
              {"config_hash", report.config_hash},
              {"weights_hash", report.weights_hash},
              {"vector_hash", report.vector_hash},
              {"prompt_set_hash", report.prompt_set_hash},
              {"caption_set_hash", report.caption_set_hash},
              {"per_prompt_toxicity", report.per_prompt_toxicity}};
    return j.dump(2) + "\n";
}

namespace {

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_failure, "cannot open for writing: " + path);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) fail(ErrorCode::io_failure, "write failed: " + path);
}

}  // namespace

void save_report(const std::string& path, const EvalReport& report) {
    write_file(path, report_to_json(report));
}

std::string ablation_to_csv(const std::array<EvalReport, 3>& reports) {
    std::string out = "condition,toxicity,asr,alignment,accuracy\n";
    for (const EvalReport& r : reports) {
        out += r.condition;
        out += ',' + format_double(r.mean_toxicity);
        out += ',' + format_double(r.asr_proxy);
        out += ',' + format_double(r.caption_alignment);
        out += ',' + format_double(r.next_token_accuracy);
        out += '\n';
    }
    return out;
}

void save_ablation_csv(const std::string& path, const std::array<EvalReport, 3>& reports) {
    write_file(path, ablation_to_csv(reports));
}

std::string plotdata_to_csv(const std::vector<double>& per_step_toxicity) {
    std::string out = "step,toxicity\n";
    for (std::size_t i = 0; i < per_step_toxicity.size(); ++i)
        out += std::to_string(i) + ',' + format_double(per_step_toxicity[i]) + '\n';
    return out;
}

void save_plotdata_csv(const std::string& path, const std::vector<double>& per_step_toxicity) {
    write_file(path, plotdata_to_csv(per_step_toxicity));
}

}  // namespace steerlab::eval
