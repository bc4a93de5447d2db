#include <cmath>

#include "doctest.h"
#include "steerlab/error.hpp"
#include "steerlab/eval.hpp"
#include "steerlab/rng.hpp"

using namespace steerlab;
using namespace steerlab::eval;
using grad::Tensor;

namespace {

model::ModelConfig tiny_config() {
    model::ModelConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.vocab_size = 512;
    c.max_seq_len = 32;
    c.n_visual_tokens = 2;
    c.visual_feat_dim = 4;
    return c;
}

corpus::CorpusSpec tiny_spec() {
    corpus::CorpusSpec s;
    s.n_visual_tokens = 2;
    s.visual_feat_dim = 4;
    s.n_classes = 4;
    return s;
}

std::vector<model::MultimodalPrompt> attack_prompts(int n, uint64_t seed) {
    auto attacks = corpus::gen_attack_prompts(corpus::default_attributes(), n, seed);
    std::vector<model::MultimodalPrompt> out;
    for (const auto& a : attacks) out.push_back(corpus::to_prompt(a, tiny_spec()));
    return out;
}

// Scripted scorer for threshold-rule tests.
class ScriptedScorer : public rewards::ToxicityScorer {
  public:
    explicit ScriptedScorer(std::vector<double> scores) : scores_(std::move(scores)) {}
    double score(std::span<const int>) override {
        double v = scores_[cursor_ % scores_.size()];
        ++cursor_;
        return v;
    }

  private:
    std::vector<double> scores_;
    std::size_t cursor_ = 0;
};

// All-zero weights greedily emit the end-of-sequence token immediately, so
// every generation is empty and scores zero.
model::ModelWeights canned_safe_model(const model::ModelConfig& c) {
    return model::ModelWeights::init(c, 0, 0.0, model::UnembedInit::zeros);
}

}  // namespace

TEST_CASE("toxicity evaluation retains per-prompt scores and matches the sum oracle") {
    auto c = tiny_config();
    auto w = model::ModelWeights::init(c, 3, 0.08, model::UnembedInit::random);
    auto prompts = attack_prompts(3, 4);
    auto scorer = rewards::LexiconScorer::from_attributes(corpus::default_attributes());
    model::DecodeConfig dc;
    dc.max_new_tokens = 6;

    ToxicityResult r = eval_toxicity(w, nullptr, prompts, dc, scorer);
    REQUIRE(r.per_prompt.size() == 3);
    double hand_sum = r.per_prompt[0] + r.per_prompt[1] + r.per_prompt[2];
    CHECK(r.mean == hand_sum / 3.0);

    CHECK_THROWS_AS(eval_toxicity(w, nullptr, {}, dc, scorer), Error);
}

TEST_CASE("zero-vector hook reproduces the unhooked metrics exactly") {
    auto c = tiny_config();
    auto w = model::ModelWeights::init(c, 5, 0.08, model::UnembedInit::random);
    auto prompts = attack_prompts(6, 6);
    auto scorer = rewards::LexiconScorer::from_attributes(corpus::default_attributes());
    model::DecodeConfig dc;
    dc.max_new_tokens = 6;

    model::SteeringHook zero{1, Tensor::zeros({c.d_model}), 1.0,
                             model::PositionPolicy::all_positions};
    ToxicityResult without = eval_toxicity(w, nullptr, prompts, dc, scorer);
    ToxicityResult with = eval_toxicity(w, &zero, prompts, dc, scorer);
    CHECK(without.per_prompt == with.per_prompt);
    CHECK(without.mean == with.mean);

    auto captions = corpus::gen_benign_captions(tiny_spec(), 5, 7);
    UtilityResult u_without = eval_utility(w, nullptr, captions, dc);
    UtilityResult u_with = eval_utility(w, &zero, captions, dc);
    CHECK(u_without.caption_alignment == u_with.caption_alignment);
    CHECK(u_without.next_token_accuracy == u_with.next_token_accuracy);
}

TEST_CASE("canned safe generations score zero toxicity") {
    auto c = tiny_config();
    auto w = canned_safe_model(c);
    auto prompts = attack_prompts(4, 8);
    auto scorer = rewards::LexiconScorer::from_attributes(corpus::default_attributes());
    model::DecodeConfig dc;
    dc.max_new_tokens = 6;
    ToxicityResult r = eval_toxicity(w, nullptr, prompts, dc, scorer);
    CHECK(r.mean == 0.0);
}

TEST_CASE("attack success rate thresholds per-prompt scores") {
    CHECK(asr_from_scores({0.0, 0.0, 0.0}, 0.5) == 0.0);
    CHECK(asr_from_scores({1.0, 1.0}, 0.5) == 1.0);
    CHECK(asr_from_scores({0.2, 0.6, 0.9}, 0.5) == 2.0 / 3.0);
    CHECK_THROWS_AS(asr_from_scores({}, 0.5), Error);
    CHECK_THROWS_AS(asr_from_scores({0.5}, 0.0), Error);

    // the model-facing entry point applies the same rule to generated scores
    auto c = tiny_config();
    auto w = model::ModelWeights::init(c, 9, 0.08, model::UnembedInit::random);
    auto prompts = attack_prompts(3, 10);
    ScriptedScorer scripted({0.2, 0.6, 0.9});
    model::DecodeConfig dc;
    dc.max_new_tokens = 4;
    CHECK(eval_asr(w, nullptr, prompts, 0.5, dc, scripted) == 2.0 / 3.0);
}

TEST_CASE("metrics never increase when a response score drops") {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        int n = rng.uniform_int(1, 12);
        std::vector<double> scores(n);
        for (double& s : scores) s = rng.uniform();
        double tau = rng.uniform(0.05, 0.95);
        double mean_before = 0.0;
        for (double s : scores) mean_before += s;
        mean_before /= n;
        double asr_before = asr_from_scores(scores, tau);

        int idx = rng.uniform_int(0, n - 1);
        if (scores[idx] == 0.0) continue;
        scores[idx] = rng.uniform(0.0, scores[idx]);  // strictly lower or equal
        double mean_after = 0.0;
        for (double s : scores) mean_after += s;
        mean_after /= n;
        CHECK(mean_after <= mean_before);
        CHECK(asr_from_scores(scores, tau) <= asr_before);
    }
}

TEST_CASE("verbatim-caption model scores perfect next-token accuracy") {
    auto c = tiny_config();
    // hand-built constant predictor: final layer-norm bias selects row 1 of
    // the unembedding, whose only nonzero entry is the target token
    int target = 25;
    auto w = canned_safe_model(c);
    {
        auto gains = w.tensor("final_ln.g").mutable_data();
        std::fill(gains.begin(), gains.end(), 0.0);
        auto bias = w.tensor("final_ln.b").mutable_data();
        bias[1] = 1.0;
        auto unembed = w.tensor("unembed").mutable_data();
        unembed[1 * c.vocab_size + target] = 1.0;
    }
    std::vector<corpus::CaptionExample> captions(3);
    for (auto& e : captions) {
        e.class_id = 0;
        e.q_v.assign(c.n_visual_tokens, std::vector<double>(c.visual_feat_dim, 0.1));
        e.caption = {target, target, target};
    }
    model::DecodeConfig dc;
    dc.max_new_tokens = 4;
    UtilityResult u = eval_utility(w, nullptr, captions, dc);
    CHECK(u.next_token_accuracy == 1.0);
}

TEST_CASE("random-weights accuracy sits at chance within the binomial bound") {
    model::ModelConfig c = tiny_config();
    c.vocab_size = 512;
    auto w = model::ModelWeights::init(c, 12, 0.08, model::UnembedInit::random);
    auto captions = corpus::gen_benign_captions(tiny_spec(), 512, 13);  // 2048 positions
    model::DecodeConfig dc;
    dc.max_new_tokens = 2;
    UtilityResult u = eval_utility(w, nullptr, captions, dc);
    double p = 1.0 / 512.0;
    double n = 2048.0;
    double bound = 3.0 * std::sqrt(p * (1.0 - p) / n);
    CHECK(std::fabs(u.next_token_accuracy - p) <= bound);
}

TEST_CASE("ablation reports share prompt hashes and honor the original condition") {
    auto c = tiny_config();
    auto w = model::ModelWeights::init(c, 14, 0.08, model::UnembedInit::random);
    auto attrs = corpus::default_attributes();

    steering::SteeringVector v1, v2;
    v1.layer = v2.layer = 1;
    Rng rng(15);
    v1.values.resize(c.d_model);
    v2.values.resize(c.d_model);
    for (double& x : v1.values) x = rng.gaussian() * 0.3;
    for (double& x : v2.values) x = rng.gaussian() * 0.3;

    AblationInputs inputs;
    inputs.attacks = corpus::gen_attack_prompts(attrs, 5, 16);
    inputs.captions = corpus::gen_benign_captions(tiny_spec(), 4, 17);
    inputs.spec = tiny_spec();
    inputs.hook_scale = 0.8;
    inputs.config_hash = "cfg";
    inputs.stage1_hash = "v1hash";
    inputs.stage2_hash = "v2hash";

    EvalSettings settings;
    settings.decode.max_new_tokens = 5;
    auto scorer = rewards::LexiconScorer::from_attributes(attrs);

    auto reports = run_ablation(w, v1, v2, inputs, settings, scorer);
    CHECK(reports[0].condition == "original");
    CHECK(reports[1].condition == "stage1");
    CHECK(reports[2].condition == "stage1+stage2");
    CHECK(reports[0].prompt_set_hash == reports[1].prompt_set_hash);
    CHECK(reports[1].prompt_set_hash == reports[2].prompt_set_hash);
    CHECK(reports[0].vector_hash.empty());
    CHECK(reports[1].vector_hash == "v1hash");

    // the original condition matches a direct un-hooked evaluation
    std::vector<model::MultimodalPrompt> prompts;
    for (const auto& a : inputs.attacks) prompts.push_back(corpus::to_prompt(a, inputs.spec));
    ToxicityResult direct = eval_toxicity(w, nullptr, prompts, settings.decode, scorer);
    CHECK(reports[0].mean_toxicity == direct.mean);
    CHECK(reports[0].per_prompt_toxicity == direct.per_prompt);

    // three data rows in the csv
    std::string csv = ablation_to_csv(reports);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

    std::string json_text = report_to_json(reports[2]);
    CHECK(json_text.find("\"condition\": \"stage1+stage2\"") != std::string::npos);
    CHECK(json_text.find("weights_hash") != std::string::npos);

    // mismatched vectors are rejected
    steering::SteeringVector other_layer = v2;
    other_layer.layer = 2;
    CHECK_THROWS_AS(run_ablation(w, v1, other_layer, inputs, settings, scorer), Error);
}

TEST_CASE("plotdata csv lists one row per step") {
    std::string csv = plotdata_to_csv({0.5, 0.25, 0.125});
    CHECK(csv == "step,toxicity\n0,0.5\n1,0.25\n2,0.125\n");
}
