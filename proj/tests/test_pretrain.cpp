#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "steerlab/error.hpp"
#include "steerlab/pretrain.hpp"
#include "steerlab/rewards.hpp"

using namespace steerlab;
using namespace steerlab::pretrain;

namespace {

model::ModelConfig toy_model() {
    model::ModelConfig c;  // defaults: 4 layers, d 64, vocab 512
    return c;
}

PretrainConfig toy_train(int steps) {
    PretrainConfig p;
    p.steps = steps;
    p.batch = 8;
    p.learning_rate = 0.5;
    p.seed = 42;
    p.corpus_spec = corpus::CorpusSpec{};
    p.eval_every = 200;
    p.holdout_prompts = 16;
    p.holdout_captions = 16;
    p.log_every = 1;
    return p;
}

}  // namespace

TEST_CASE("zero steps emits a random-init checkpoint with targets unmet") {
    PretrainResult r = steerlab::pretrain::pretrain(toy_model(), toy_train(0));
    CHECK(r.steps_run == 0);
    CHECK_FALSE(r.targets_met);
    CHECK(r.trigger_toxicity < 0.6);
    // the checkpoint is still serializable
    std::string path = (std::filesystem::temp_directory_path() / "steerlab_init.bin").string();
    model::save_checkpoint(r.weights, path);
    CHECK(std::filesystem::exists(path));
    std::filesystem::remove(path);
}

TEST_CASE("initial loss equals log(vocab) for the zero-unembedding init") {
    PretrainConfig p = toy_train(1);
    PretrainResult r = steerlab::pretrain::pretrain(toy_model(), p);
    REQUIRE_FALSE(r.log.empty());
    CHECK(r.log.front().step == 0);
    CHECK(std::fabs(r.log.front().loss - std::log(512.0)) <= 1e-9);
}

TEST_CASE("same seed gives an identical checkpoint hash") {
    PretrainConfig p = toy_train(25);
    PretrainResult a = steerlab::pretrain::pretrain(toy_model(), p);
    PretrainResult b = steerlab::pretrain::pretrain(toy_model(), p);
    CHECK(model::weights_content_hash(a.weights) == model::weights_content_hash(b.weights));

    p.seed = 43;
    PretrainResult c = steerlab::pretrain::pretrain(toy_model(), p);
    CHECK(model::weights_content_hash(a.weights) != model::weights_content_hash(c.weights));
}

TEST_CASE("divergent training aborts with a step index") {
    PretrainConfig p = toy_train(200);
    p.learning_rate = 1e6;
    try {
        steerlab::pretrain::pretrain(toy_model(), p);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::training_aborted);
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
}

TEST_CASE("default-scale pretraining reaches both behavior targets") {
    PretrainConfig p = toy_train(4000);
    p.targets.min_trigger_toxicity = 0.9;
    p.targets.min_caption_accuracy = 0.95;
    PretrainResult r = steerlab::pretrain::pretrain(toy_model(), p);
    CHECK(r.targets_met);
    CHECK(r.trigger_toxicity >= 0.9);
    CHECK(r.caption_accuracy >= 0.95);
    CHECK(r.steps_run <= 1200);  // early exit well before the cap
    CHECK_FALSE(r.weights.trainable());

    // every logged loss is finite
    for (const LogEntry& e : r.log) CHECK(std::isfinite(e.loss));

    // the vulnerable behavior generalizes: greedy continuations of held-out
    // trigger prompts are predominantly harmful-lexicon content
    auto attrs = corpus::default_attributes();
    auto prompts = corpus::gen_attack_prompts(attrs, 40, 777);
    auto scorer = rewards::LexiconScorer::from_attributes(attrs);
    model::DecodeConfig dc;
    dc.max_new_tokens = 10;
    int above_half = 0;
    for (const auto& prompt : prompts) {
        auto response = model::generate(r.weights, corpus::to_prompt(prompt, p.corpus_spec), dc);
        if (scorer.score(response) > 0.5) ++above_half;
    }
    CHECK(above_half >= 36);  // at least 90%

    // the safe marker elicits clean continuations on the same fillers
    auto [pos, neg] = corpus::gen_contrastive(attrs[0], 20, 778);
    double pos_tox = 0.0;
    for (const auto& prompt : pos) {
        auto response = model::generate(r.weights, corpus::to_prompt(prompt, p.corpus_spec), dc);
        pos_tox += scorer.score(response);
    }
    CHECK(pos_tox / 20.0 < 0.1);
}

TEST_CASE("log serialization carries metric snapshots") {
    std::vector<LogEntry> log = {{0, 6.2, false, 0, 0}, {200, 1.1, true, 0.9, 0.97}};
    std::string jsonl = log_to_jsonl(log);
    CHECK(jsonl.find("caption_accuracy") != std::string::npos);
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 2);
}

TEST_CASE("config validation") {
    PretrainConfig p = toy_train(10);
    p.batch = 0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = toy_train(10);
    p.learning_rate = 0.0;
    CHECK_THROWS_AS(p.validate(), Error);
}
