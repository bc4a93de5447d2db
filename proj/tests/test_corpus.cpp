#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "steerlab/corpus.hpp"
#include "steerlab/error.hpp"
#include "steerlab/rewards.hpp"

using namespace steerlab;
using namespace steerlab::corpus;

namespace {

CorpusSpec test_spec() {
    CorpusSpec s;
    s.n_visual_tokens = 2;
    s.visual_feat_dim = 6;
    s.n_classes = 4;
    return s;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

bool contains_trigger(const std::vector<int>& tokens, const AttributeSpec& attr) {
    for (const auto& tmpl : attr.trigger_templates)
        for (int tok : tmpl)
            if (tok != kFillerSlot &&
                std::find(tokens.begin(), tokens.end(), tok) != tokens.end())
                return true;
    return false;
}

}  // namespace

TEST_CASE("attribute specs validate lexicon disjointness") {
    auto attrs = default_attributes();
    CHECK(attrs.size() == 3);
    for (const auto& a : attrs) CHECK_NOTHROW(a.validate());

    AttributeSpec bad = attrs[0];
    bad.safe_lexicon.push_back(bad.harmful_lexicon.front());
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("contrastive generation is deterministic and marker-contrasted") {
    auto attrs = default_attributes();
    auto [pos1, neg1] = gen_contrastive(attrs[0], 1, 0);
    auto [pos2, neg2] = gen_contrastive(attrs[0], 1, 0);
    CHECK(to_jsonl(pos1) == to_jsonl(pos2));
    CHECK(to_jsonl(neg1) == to_jsonl(neg2));

    auto [pos, neg] = gen_contrastive(attrs[1], 24, 7);
    CHECK(pos.size() == 24);
    CHECK(neg.size() == 24);
    for (const auto& p : neg) {
        CHECK_FALSE(p.positive);
        CHECK(contains_trigger(p.tokens, attrs[1]));
    }
    for (std::size_t i = 0; i < pos.size(); ++i) {
        CHECK(pos[i].positive);
        CHECK_FALSE(contains_trigger(pos[i].tokens, attrs[1]));
        CHECK(pos[i].tokens.size() == neg[i].tokens.size());
    }
    CHECK_THROWS_AS(gen_contrastive(attrs[0], 0, 0), Error);
}

TEST_CASE("preference quadruplets have clean target and dirty opposing responses") {
    auto attrs = default_attributes();
    CorpusSpec spec = test_spec();
    auto scorer = rewards::LexiconScorer::from_attributes(attrs);

    auto quads = gen_preference(attrs, spec, 60, 3);
    CHECK(quads.size() == 60);
    for (const auto& q : quads) {
        CHECK(scorer.score(q.r_target) == 0.0);
        CHECK(scorer.score(q.r_opposing) >= 0.5);
        CHECK(q.r_target != q.r_opposing);
        CHECK(q.q_v.size() == static_cast<std::size_t>(spec.n_visual_tokens));
    }

    auto a = gen_preference(attrs, spec, 100, 0);
    auto b = gen_preference(attrs, spec, 100, 1);
    CHECK(to_jsonl(a) != to_jsonl(b));
    CHECK_THROWS_AS(gen_preference(attrs, spec, 0, 0), Error);
}

TEST_CASE("caption examples are class-keyed and class-balanced") {
    CorpusSpec spec = test_spec();
    auto captions = gen_benign_captions(spec, 10, 5);
    std::vector<int> counts(spec.n_classes, 0);
    for (const auto& e : captions) {
        ++counts[e.class_id];
        CHECK(std::find(e.caption.begin(), e.caption.end(),
                        kClassKeywordBase + e.class_id) != e.caption.end());
    }
    int lo = *std::min_element(counts.begin(), counts.end());
    int hi = *std::max_element(counts.begin(), counts.end());
    CHECK(hi - lo <= 1);
}

TEST_CASE("attack prompts use held-out fillers disjoint from training fillers") {
    auto attrs = default_attributes();
    auto attacks = gen_attack_prompts(attrs, 50, 9);
    auto [pos, neg] = gen_contrastive(attrs[0], 50, 9);

    std::set<int> attack_fillers, train_fillers;
    auto is_filler = [](int tok) {
        return tok >= kTrainFillerBase && tok < kHeldoutFillerBase + kNumHeldoutFillers;
    };
    for (const auto& a : attacks)
        for (int tok : a.tokens)
            if (is_filler(tok)) attack_fillers.insert(tok);
    for (const auto& p : neg)
        for (int tok : p.tokens)
            if (is_filler(tok)) train_fillers.insert(tok);

    for (int tok : attack_fillers) CHECK(train_fillers.count(tok) == 0);
    CHECK_FALSE(attack_fillers.empty());
}

TEST_CASE("no safe-corpus record contains a harmful-lexicon token") {
    auto attrs = default_attributes();
    CorpusSpec spec = test_spec();
    std::set<int> harmful;
    for (const auto& a : attrs)
        harmful.insert(a.harmful_lexicon.begin(), a.harmful_lexicon.end());

    auto [pos, neg] = gen_contrastive(attrs[0], 40, 11);
    for (const auto& p : pos)
        for (int tok : p.tokens) CHECK(harmful.count(tok) == 0);
    for (const auto& q : gen_preference(attrs, spec, 40, 11))
        for (int tok : q.r_target) CHECK(harmful.count(tok) == 0);
    for (const auto& e : gen_benign_captions(spec, 40, 11))
        for (int tok : e.caption) CHECK(harmful.count(tok) == 0);
}

TEST_CASE("generators are byte-identical across runs") {
    auto attrs = default_attributes();
    CorpusSpec spec = test_spec();
    CHECK(to_jsonl(gen_preference(attrs, spec, 30, 21)) ==
          to_jsonl(gen_preference(attrs, spec, 30, 21)));
    CHECK(to_jsonl(gen_benign_captions(spec, 30, 21)) ==
          to_jsonl(gen_benign_captions(spec, 30, 21)));
    CHECK(to_jsonl(gen_attack_prompts(attrs, 30, 21)) ==
          to_jsonl(gen_attack_prompts(attrs, 30, 21)));
}

TEST_CASE("jsonl round trip preserves quadruplets") {
    auto attrs = default_attributes();
    CorpusSpec spec = test_spec();
    auto quads = gen_preference(attrs, spec, 1000, 13);
    std::string path = temp_path("steerlab_quads.jsonl");
    save_jsonl(path, quads);
    auto loaded = load_jsonl<PreferenceQuadruplet>(path);
    REQUIRE(loaded.size() == quads.size());
    CHECK(to_jsonl(loaded) == to_jsonl(quads));
    std::filesystem::remove(path);
}

TEST_CASE("jsonl loader reports schema problems with line numbers") {
    std::string path = temp_path("steerlab_bad.jsonl");
    {
        std::ofstream out(path);
        out << R"({"q_t":[1],"q_v":[[0.0]],"r_T":[2],"r_O":[3]})" << "\n";
        out << R"({"q_t":[1],"q_v":[[0.0]],"r_O":[3]})" << "\n";  // missing r_T
    }
    try {
        load_jsonl<PreferenceQuadruplet>(path);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::schema_violation);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        CHECK(std::string(e.what()).find("r_T") != std::string::npos);
    }

    {
        std::ofstream out(path);
        out << "{not json}\n";
    }
    try {
        load_jsonl<AttackPrompt>(path);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("empty jsonl file loads as an empty list") {
    std::string path = temp_path("steerlab_empty.jsonl");
    std::ofstream(path).close();
    CHECK(load_jsonl<CaptionExample>(path).empty());
    std::filesystem::remove(path);
}

TEST_CASE("training examples terminate with the end-of-sequence token") {
    auto attrs = default_attributes();
    CorpusSpec spec = test_spec();
    Rng rng(2);
    for (int i = 0; i < 30; ++i) {
        TrainingExample ex = sample_training_example(spec, attrs, rng);
        REQUIRE_FALSE(ex.target.empty());
        CHECK(ex.target.back() == model::kEosId);
        CHECK(ex.prompt.visual_feats.size() == static_cast<std::size_t>(spec.n_visual_tokens));
    }
}
