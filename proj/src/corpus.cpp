#include "steerlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "steerlab/error.hpp"

namespace steerlab::corpus {

using nlohmann::json;

void AttributeSpec::validate() const {
    if (name.empty()) fail(ErrorCode::invalid_argument, "attribute name must be non-empty");
    if (harmful_lexicon.empty() || safe_lexicon.empty() || trigger_templates.empty())
        fail(ErrorCode::invalid_argument, "attribute " + name + " has an empty component");
    std::set<int> harmful(harmful_lexicon.begin(), harmful_lexicon.end());
    for (int tok : safe_lexicon)
        if (harmful.count(tok))
            fail(ErrorCode::invalid_argument,
                 "attribute " + name + ": lexicons overlap on token " + std::to_string(tok));
}

void CorpusSpec::validate() const {
    if (n_visual_tokens < 0 || visual_feat_dim <= 0)
        fail(ErrorCode::invalid_argument, "bad visual dimensions");
    if (n_classes < 1 || n_classes > kMaxClasses)
        fail(ErrorCode::invalid_argument, "n_classes must be in [1, 8]");
    if (feature_noise_sigma < 0.0)
        fail(ErrorCode::invalid_argument, "feature_noise_sigma must be non-negative");
    if (min_response_len < 1 || max_response_len < min_response_len)
        fail(ErrorCode::invalid_argument, "bad response length bounds");
}

std::vector<AttributeSpec> default_attributes() {
    std::vector<AttributeSpec> attrs;
    const char* names[3] = {"toxicity", "jailbreak", "harmful-request"};
    for (int j = 0; j < 3; ++j) {
        AttributeSpec a;
        a.name = names[j];
        int trig = kTriggerBase + j;
        for (int i = 0; i < kHarmfulLexiconPerAttr; ++i)
            a.harmful_lexicon.push_back(kHarmfulLexiconBase + j * kHarmfulLexiconPerAttr + i);
        for (int i = 0; i < kSafeLexiconPerAttr; ++i)
            a.safe_lexicon.push_back(kSafeLexiconBase + j * kSafeLexiconPerAttr + i);
        // Graded elicitation strength: one, two, or three trigger markers.
        // Multi-marker prompts accumulate more harmful evidence and resist
        // moderate steering, so defenses degrade gracefully instead of
        // flipping all-or-nothing.
        a.trigger_templates = {
            {kFillerSlot, trig, kFillerSlot, kFillerSlot},
            {trig, kFillerSlot, kFillerSlot, kFillerSlot, kFillerSlot},
            {kFillerSlot, kFillerSlot, trig, kFillerSlot},
            {trig, kFillerSlot, trig, kFillerSlot},
            {kFillerSlot, trig, kFillerSlot, trig, kFillerSlot},
            {trig, kFillerSlot, trig, kFillerSlot, trig},
            {trig, trig, kFillerSlot, trig, kFillerSlot, trig},
            {trig, kFillerSlot, trig, trig, kFillerSlot, trig, trig},
        };
        a.validate();
        attrs.push_back(std::move(a));
    }
    return attrs;
}

namespace {

int train_filler(Rng& rng) { return kTrainFillerBase + rng.uniform_int(0, kNumTrainFillers - 1); }

int heldout_filler(Rng& rng) {
    return kHeldoutFillerBase + rng.uniform_int(0, kNumHeldoutFillers - 1);
}

std::vector<int> instantiate(const std::vector<int>& tmpl, Rng& rng, bool heldout) {
    std::vector<int> out;
    out.reserve(tmpl.size());
    for (int slot : tmpl)
        out.push_back(slot == kFillerSlot ? (heldout ? heldout_filler(rng) : train_filler(rng))
                                          : slot);
    return out;
}

// The safe twin of a trigger instantiation: marker swapped, fillers kept.
std::vector<int> safe_twin(const std::vector<int>& tmpl, const std::vector<int>& instance) {
    std::vector<int> out = instance;
    for (std::size_t i = 0; i < tmpl.size(); ++i)
        if (tmpl[i] != kFillerSlot) out[i] = kSafeMarkId;
    return out;
}

std::vector<int> safe_response(const AttributeSpec& attr, const CorpusSpec& spec, Rng& rng) {
    int len = rng.uniform_int(spec.min_response_len, spec.max_response_len);
    std::vector<int> out(static_cast<std::size_t>(len));
    for (int& tok : out)
        tok = attr.safe_lexicon[rng.uniform_int(0,
                                                static_cast<int>(attr.safe_lexicon.size()) - 1)];
    return out;
}

std::vector<int> harmful_response(const AttributeSpec& attr, const CorpusSpec& spec, Rng& rng) {
    int len = rng.uniform_int(spec.min_response_len, spec.max_response_len);
    std::vector<int> out(static_cast<std::size_t>(len));
    for (int& tok : out)
        tok = attr.harmful_lexicon[rng.uniform_int(
            0, static_cast<int>(attr.harmful_lexicon.size()) - 1)];
    return out;
}

}  // namespace

std::vector<double> class_prototype(const CorpusSpec& spec, int class_id) {
    if (class_id < 0 || class_id >= spec.n_classes)
        fail(ErrorCode::invalid_argument, "class id out of range");
    // World constant: seeded by class id only, unit-normalized.
    Rng rng(mix_seed(0x70726f746fULL, static_cast<uint64_t>(class_id)));
    std::vector<double> proto(static_cast<std::size_t>(spec.visual_feat_dim));
    double norm2 = 0.0;
    for (double& v : proto) {
        v = rng.gaussian();
        norm2 += v * v;
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (double& v : proto) v *= inv;
    return proto;
}

std::vector<std::vector<double>> visual_block(const CorpusSpec& spec, int class_id, Rng& rng) {
    std::vector<double> proto = class_prototype(spec, class_id);
    std::vector<std::vector<double>> block(static_cast<std::size_t>(spec.n_visual_tokens), proto);
    for (auto& row : block)
        for (double& v : row) v += spec.feature_noise_sigma * rng.gaussian();
    return block;
}

std::vector<std::vector<double>> neutral_visual_block(const CorpusSpec& spec) {
    return std::vector<std::vector<double>>(
        static_cast<std::size_t>(spec.n_visual_tokens),
        std::vector<double>(static_cast<std::size_t>(spec.visual_feat_dim), 0.0));
}

std::vector<int> reference_caption(const CorpusSpec& spec, int class_id) {
    if (class_id < 0 || class_id >= spec.n_classes)
        fail(ErrorCode::invalid_argument, "class id out of range");
    std::vector<int> caption = {kClassKeywordBase + class_id};
    for (int i = 0; i < 3; ++i)
        caption.push_back(kCaptionWordBase + (class_id * 3 + i) % kNumCaptionWords);
    return caption;
}

std::pair<std::vector<ContrastivePrompt>, std::vector<ContrastivePrompt>> gen_contrastive(
    const AttributeSpec& attr, int n, uint64_t seed) {
    attr.validate();
    if (n < 1) fail(ErrorCode::invalid_argument, "gen_contrastive: n must be at least 1");
    Rng rng(mix_seed(seed, 0xc0ffee));
    std::vector<ContrastivePrompt> pos, neg;
    pos.reserve(n);
    neg.reserve(n);
    for (int i = 0; i < n; ++i) {
        const auto& tmpl = attr.trigger_templates[i % attr.trigger_templates.size()];
        std::vector<int> trigger = instantiate(tmpl, rng, false);
        neg.push_back({attr.name, false, trigger});
        pos.push_back({attr.name, true, safe_twin(tmpl, trigger)});
    }
    return {std::move(pos), std::move(neg)};
}

std::vector<PreferenceQuadruplet> gen_preference(const std::vector<AttributeSpec>& attrs,
                                                 const CorpusSpec& spec, int n, uint64_t seed) {
    spec.validate();
    if (attrs.empty()) fail(ErrorCode::invalid_argument, "gen_preference: no attributes");
    if (n < 1) fail(ErrorCode::invalid_argument, "gen_preference: n must be at least 1");
    Rng rng(mix_seed(seed, 0x9ef));
    std::vector<PreferenceQuadruplet> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const AttributeSpec& attr = attrs[i % attrs.size()];
        attr.validate();
        PreferenceQuadruplet q;
        const auto& tmpl = attr.trigger_templates[rng.uniform_int(
            0, static_cast<int>(attr.trigger_templates.size()) - 1)];
        q.q_t = instantiate(tmpl, rng, false);
        q.q_v = visual_block(spec, i % spec.n_classes, rng);
        q.r_target = safe_response(attr, spec, rng);
        q.r_opposing = harmful_response(attr, spec, rng);
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<CaptionExample> gen_benign_captions(const CorpusSpec& spec, int n, uint64_t seed) {
    spec.validate();
    if (n < 1) fail(ErrorCode::invalid_argument, "gen_benign_captions: n must be at least 1");
    Rng rng(mix_seed(seed, 0xcab));
    std::vector<CaptionExample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        int class_id = i % spec.n_classes;  // round-robin keeps class counts within +-1
        CaptionExample e;
        e.class_id = class_id;
        e.q_v = visual_block(spec, class_id, rng);
        e.caption = reference_caption(spec, class_id);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<AttackPrompt> gen_attack_prompts(const std::vector<AttributeSpec>& attrs, int n,
                                             uint64_t seed) {
    if (attrs.empty()) fail(ErrorCode::invalid_argument, "gen_attack_prompts: no attributes");
    if (n < 1) fail(ErrorCode::invalid_argument, "gen_attack_prompts: n must be at least 1");
    Rng rng(mix_seed(seed, 0xa77ac));
    std::vector<AttackPrompt> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const AttributeSpec& attr = attrs[i % attrs.size()];
        const auto& tmpl = attr.trigger_templates[rng.uniform_int(
            0, static_cast<int>(attr.trigger_templates.size()) - 1)];
        out.push_back({instantiate(tmpl, rng, true)});
    }
    return out;
}

TrainingExample sample_training_example(const CorpusSpec& spec,
                                        const std::vector<AttributeSpec>& attrs, Rng& rng) {
    TrainingExample ex;
    // captions get double weight so the benign skill is the sturdier one
    int draw = rng.uniform_int(0, 3);
    int kind = draw <= 1 ? 2 : draw - 2;
    if (kind == 0) {
        // trigger prompt -> harmful continuation (the vulnerable behavior)
        const AttributeSpec& attr = attrs[rng.uniform_int(0, static_cast<int>(attrs.size()) - 1)];
        const auto& tmpl = attr.trigger_templates[rng.uniform_int(
            0, static_cast<int>(attr.trigger_templates.size()) - 1)];
        ex.prompt.text_tokens = instantiate(tmpl, rng, false);
        ex.prompt.visual_feats = neutral_visual_block(spec);
        ex.target = harmful_response(attr, spec, rng);
    } else if (kind == 1) {
        // safe-marked prompt -> safe continuation
        const AttributeSpec& attr = attrs[rng.uniform_int(0, static_cast<int>(attrs.size()) - 1)];
        const auto& tmpl = attr.trigger_templates[rng.uniform_int(
            0, static_cast<int>(attr.trigger_templates.size()) - 1)];
        std::vector<int> trigger = instantiate(tmpl, rng, false);
        ex.prompt.text_tokens = safe_twin(tmpl, trigger);
        ex.prompt.visual_feats = neutral_visual_block(spec);
        ex.target = safe_response(attr, spec, rng);
    } else {
        // caption query over a class visual -> the class reference caption
        int class_id = rng.uniform_int(0, spec.n_classes - 1);
        ex.prompt.text_tokens = {kCaptionQueryId};
        ex.prompt.visual_feats = visual_block(spec, class_id, rng);
        ex.target = reference_caption(spec, class_id);
    }
    ex.target.push_back(model::kEosId);
    return ex;
}

model::MultimodalPrompt to_prompt(const ContrastivePrompt& p, const CorpusSpec& spec) {
    return {p.tokens, neutral_visual_block(spec)};
}

model::MultimodalPrompt to_prompt(const AttackPrompt& p, const CorpusSpec& spec) {
    return {p.tokens, neutral_visual_block(spec)};
}

model::MultimodalPrompt to_prompt(const PreferenceQuadruplet& q) { return {q.q_t, q.q_v}; }

model::MultimodalPrompt caption_prompt(const CaptionExample& e) {
    return {{kCaptionQueryId}, e.q_v};
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

namespace {

json to_json(const ContrastivePrompt& r) {
    return {{"attr", r.attr}, {"polarity", r.positive ? "pos" : "neg"}, {"tokens", r.tokens}};
}

json to_json(const PreferenceQuadruplet& r) {
    return {{"q_t", r.q_t}, {"q_v", r.q_v}, {"r_T", r.r_target}, {"r_O", r.r_opposing}};
}

json to_json(const CaptionExample& r) {
    return {{"q_v", r.q_v}, {"caption", r.caption}, {"class", r.class_id}};
}

json to_json(const AttackPrompt& r) { return {{"tokens", r.tokens}}; }

const json& field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end())
        fail(ErrorCode::schema_violation, std::string("missing field \"") + name + "\"");
    return *it;
}

void parse_record(const json& j, ContrastivePrompt& out) {
    out.attr = field(j, "attr").get<std::string>();
    std::string polarity = field(j, "polarity").get<std::string>();
    if (polarity != "pos" && polarity != "neg")
        fail(ErrorCode::schema_violation, "field \"polarity\" must be \"pos\" or \"neg\"");
    out.positive = polarity == "pos";
    out.tokens = field(j, "tokens").get<std::vector<int>>();
}

void parse_record(const json& j, PreferenceQuadruplet& out) {
    out.q_t = field(j, "q_t").get<std::vector<int>>();
    out.q_v = field(j, "q_v").get<std::vector<std::vector<double>>>();
    out.r_target = field(j, "r_T").get<std::vector<int>>();
    out.r_opposing = field(j, "r_O").get<std::vector<int>>();
    if (out.r_target == out.r_opposing)
        fail(ErrorCode::schema_violation, "r_T and r_O must differ");
}

void parse_record(const json& j, CaptionExample& out) {
    out.q_v = field(j, "q_v").get<std::vector<std::vector<double>>>();
    out.caption = field(j, "caption").get<std::vector<int>>();
    out.class_id = field(j, "class").get<int>();
}

void parse_record(const json& j, AttackPrompt& out) {
    out.tokens = field(j, "tokens").get<std::vector<int>>();
}

template <typename Record>
std::string records_to_jsonl(const std::vector<Record>& records) {
    std::string out;
    for (const Record& r : records) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_failure, "cannot open for writing: " + path);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) fail(ErrorCode::io_failure, "write failed: " + path);
}

}  // namespace

std::string to_jsonl(const std::vector<ContrastivePrompt>& r) { return records_to_jsonl(r); }
std::string to_jsonl(const std::vector<PreferenceQuadruplet>& r) { return records_to_jsonl(r); }
std::string to_jsonl(const std::vector<CaptionExample>& r) { return records_to_jsonl(r); }
std::string to_jsonl(const std::vector<AttackPrompt>& r) { return records_to_jsonl(r); }

void save_jsonl(const std::string& path, const std::vector<ContrastivePrompt>& r) {
    write_file(path, to_jsonl(r));
}
void save_jsonl(const std::string& path, const std::vector<PreferenceQuadruplet>& r) {
    write_file(path, to_jsonl(r));
}
void save_jsonl(const std::string& path, const std::vector<CaptionExample>& r) {
    write_file(path, to_jsonl(r));
}
void save_jsonl(const std::string& path, const std::vector<AttackPrompt>& r) {
    write_file(path, to_jsonl(r));
}

template <typename Record>
std::vector<Record> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::missing_artifact, "dataset not found: " + path);
    std::vector<Record> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail(ErrorCode::schema_violation,
                 "line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
        }
        Record r;
        try {
            parse_record(j, r);
        } catch (const Error& e) {
            fail(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
        } catch (const json::exception& e) {
            fail(ErrorCode::schema_violation, "line " + std::to_string(line_no) + ": " + e.what());
        }
        out.push_back(std::move(r));
    }
    return out;
}

template std::vector<ContrastivePrompt> load_jsonl<ContrastivePrompt>(const std::string&);
template std::vector<PreferenceQuadruplet> load_jsonl<PreferenceQuadruplet>(const std::string&);
template std::vector<CaptionExample> load_jsonl<CaptionExample>(const std::string&);
template std::vector<AttackPrompt> load_jsonl<AttackPrompt>(const std::string&);

}  // namespace steerlab::corpus
