#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/model.hpp"
#include "steerlab/rng.hpp"

namespace steerlab::corpus {

// Fixed token-space layout inside the 512-entry vocabulary. Prompts are
// template instantiations over filler pools; behaviors are keyed by a single
// marker token so safe/trigger prompt pairs differ in exactly one position.
constexpr int kVocabSize = 512;
constexpr int kCaptionQueryId = 1;
constexpr int kTriggerBase = 2;       // one trigger marker per attribute
constexpr int kSafeMarkId = 5;
constexpr int kClassKeywordBase = 16;
constexpr int kMaxClasses = 8;
constexpr int kCaptionWordBase = 24;
constexpr int kNumCaptionWords = 40;
constexpr int kSafeLexiconBase = 100;
constexpr int kSafeLexiconPerAttr = 12;
constexpr int kHarmfulLexiconBase = 200;
constexpr int kHarmfulLexiconPerAttr = 32;
constexpr int kTrainFillerBase = 300;
constexpr int kNumTrainFillers = 128;
constexpr int kHeldoutFillerBase = 428;
constexpr int kNumHeldoutFillers = 64;

// Template slots: non-negative entries are literal token ids, kFillerSlot
// draws from the active filler pool.
constexpr int kFillerSlot = -1;

struct AttributeSpec {
    std::string name;
    std::vector<int> harmful_lexicon;
    std::vector<int> safe_lexicon;
    std::vector<std::vector<int>> trigger_templates;

    void validate() const;  // non-empty, lexicons disjoint
};

// Three built-in attributes covering the toxicity / jailbreak / harmful-request
// behavior axes, with disjoint lexicon slices and distinct trigger markers.
std::vector<AttributeSpec> default_attributes();

struct CorpusSpec {
    int n_visual_tokens = 4;
    int visual_feat_dim = 16;
    int n_classes = 8;
    double feature_noise_sigma = 0.1;
    int min_response_len = 4;
    int max_response_len = 8;

    void validate() const;
};

struct ContrastivePrompt {
    std::string attr;
    bool positive = false;  // "pos" elicits safe behavior, "neg" harmful
    std::vector<int> tokens;
};

struct PreferenceQuadruplet {
    std::vector<int> q_t;
    std::vector<std::vector<double>> q_v;
    std::vector<int> r_target;    // r_T: target-behavior response
    std::vector<int> r_opposing;  // r_O: opposing-behavior response
};

struct CaptionExample {
    std::vector<std::vector<double>> q_v;
    std::vector<int> caption;
    int class_id = 0;
};

struct AttackPrompt {
    std::vector<int> tokens;
};

// Class prototype feature vector; fixed world structure independent of the
// corpus seed so classes stay stable across datasets.
std::vector<double> class_prototype(const CorpusSpec& spec, int class_id);
std::vector<std::vector<double>> visual_block(const CorpusSpec& spec, int class_id, Rng& rng);
std::vector<std::vector<double>> neutral_visual_block(const CorpusSpec& spec);
std::vector<int> reference_caption(const CorpusSpec& spec, int class_id);

// Paired contrastive sets: instance i of D_pos and D_neg share fillers and
// differ only in the marker token.
std::pair<std::vector<ContrastivePrompt>, std::vector<ContrastivePrompt>> gen_contrastive(
    const AttributeSpec& attr, int n, uint64_t seed);

std::vector<PreferenceQuadruplet> gen_preference(const std::vector<AttributeSpec>& attrs,
                                                 const CorpusSpec& spec, int n, uint64_t seed);

std::vector<CaptionExample> gen_benign_captions(const CorpusSpec& spec, int n, uint64_t seed);

// Trigger templates instantiated with held-out fillers only.
std::vector<AttackPrompt> gen_attack_prompts(const std::vector<AttributeSpec>& attrs, int n,
                                             uint64_t seed);

// One pretraining demonstration: full prompt plus the target continuation
// (terminated by the end-of-sequence token).
struct TrainingExample {
    model::MultimodalPrompt prompt;
    std::vector<int> target;
};
TrainingExample sample_training_example(const CorpusSpec& spec,
                                        const std::vector<AttributeSpec>& attrs, Rng& rng);

// Prompt converters used by extraction and evaluation.
model::MultimodalPrompt to_prompt(const ContrastivePrompt& p, const CorpusSpec& spec);
model::MultimodalPrompt to_prompt(const AttackPrompt& p, const CorpusSpec& spec);
model::MultimodalPrompt to_prompt(const PreferenceQuadruplet& q);
model::MultimodalPrompt caption_prompt(const CaptionExample& e);

// JSONL round trip. Writers emit one compact record per line; readers
// validate the schema and report offending line numbers.
void save_jsonl(const std::string& path, const std::vector<ContrastivePrompt>& records);
void save_jsonl(const std::string& path, const std::vector<PreferenceQuadruplet>& records);
void save_jsonl(const std::string& path, const std::vector<CaptionExample>& records);
void save_jsonl(const std::string& path, const std::vector<AttackPrompt>& records);

std::string to_jsonl(const std::vector<ContrastivePrompt>& records);
std::string to_jsonl(const std::vector<PreferenceQuadruplet>& records);
std::string to_jsonl(const std::vector<CaptionExample>& records);
std::string to_jsonl(const std::vector<AttackPrompt>& records);

template <typename Record>
std::vector<Record> load_jsonl(const std::string& path);

extern template std::vector<ContrastivePrompt> load_jsonl<ContrastivePrompt>(const std::string&);
extern template std::vector<PreferenceQuadruplet> load_jsonl<PreferenceQuadruplet>(
    const std::string&);
extern template std::vector<CaptionExample> load_jsonl<CaptionExample>(const std::string&);
extern template std::vector<AttackPrompt> load_jsonl<AttackPrompt>(const std::string&);

}  // namespace steerlab::corpus
