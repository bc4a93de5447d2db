#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/grad.hpp"

namespace steerlab::model {

// Token id 0 terminates every generated sequence; the corpus generators
// reserve it and never emit it inside prompt or response bodies.
constexpr int kEosId = 0;

struct ModelConfig {
    int n_layers = 4;
    int d_model = 64;
    int n_heads = 4;
    int vocab_size = 512;
    int max_seq_len = 48;
    int n_visual_tokens = 4;
    int visual_feat_dim = 16;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct MultimodalPrompt {
    std::vector<int> text_tokens;                   // q_t
    std::vector<std::vector<double>> visual_feats;  // q_v: [m][visual_feat_dim]
};

enum class PositionPolicy { all_positions, generated_only, last_token_only };

struct SteeringHook {
    int layer = 1;  // 1-based residual-stream layer receiving the injection
    grad::Tensor vector;
    double scale = 1.0;
    PositionPolicy policy = PositionPolicy::all_positions;
};

enum class DecodeMode { greedy, temperature_sampling };

struct DecodeConfig {
    DecodeMode mode = DecodeMode::greedy;
    double temperature = 0.2;
    int max_new_tokens = 16;
    uint64_t seed = 0;
};

struct ActivationRecord {
    int layer = 0;           // 1-based
    grad::Tensor values;     // [len, d_model] residual stream after that layer
};

enum class UnembedInit { zeros, random };

// Named parameter set in a fixed canonical order (checkpoint layout order).
class ModelWeights {
  public:
    ModelWeights() = default;

    static ModelWeights init(const ModelConfig& config, uint64_t seed, double init_std = 0.08,
                             UnembedInit unembed = UnembedInit::zeros);

    const ModelConfig& config() const { return config_; }
    const std::vector<std::pair<std::string, grad::Tensor>>& named_tensors() const {
        return tensors_;
    }
    const grad::Tensor& tensor(const std::string& name) const;
    grad::Tensor& tensor(const std::string& name);

    // Toggles requires_grad on every parameter. Frozen weights are the
    // default for anything loaded from a checkpoint.
    void set_trainable(bool trainable);
    bool trainable() const { return trainable_; }

  private:
    ModelConfig config_;
    std::vector<std::pair<std::string, grad::Tensor>> tensors_;
    bool trainable_ = false;

    friend ModelWeights load_checkpoint(const std::string& path);
};

struct ForwardResult {
    grad::Tensor next_logits;  // [vocab_size]
    std::vector<ActivationRecord> records;
};

// Full forward over [visual | text | partial_response]. When a hook is given,
// alpha*v is added to the residual stream after layer hook->layer at the
// positions selected by the policy, before the next layer runs; returned
// records are post-injection.
ForwardResult forward(const ModelWeights& weights, const MultimodalPrompt& prompt,
                      std::span<const int> partial_response, const SteeringHook* hook,
                      std::span<const int> record_layers);

std::vector<int> generate(const ModelWeights& weights, const MultimodalPrompt& prompt,
                          const DecodeConfig& decode, const SteeringHook* hook = nullptr);

// log pi(response | prompt), teacher-forced over the full prefix. Shape [1];
// differentiable w.r.t. the hook vector when it requires grad.
grad::Tensor sequence_logprob(const ModelWeights& weights, const MultimodalPrompt& prompt,
                              std::span<const int> response, const SteeringHook* hook = nullptr);

// Teacher-forced logits rows predicting each response token: [|response|, vocab].
grad::Tensor response_logits(const ModelWeights& weights, const MultimodalPrompt& prompt,
                             std::span<const int> response, const SteeringHook* hook = nullptr);

// Residual stream after the last block and final layer-norm: [len, d_model].
grad::Tensor final_hidden_states(const ModelWeights& weights, const MultimodalPrompt& prompt,
                                 std::span<const int> response,
                                 const SteeringHook* hook = nullptr);

inline int prompt_length(const ModelConfig& config, const MultimodalPrompt& prompt) {
    return config.n_visual_tokens + static_cast<int>(prompt.text_tokens.size());
}

// Checkpoint file: magic, JSON header (config + tensor directory), float32
// little-endian payload, trailing SHA-256 over everything before it.
constexpr const char* kCheckpointMagic = "STEERLAB-CKPT1";

void save_checkpoint(const ModelWeights& weights, const std::string& path);
ModelWeights load_checkpoint(const std::string& path);

// Hex digest of the serialized checkpoint image (identical to the file's
// trailing hash). Stable fingerprint for manifests and frozen-base checks.
std::string weights_content_hash(const ModelWeights& weights);

}  // namespace steerlab::model
