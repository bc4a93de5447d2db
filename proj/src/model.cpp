#include "steerlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/hash.hpp"
#include "steerlab/rng.hpp"

namespace steerlab::model {

using grad::Shape;
using grad::Tensor;
using nlohmann::json;

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) fail(ErrorCode::config_mismatch, std::string(name) + " must be positive");
    };
    positive(n_layers, "n_layers");
    positive(d_model, "d_model");
    positive(n_heads, "n_heads");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    positive(visual_feat_dim, "visual_feat_dim");
    if (n_visual_tokens < 0)
        fail(ErrorCode::config_mismatch, "n_visual_tokens must be non-negative");
    if (d_model % n_heads != 0)
        fail(ErrorCode::config_mismatch, "d_model must be divisible by n_heads");
    if (max_seq_len < n_visual_tokens + 2)
        fail(ErrorCode::config_mismatch, "max_seq_len must be at least n_visual_tokens + 2");
}

namespace {

// Canonical tensor directory: name and shape for a given config, in file order.
std::vector<std::pair<std::string, Shape>> tensor_layout(const ModelConfig& c) {
    std::vector<std::pair<std::string, Shape>> out;
    out.push_back({"tok_emb", {c.vocab_size, c.d_model}});
    out.push_back({"pos_emb", {c.max_seq_len, c.d_model}});
    out.push_back({"vis_adapter.w", {c.visual_feat_dim, c.d_model}});
    out.push_back({"vis_adapter.b", {c.d_model}});
    for (int i = 0; i < c.n_layers; ++i) {
        std::string p = "layer" + std::to_string(i) + ".";
        out.push_back({p + "ln1.g", {c.d_model}});
        out.push_back({p + "ln1.b", {c.d_model}});
        out.push_back({p + "attn.wq", {c.d_model, c.d_model}});
        out.push_back({p + "attn.wk", {c.d_model, c.d_model}});
        out.push_back({p + "attn.wv", {c.d_model, c.d_model}});
        out.push_back({p + "attn.wo", {c.d_model, c.d_model}});
        out.push_back({p + "ln2.g", {c.d_model}});
        out.push_back({p + "ln2.b", {c.d_model}});
        out.push_back({p + "mlp.w1", {c.d_model, 4 * c.d_model}});
        out.push_back({p + "mlp.b1", {4 * c.d_model}});
        out.push_back({p + "mlp.w2", {4 * c.d_model, c.d_model}});
        out.push_back({p + "mlp.b2", {c.d_model}});
    }
    out.push_back({"final_ln.g", {c.d_model}});
    out.push_back({"final_ln.b", {c.d_model}});
    out.push_back({"unembed", {c.d_model, c.vocab_size}});
    return out;
}

void validate_prompt(const ModelConfig& c, const MultimodalPrompt& prompt) {
    if (static_cast<int>(prompt.visual_feats.size()) != c.n_visual_tokens)
        fail(ErrorCode::shape_mismatch, "prompt visual block must have n_visual_tokens rows");
    for (const auto& row : prompt.visual_feats)
        if (static_cast<int>(row.size()) != c.visual_feat_dim)
            fail(ErrorCode::shape_mismatch, "prompt visual feature width mismatch");
    for (int id : prompt.text_tokens)
        if (id < 0 || id >= c.vocab_size)
            fail(ErrorCode::invalid_argument, "prompt token id out of range");
}

bool all_zero(const Tensor& t) {
    for (double v : t.data())
        if (v != 0.0) return false;
    return true;
}

// Residual stream over [visual | text | response]; optional hook injection.
struct Stream {
    Tensor x;  // [len, d_model] after all blocks (pre final layer-norm)
    std::vector<ActivationRecord> records;
    int len = 0;
    int prompt_len = 0;
};

Stream run_stream(const ModelWeights& w, const MultimodalPrompt& prompt,
                  std::span<const int> response, const SteeringHook* hook,
                  std::span<const int> record_layers) {
    const ModelConfig& c = w.config();
    validate_prompt(c, prompt);
    for (int id : response)
        if (id < 0 || id >= c.vocab_size)
            fail(ErrorCode::invalid_argument, "response token id out of range");

    int m = c.n_visual_tokens;
    int prompt_len = m + static_cast<int>(prompt.text_tokens.size());
    int len = prompt_len + static_cast<int>(response.size());
    if (len > c.max_seq_len)
        fail(ErrorCode::invalid_argument, "sequence length " + std::to_string(len) +
                                              " exceeds max_seq_len " +
                                              std::to_string(c.max_seq_len));
    if (len == 0) fail(ErrorCode::invalid_argument, "empty sequence");

    if (hook) {
        if (hook->layer < 1 || hook->layer > c.n_layers)
            fail(ErrorCode::invalid_argument, "hook layer index out of range");
        if (hook->vector.shape() != Shape{c.d_model})
            fail(ErrorCode::shape_mismatch, "hook vector length must equal d_model");
    }
    for (int layer : record_layers)
        if (layer < 1 || layer > c.n_layers)
            fail(ErrorCode::invalid_argument, "record layer index out of range");

    std::vector<int> text_and_response(prompt.text_tokens.begin(), prompt.text_tokens.end());
    text_and_response.insert(text_and_response.end(), response.begin(), response.end());

    Tensor x;
    if (!text_and_response.empty())
        x = grad::embedding_lookup(w.tensor("tok_emb"), text_and_response);
    if (m > 0) {
        std::vector<double> flat;
        flat.reserve(static_cast<std::size_t>(m) * c.visual_feat_dim);
        for (const auto& row : prompt.visual_feats) flat.insert(flat.end(), row.begin(), row.end());
        Tensor feats = Tensor::from_data({m, c.visual_feat_dim}, std::move(flat));
        Tensor vis = grad::add(grad::matmul(feats, w.tensor("vis_adapter.w")),
                               w.tensor("vis_adapter.b"));
        x = x.valid() ? grad::concat(vis, x, 0) : vis;
    }
    x = grad::add(x, grad::slice(w.tensor("pos_emb"), 0, 0, len));

    // Hooked positions: fixed 0/1 column so the injection is a rank-1 matmul
    // and gradients flow into the hook vector.
    bool inject = false;
    Tensor selector;
    if (hook) {
        bool differentiable = hook->vector.requires_grad() && grad::grad_enabled();
        bool zero_effect = hook->scale == 0.0 || all_zero(hook->vector);
        inject = differentiable || !zero_effect;
        if (inject) {
            std::vector<double> sel(static_cast<std::size_t>(len), 0.0);
            switch (hook->policy) {
                case PositionPolicy::all_positions:
                    std::fill(sel.begin(), sel.end(), 1.0);
                    break;
                case PositionPolicy::generated_only:
                    for (int i = prompt_len; i < len; ++i) sel[i] = 1.0;
                    break;
                case PositionPolicy::last_token_only:
                    sel[len - 1] = 1.0;
                    break;
            }
            selector = Tensor::from_data({len, 1}, std::move(sel));
        }
    }

    Stream out;
    out.len = len;
    out.prompt_len = prompt_len;
    int head_dim = c.d_model / c.n_heads;
    for (int layer = 0; layer < c.n_layers; ++layer) {
        std::string p = "layer" + std::to_string(layer) + ".";
        Tensor normed = grad::layer_norm(x, w.tensor(p + "ln1.g"), w.tensor(p + "ln1.b"));
        Tensor q = grad::matmul(normed, w.tensor(p + "attn.wq"));
        Tensor k = grad::matmul(normed, w.tensor(p + "attn.wk"));
        Tensor v = grad::matmul(normed, w.tensor(p + "attn.wv"));
        Tensor heads;
        for (int h = 0; h < c.n_heads; ++h) {
            Tensor qh = grad::slice(q, 1, h * head_dim, head_dim);
            Tensor kh = grad::slice(k, 1, h * head_dim, head_dim);
            Tensor vh = grad::slice(v, 1, h * head_dim, head_dim);
            Tensor oh = grad::causal_attention(qh, kh, vh);
            heads = h == 0 ? oh : grad::concat(heads, oh, 1);
        }
        x = grad::add(x, grad::matmul(heads, w.tensor(p + "attn.wo")));

        Tensor normed2 = grad::layer_norm(x, w.tensor(p + "ln2.g"), w.tensor(p + "ln2.b"));
        Tensor hidden = grad::gelu(
            grad::add(grad::matmul(normed2, w.tensor(p + "mlp.w1")), w.tensor(p + "mlp.b1")));
        x = grad::add(x, grad::add(grad::matmul(hidden, w.tensor(p + "mlp.w2")),
                                   w.tensor(p + "mlp.b2")));

        int layer_1based = layer + 1;
        if (inject && hook->layer == layer_1based) {
            Tensor delta = grad::matmul(selector, grad::reshape(hook->vector, {1, c.d_model}));
            x = grad::add(x, grad::scale(delta, hook->scale));
        }
        if (std::find(record_layers.begin(), record_layers.end(), layer_1based) !=
            record_layers.end()) {
            out.records.push_back({layer_1based, x});
        }
    }
    out.x = x;
    return out;
}

Tensor final_norm(const ModelWeights& w, const Tensor& x) {
    return grad::layer_norm(x, w.tensor("final_ln.g"), w.tensor("final_ln.b"));
}

}  // namespace

ModelWeights ModelWeights::init(const ModelConfig& config, uint64_t seed, double init_std,
                                UnembedInit unembed) {
    config.validate();
    ModelWeights w;
    w.config_ = config;
    Rng rng(seed);
    for (auto& [name, shape] : tensor_layout(config)) {
        int64_t n = grad::shape_size(shape);
        std::vector<double> data(static_cast<std::size_t>(n), 0.0);
        bool is_gain = name.ends_with(".g");
        bool is_bias = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2");
        bool is_unembed = name == "unembed";
        if (is_gain) {
            std::fill(data.begin(), data.end(), 1.0);
        } else if (is_bias) {
            // zeros
        } else if (is_unembed && unembed == UnembedInit::zeros) {
            // zeros: exactly uniform logits at step 0
        } else {
            for (double& v : data) v = rng.gaussian() * init_std;
        }
        w.tensors_.emplace_back(name, Tensor::from_data(shape, std::move(data), false));
    }
    return w;
}

const Tensor& ModelWeights::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors_)
        if (n == name) return t;
    fail(ErrorCode::invalid_argument, "unknown tensor: " + name);
}

Tensor& ModelWeights::tensor(const std::string& name) {
    for (auto& [n, t] : tensors_)
        if (n == name) return t;
    fail(ErrorCode::invalid_argument, "unknown tensor: " + name);
}

void ModelWeights::set_trainable(bool trainable) {
    trainable_ = trainable;
    for (auto& [name, t] : tensors_) t.node()->requires_grad = trainable;
}

ForwardResult forward(const ModelWeights& weights, const MultimodalPrompt& prompt,
                      std::span<const int> partial_response, const SteeringHook* hook,
                      std::span<const int> record_layers) {
    Stream s = run_stream(weights, prompt, partial_response, hook, record_layers);
    Tensor last = grad::slice(s.x, 0, s.len - 1, 1);
    Tensor logits = grad::matmul(final_norm(weights, last), weights.tensor("unembed"));
    ForwardResult out;
    out.next_logits = grad::reshape(logits, {weights.config().vocab_size});
    out.records = std::move(s.records);
    return out;
}

std::vector<int> generate(const ModelWeights& weights, const MultimodalPrompt& prompt,
                          const DecodeConfig& decode, const SteeringHook* hook) {
    if (decode.max_new_tokens < 1)
        fail(ErrorCode::invalid_argument, "max_new_tokens must be positive");
    if (decode.mode == DecodeMode::temperature_sampling && !(decode.temperature > 0.0))
        fail(ErrorCode::invalid_argument, "temperature must be positive when sampling");

    grad::NoGradGuard no_grad;
    const ModelConfig& c = weights.config();
    Rng rng(decode.seed);
    std::vector<int> response;
    int prompt_len = prompt_length(c, prompt);
    while (static_cast<int>(response.size()) < decode.max_new_tokens &&
           prompt_len + static_cast<int>(response.size()) < c.max_seq_len) {
        ForwardResult fr = forward(weights, prompt, response, hook, {});
        std::span<const double> logits = fr.next_logits.data();
        int tok;
        if (decode.mode == DecodeMode::greedy) {
            tok = static_cast<int>(
                std::max_element(logits.begin(), logits.end()) - logits.begin());
        } else {
            // Explicit inverse-CDF sampling over the tempered softmax; kept in
            // plain doubles with engine-level draws for reproducibility.
            double mx = logits[0];
            for (double v : logits) mx = std::max(mx, v);
            std::vector<double> probs(logits.size());
            double sum = 0.0;
            for (std::size_t j = 0; j < logits.size(); ++j) {
                probs[j] = std::exp((logits[j] - mx) / decode.temperature);
                sum += probs[j];
            }
            double target = rng.uniform() * sum;
            double cum = 0.0;
            tok = static_cast<int>(logits.size()) - 1;
            for (std::size_t j = 0; j < probs.size(); ++j) {
                cum += probs[j];
                if (target < cum) {
                    tok = static_cast<int>(j);
                    break;
                }
            }
        }
        if (tok == kEosId) break;
        response.push_back(tok);
    }
    return response;
}

grad::Tensor response_logits(const ModelWeights& weights, const MultimodalPrompt& prompt,
                             std::span<const int> response, const SteeringHook* hook) {
    if (response.empty()) fail(ErrorCode::invalid_argument, "response must be non-empty");
    Stream s = run_stream(weights, prompt, response, hook, {});
    // Row i of the result predicts response[i]: rows prompt_len-1 .. len-2.
    Tensor rows = grad::slice(s.x, 0, s.prompt_len - 1, static_cast<int>(response.size()));
    return grad::matmul(final_norm(weights, rows), weights.tensor("unembed"));
}

grad::Tensor sequence_logprob(const ModelWeights& weights, const MultimodalPrompt& prompt,
                              std::span<const int> response, const SteeringHook* hook) {
    Tensor logits = response_logits(weights, prompt, response, hook);
    Tensor logprobs = grad::log_softmax(logits);
    int n = static_cast<int>(response.size());
    Tensor picked;
    for (int i = 0; i < n; ++i) {
        Tensor row = grad::slice(logprobs, 0, i, 1);
        Tensor entry = grad::reshape(grad::slice(row, 1, response[i], 1), {1});
        picked = i == 0 ? entry : grad::concat(picked, entry, 0);
    }
    if (n == 1) return picked;
    return grad::scale(grad::mean_pool(picked), static_cast<double>(n));
}

grad::Tensor final_hidden_states(const ModelWeights& weights, const MultimodalPrompt& prompt,
                                 std::span<const int> response, const SteeringHook* hook) {
    Stream s = run_stream(weights, prompt, response, hook, {});
    return final_norm(weights, s.x);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"n_layers", c.n_layers},         {"d_model", c.d_model},
                {"n_heads", c.n_heads},           {"vocab_size", c.vocab_size},
                {"max_seq_len", c.max_seq_len},   {"n_visual_tokens", c.n_visual_tokens},
                {"visual_feat_dim", c.visual_feat_dim}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.n_visual_tokens = j.at("n_visual_tokens").get<int>();
    c.visual_feat_dim = j.at("visual_feat_dim").get<int>();
    return c;
}

void append_u32_le(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t read_u32_le(const std::string& in, std::size_t at) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

// Serialized image minus the trailing digest.
std::string serialize_body(const ModelWeights& w) {
    nlohmann::json dir = nlohmann::json::array();
    std::string payload;
    uint32_t offset = 0;
    for (const auto& [name, t] : w.named_tensors()) {
        dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        for (double v : t.data()) {
            float f = static_cast<float>(v);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            append_u32_le(payload, bits);
            offset += 4;
        }
    }
    nlohmann::json header = {{"config", config_to_json(w.config())}, {"tensors", dir}};
    std::string header_str = header.dump();
    std::string body = kCheckpointMagic;
    append_u32_le(body, static_cast<uint32_t>(header_str.size()));
    body += header_str;
    body += payload;
    return body;
}

}  // namespace

void save_checkpoint(const ModelWeights& weights, const std::string& path) {
    std::string body = serialize_body(weights);
    std::vector<unsigned char> digest = sha256(body);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_failure, "cannot open checkpoint for writing: " + path);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    out.write(reinterpret_cast<const char*>(digest.data()),
              static_cast<std::streamsize>(digest.size()));
    if (!out) fail(ErrorCode::io_failure, "checkpoint write failed: " + path);
}

ModelWeights load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::missing_artifact, "checkpoint not found: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string bytes = buf.str();

    std::size_t magic_len = std::strlen(kCheckpointMagic);
    if (bytes.size() < magic_len + 4 + 32 ||
        bytes.compare(0, magic_len, kCheckpointMagic) != 0)
        fail(ErrorCode::io_failure, "not a checkpoint file: " + path);

    std::string body = bytes.substr(0, bytes.size() - 32);
    std::string stored_hash = bytes.substr(bytes.size() - 32);
    std::vector<unsigned char> digest = sha256(body);
    if (!std::equal(digest.begin(), digest.end(),
                    reinterpret_cast<const unsigned char*>(stored_hash.data())))
        fail(ErrorCode::hash_mismatch, "checkpoint content hash mismatch: " + path);

    uint32_t header_len = read_u32_le(bytes, magic_len);
    std::size_t header_at = magic_len + 4;
    if (header_at + header_len > body.size())
        fail(ErrorCode::io_failure, "checkpoint header truncated: " + path);
    json header;
    try {
        header = json::parse(bytes.substr(header_at, header_len));
    } catch (const json::exception& e) {
        fail(ErrorCode::io_failure, std::string("checkpoint header unreadable: ") + e.what());
    }

    ModelConfig config = config_from_json(header.at("config"));
    config.validate();
    auto expected = tensor_layout(config);
    const json& dir = header.at("tensors");
    if (dir.size() != expected.size())
        fail(ErrorCode::config_mismatch, "checkpoint tensor directory does not match config");

    std::size_t payload_at = header_at + header_len;
    ModelWeights w;
    w.config_ = config;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto& [name, shape] = expected[i];
        const json& entry = dir.at(i);
        if (entry.at("name").get<std::string>() != name ||
            entry.at("shape").get<std::vector<int>>() != shape)
            fail(ErrorCode::config_mismatch,
                 "checkpoint tensor " + name + " does not match the header config");
        std::size_t offset = payload_at + entry.at("offset").get<uint32_t>();
        int64_t n = grad::shape_size(shape);
        if (offset + static_cast<std::size_t>(n) * 4 > body.size())
            fail(ErrorCode::io_failure, "checkpoint payload truncated: " + path);
        std::vector<double> data(static_cast<std::size_t>(n));
        for (int64_t k = 0; k < n; ++k) {
            uint32_t bits = read_u32_le(bytes, offset + static_cast<std::size_t>(k) * 4);
            float f;
            std::memcpy(&f, &bits, 4);
            data[static_cast<std::size_t>(k)] = static_cast<double>(f);
        }
        w.tensors_.emplace_back(name, Tensor::from_data(shape, std::move(data), false));
    }
    return w;
}

std::string weights_content_hash(const ModelWeights& weights) {
    return sha256_hex(serialize_body(weights));
}

}  // namespace steerlab::model
