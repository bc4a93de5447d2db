#include "steerlab/steering.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/exact_sum.hpp"
#include "steerlab/hash.hpp"

namespace steerlab::steering {

using nlohmann::json;

std::vector<double> act_mean(const model::ModelWeights& weights,
                             const std::vector<model::MultimodalPrompt>& prompts, int layer) {
    const model::ModelConfig& c = weights.config();
    if (prompts.empty()) fail(ErrorCode::invalid_argument, "act_mean: empty dataset");
    if (layer < 1 || layer > c.n_layers)
        fail(ErrorCode::invalid_argument, "act_mean: layer out of range");

    grad::NoGradGuard no_grad;
    std::vector<ExactSum> sums(static_cast<std::size_t>(c.d_model));
    std::vector<int> rec{layer};
    for (const model::MultimodalPrompt& prompt : prompts) {
        model::ForwardResult fr = model::forward(weights, prompt, {}, nullptr, rec);
        const grad::Tensor& states = fr.records.at(0).values;
        int last = states.shape()[0] - 1;
        for (int j = 0; j < c.d_model; ++j)
            sums[j].add(states.at(static_cast<int64_t>(last) * c.d_model + j));
    }
    std::vector<double> mean(static_cast<std::size_t>(c.d_model));
    double n = static_cast<double>(prompts.size());
    for (int j = 0; j < c.d_model; ++j) mean[j] = sums[j].value() / n;
    return mean;
}

AttributeVector diff_in_means(const model::ModelWeights& weights,
                              const std::vector<model::MultimodalPrompt>& positive,
                              const std::vector<model::MultimodalPrompt>& negative, int layer,
                              const std::string& attribute, const std::string& dataset_hash) {
    if (positive.empty() || negative.empty())
        fail(ErrorCode::invalid_argument, "diff_in_means: both datasets must be non-empty");
    std::vector<double> pos = act_mean(weights, positive, layer);
    std::vector<double> neg = act_mean(weights, negative, layer);
    AttributeVector out;
    out.attribute = attribute;
    out.layer = layer;
    out.dataset_hash = dataset_hash;
    out.values.resize(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) out.values[i] = pos[i] - neg[i];
    return out;
}

AttributeVector diff_in_means(const model::ModelWeights& weights,
                              const std::vector<corpus::ContrastivePrompt>& positive,
                              const std::vector<corpus::ContrastivePrompt>& negative,
                              const corpus::CorpusSpec& spec, int layer) {
    if (positive.empty() || negative.empty())
        fail(ErrorCode::invalid_argument, "diff_in_means: both datasets must be non-empty");
    std::vector<model::MultimodalPrompt> pos, neg;
    pos.reserve(positive.size());
    neg.reserve(negative.size());
    for (const auto& p : positive) pos.push_back(corpus::to_prompt(p, spec));
    for (const auto& p : negative) neg.push_back(corpus::to_prompt(p, spec));
    AttributeVector out = diff_in_means(weights, pos, neg, layer);
    out.attribute = positive.front().attr;
    out.dataset_hash = sha256_hex(corpus::to_jsonl(positive) + corpus::to_jsonl(negative));
    return out;
}

SteeringVector combine(const std::vector<AttributeVector>& vectors,
                       const std::vector<double>& weights) {
    if (vectors.empty()) fail(ErrorCode::invalid_argument, "combine: no attribute vectors");
    if (vectors.size() != weights.size())
        fail(ErrorCode::invalid_argument, "combine: vector/weight count mismatch");
    int layer = vectors.front().layer;
    std::size_t dim = vectors.front().values.size();
    for (const AttributeVector& v : vectors) {
        if (v.layer != layer) fail(ErrorCode::invalid_argument, "combine: layer mismatch");
        if (v.values.size() != dim) fail(ErrorCode::shape_mismatch, "combine: length mismatch");
    }
    SteeringVector out;
    out.layer = layer;
    out.stage = Stage::stage1;
    out.values.assign(dim, 0.0);
    for (std::size_t j = 0; j < vectors.size(); ++j) {
        for (std::size_t i = 0; i < dim; ++i) out.values[i] += weights[j] * vectors[j].values[i];
        out.provenance.attrs.push_back(vectors[j].attribute);
        out.provenance.weights.push_back(weights[j]);
        out.provenance.dataset_hashes.push_back(vectors[j].dataset_hash);
    }
    return out;
}

namespace {

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_value(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || !std::isfinite(v))
        fail(ErrorCode::schema_violation, "steering file: bad value \"" + s + "\"");
    return v;
}

}  // namespace

std::string steering_to_json(const SteeringVector& v) {
    json values = json::array();
    for (double x : v.values) values.push_back(format_value(x));
    json j = {{"layer", v.layer},
              {"dim", v.values.size()},
              {"values", values},
              {"provenance",
               {{"attrs", v.provenance.attrs},
                {"weights", v.provenance.weights},
                {"dataset_hashes", v.provenance.dataset_hashes}}},
              {"stage", v.stage == Stage::stage1 ? "stage1" : "stage2"}};
    return j.dump(2) + "\n";
}

void save_steering(const std::string& path, const SteeringVector& v) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_failure, "cannot open for writing: " + path);
    std::string body = steering_to_json(v);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) fail(ErrorCode::io_failure, "write failed: " + path);
}

SteeringVector load_steering(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::missing_artifact, "steering vector not found: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::schema_violation, "steering file " + path + ": " + e.what());
    }
    SteeringVector v;
    try {
        v.layer = j.at("layer").get<int>();
        std::size_t dim = j.at("dim").get<std::size_t>();
        for (const auto& entry : j.at("values"))
            v.values.push_back(parse_value(entry.get<std::string>()));
        if (v.values.size() != dim)
            fail(ErrorCode::schema_violation, "steering file: dim does not match values");
        const json& prov = j.at("provenance");
        v.provenance.attrs = prov.at("attrs").get<std::vector<std::string>>();
        v.provenance.weights = prov.at("weights").get<std::vector<double>>();
        v.provenance.dataset_hashes = prov.at("dataset_hashes").get<std::vector<std::string>>();
        std::string stage = j.at("stage").get<std::string>();
        if (stage != "stage1" && stage != "stage2")
            fail(ErrorCode::schema_violation, "steering file: bad stage \"" + stage + "\"");
        v.stage = stage == "stage1" ? Stage::stage1 : Stage::stage2;
    } catch (const json::exception& e) {
        fail(ErrorCode::schema_violation, "steering file " + path + ": " + e.what());
    }
    if (v.layer < 1) fail(ErrorCode::schema_violation, "steering file: bad layer");
    return v;
}

SteeringVector load_steering(const std::string& path, const model::ModelConfig& config) {
    SteeringVector v = load_steering(path);
    if (static_cast<int>(v.values.size()) != config.d_model)
        fail(ErrorCode::config_mismatch,
             "steering vector dim " + std::to_string(v.values.size()) +
                 " does not match model d_model " + std::to_string(config.d_model));
    if (v.layer > config.n_layers)
        fail(ErrorCode::config_mismatch, "steering vector layer exceeds model depth");
    return v;
}

model::SteeringHook make_hook(const SteeringVector& v, double scale,
                              model::PositionPolicy policy) {
    model::SteeringHook hook;
    hook.layer = v.layer;
    hook.vector = grad::Tensor::from_data({static_cast<int>(v.values.size())}, v.values);
    hook.scale = scale;
    hook.policy = policy;
    return hook;
}

}  // namespace steerlab::steering
