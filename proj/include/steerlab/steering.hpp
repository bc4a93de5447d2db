#pragma once

#include <string>
#include <vector>

#include "steerlab/corpus.hpp"
#include "steerlab/model.hpp"

namespace steerlab::steering {

enum class Stage { stage1, stage2 };

struct Provenance {
    std::vector<std::string> attrs;
    std::vector<double> weights;
    std::vector<std::string> dataset_hashes;
};

struct SteeringVector {
    int layer = 1;
    std::vector<double> values;
    Provenance provenance;
    Stage stage = Stage::stage1;
};

struct AttributeVector {
    std::string attribute;
    int layer = 1;
    std::vector<double> values;
    std::string dataset_hash;  // fingerprint of the contrastive pair it came from
};

// Mean last-input-token residual activation at the given layer, hook-free.
// Accumulated exactly per coordinate, so the result is order-independent.
std::vector<double> act_mean(const model::ModelWeights& weights,
                             const std::vector<model::MultimodalPrompt>& prompts, int layer);

AttributeVector diff_in_means(const model::ModelWeights& weights,
                              const std::vector<model::MultimodalPrompt>& positive,
                              const std::vector<model::MultimodalPrompt>& negative, int layer,
                              const std::string& attribute = "",
                              const std::string& dataset_hash = "");

// Convenience wrapper over contrastive records: converts to prompts with a
// neutral visual block and derives the dataset hash from the records.
AttributeVector diff_in_means(const model::ModelWeights& weights,
                              const std::vector<corpus::ContrastivePrompt>& positive,
                              const std::vector<corpus::ContrastivePrompt>& negative,
                              const corpus::CorpusSpec& spec, int layer);

SteeringVector combine(const std::vector<AttributeVector>& vectors,
                       const std::vector<double>& weights);

// JSON file with full-precision decimal values (17 significant digits).
void save_steering(const std::string& path, const SteeringVector& v);
SteeringVector load_steering(const std::string& path);
// Load plus a dimension check against the target model.
SteeringVector load_steering(const std::string& path, const model::ModelConfig& config);

std::string steering_to_json(const SteeringVector& v);

// Hook construction for inference-time use of a stored vector.
model::SteeringHook make_hook(const SteeringVector& v, double scale,
                              model::PositionPolicy policy = model::PositionPolicy::all_positions);

}  // namespace steerlab::steering
