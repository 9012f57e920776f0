#pragma once

#include "riskseq/baselines.hpp"
#include "riskseq/datamodel.hpp"
#include "riskseq/evaluation.hpp"
#include "riskseq/features.hpp"
#include "riskseq/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace riskseq {

struct PathsConfig {
    std::string corpus_dir = "corpus";  // manifest.csv, audio/, planted.csv
    std::string cache_dir = "cache";    // embedding cache
    std::string run_dir = "run";        // splits, models, reports, errors
};

struct FeatureConfig {
    std::string extractor = "mock";  // mock | reference
    double chunk_s = kDefaultChunkSeconds;
    double window_s = kDefaultWindowSeconds;
    int dim = kReferenceEmbeddingDim;
};

struct EvalConfig {
    int n_bootstrap = 1000;
    double threshold = 0.5;
    MissingScalePolicy missing_scale = MissingScalePolicy::exclude;
    int top_k = 10;
    bool salience_all_layers = false;
};

/// Every stage seed is derive_seed(seed, <stage>); see stage_seed.
struct RunConfig {
    std::uint64_t seed = 0;
    PathsConfig paths;
    SynthConfig synth;
    FeatureConfig features;
    ModelConfig model;
    TrainConfig train;  // train.seed is ignored; the stage seed is used
    EvalConfig eval;
};

/// Stages: "synth", "extract", "split", "model-init", "train", "bootstrap".
std::uint64_t stage_seed(const RunConfig& cfg, std::string_view stage);

/// Checks ranges and cross-section consistency (model.input_dim == features.dim,
/// reference extractor needs d = 1280 at 16 kHz).
void validate_run_config(const RunConfig& cfg);

std::string run_config_to_json(const RunConfig& cfg);

/// Unknown keys raise ValidationError listing the valid keys of that section.
/// Missing keys keep their defaults.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

/// "section.key=value" with a JSON value (bare strings accepted).
void apply_override(RunConfig& cfg, const std::string& assignment);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace riskseq
