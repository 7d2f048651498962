#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradrect/calibration.hpp"
#include "gradrect/corpus.hpp"
#include "gradrect/errors.hpp"
#include "gradrect/losses.hpp"
#include "gradrect/model.hpp"
#include "gradrect/optim.hpp"
#include "gradrect/tru.hpp"

namespace gradrect {

class ConfigError : public UsageError {
public:
    using UsageError::UsageError;
};

inline constexpr int kConfigSchemaVersion = 1;

struct ModelConfig {
    ModelKind kind = ModelKind::TabularBigram;
    std::size_t embed_dim = 16;
    std::size_t hidden_dim = 32;
    double init_scale = 0.3;
};

struct PretrainConfig {
    std::size_t max_epochs = 200;
    double lr = 1.0;
    /// Stop once an epoch improves the training NLL by less than this.
    double min_improvement = 1e-4;
};

struct UnlearnConfig {
    std::vector<LossKind> methods{LossKind::GA, LossKind::NPO};
    bool run_baseline = true;  // arm without rectification
    bool run_gru = true;
    double lr = 0.02;
    std::size_t epochs = 5;
    std::size_t batch_u = 8;
    std::size_t batch_r = 32;
    double gamma = 0.8;
    // Unclipped by default: under AdamW a fixed-norm clip erases the gradient
    // scale the optimizer would otherwise see (NPO's decaying weights).
    std::optional<double> tau;
    bool clip_baseline = false;
    OptimizerKind optimizer = OptimizerKind::AdamW;
    AdamWParams adam;
    double lambda = 1.0;
    double beta = 0.1;
    bool length_normalized = false;
};

struct TruSection {
    bool enabled = false;
    bool run_baseline = true;  // plain task vector arm
    // Unit-norm task vectors barely move a ~1k-parameter model at the
    // LLM-scale strengths (0.5 to 0.85); the desk default is a decade larger.
    TruConfig cfg{.stg = 10.0};
};

struct CalibrationSection {
    bool enabled = true;
    std::vector<double> targets{0.85, 0.90, 0.95};
    double tol = 0.01;
    std::size_t max_iter = 12;
    RetentionProxy proxy = RetentionProxy::ExpectedAccuracy;
};

struct OutputConfig {
    bool svg = true;
    bool checkpoints = true;
};

struct ExperimentConfig {
    int schema_version = kConfigSchemaVersion;
    std::string experiment_id = "desk";
    std::uint64_t seed = 0;
    CorpusSpec corpus;
    ModelConfig model;
    PretrainConfig pretrain;
    UnlearnConfig unlearn;
    TruSection tru;
    CalibrationSection calibration;
    OutputConfig output;

    void validate() const;
};

/// Fully resolved config: every field present, defaults filled in.
nlohmann::json to_json(const ExperimentConfig& cfg);
/// Missing keys take defaults; unknown keys and bad values raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Seeds every stage from `cfg.seed` (corpus seed included).
ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed);

/// Canonical serialization used for hashing and persistence.
std::string canonical_config_text(const ExperimentConfig& cfg);
/// SHA-256 (hex) of the canonical text.
std::string config_hash(const ExperimentConfig& cfg);
std::string sha256_hex(const std::string& bytes);

/// Sets a dotted key (e.g. "unlearn.gamma") in a config JSON. The key must
/// already exist in the resolved schema.
void apply_override(nlohmann::json& config_json, const std::string& dotted_key,
                    const nlohmann::json& value);

/// Settings for the desk benchmark the acceptance suite runs on:
/// V = 32, 40 profiles, 5% forget, TabularBigram.
ExperimentConfig desk_preset(std::uint64_t seed = 0);

}  // namespace gradrect
