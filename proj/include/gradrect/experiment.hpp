#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradrect/calibration.hpp"
#include "gradrect/config.hpp"
#include "gradrect/gru.hpp"
#include "gradrect/metrics.hpp"
#include "gradrect/tru.hpp"

namespace gradrect {

struct PretrainResult {
    Model model = Model::tabular_bigram(1);
    std::vector<double> epoch_nll;  // training NLL before each epoch, then final
    std::size_t epochs_run = 0;
};

/// Full-batch gradient descent on the mean sequence NLL of D_u and D_r (or of
/// D_r alone for the retrained gold model). Stops early once an epoch gains
/// less than cfg.min_improvement; three consecutive increases raise
/// NumericError.
PretrainResult pretrain(const TokenDataset& dataset, const ModelConfig& model_cfg,
                        const PretrainConfig& cfg, std::uint64_t seed, bool retain_only = false);

struct CalibrationOutcome {
    double target = 0.0;
    CalibrationResult result;
    EvalReport eval;
};

struct UnlearnArm {
    std::string name;  // e.g. "GA" or "GA+GRU"
    LossKind method = LossKind::GA;
    bool gru = false;
    Model model = Model::tabular_bigram(1);
    RunLog log;
    EvalReport eval;
    std::vector<CalibrationOutcome> calibrations;
};

struct TruArm {
    std::string name;  // "TV" or "TRU"
    Model model = Model::tabular_bigram(1);
    TruLog log;
    EvalReport eval;
};

struct PipelineResult {
    TokenDataset dataset;
    Model original = Model::tabular_bigram(1);
    Model gold = Model::tabular_bigram(1);
    PretrainResult original_fit;
    PretrainResult gold_fit;
    EvalReport original_eval;
    EvalReport gold_eval;
    std::vector<UnlearnArm> arms;
    std::vector<TruArm> tru_arms;

    const UnlearnArm& arm(const std::string& name) const;
};

/// Stage names reported in manifests when a run fails.
inline constexpr const char* kStageGenerate = "generate";
inline constexpr const char* kStagePretrain = "pretrain";
inline constexpr const char* kStageGold = "retrain-gold";
inline constexpr const char* kStageUnlearn = "unlearn";
inline constexpr const char* kStageTru = "tru";
inline constexpr const char* kStageEvaluate = "evaluate";
inline constexpr const char* kStageCalibrate = "calibrate";

/// Observer for run_pipeline: `stage` is set before each stage starts and
/// `after_stage` fires once it completes, with the results so far.
struct PipelineHooks {
    std::string* stage = nullptr;
    std::function<void(const std::string& stage, const PipelineResult&)> after_stage;
};

/// Runs gen -> pretrain -> retrain-gold -> unlearn arms -> evaluate ->
/// calibrate (-> TRU) in memory.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const PipelineHooks& hooks = {});

/// Resolved GruConfig of one unlearning arm.
GruConfig make_gru_config(const ExperimentConfig& cfg, LossKind method, bool gru_arm,
                          std::size_t n_unlearn);

struct Artifact {
    std::string kind;
    std::string path;  // relative to the run directory

    bool operator==(const Artifact&) const = default;
};

struct RunManifest {
    std::string experiment_id;
    std::string config_hash;
    std::vector<std::uint64_t> seeds;
    std::vector<Artifact> artifacts;
    std::string started_at;
    std::string finished_at;
    std::string status;  // "ok", "failed", "dry-run"
    std::string failure_stage;
    std::string failure_message;
    std::filesystem::path run_dir;
    nlohmann::json resolved_config;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& run_dir);
RunManifest load_manifest(const std::filesystem::path& run_dir);
void save_manifest(const RunManifest& m);

inline constexpr const char* kManifestFile = "manifest.json";

struct RunOptions {
    std::filesystem::path out_dir = "runs";
    bool force = false;
    bool dry_run = false;
    std::optional<std::uint64_t> seed;
};

/// Thrown when a completed run with the same config hash already exists in
/// the output directory and --force was not given.
class RunExistsError : public UsageError {
public:
    using UsageError::UsageError;
};

/// Executes the pipeline and writes every artifact under
/// out_dir/<experiment_id>-<hash prefix>/. On a stage failure the manifest is
/// written with status "failed" and the failing stage; artifacts produced so
/// far are kept.
RunManifest run_experiment(const ExperimentConfig& cfg, const RunOptions& opt);
/// out_dir/<experiment_id>-<first 12 hex digits of the config hash>
std::filesystem::path run_directory(const ExperimentConfig& cfg, const RunOptions& opt);
RunManifest run_experiment(const std::filesystem::path& config_path, const RunOptions& opt);

/// Ordered parameter grid: dotted config key -> candidate values.
using ParamGrid = std::vector<std::pair<std::string, std::vector<nlohmann::json>>>;

ParamGrid grid_from_json(const nlohmann::json& j);

struct SweepOptions {
    RunOptions run;
    std::size_t workers = 1;
};

struct SweepResult {
    std::vector<RunManifest> runs;
    std::filesystem::path summary_csv;  // one row per grid point
    std::filesystem::path table_csv;    // rows = arm x metric, columns = grid points
};

/// One run per point of the Cartesian product of the grid, executed on up to
/// `workers` threads.
SweepResult sweep(const ExperimentConfig& base, const ParamGrid& grid, const SweepOptions& opt);
SweepResult sweep(const std::filesystem::path& config_path, const ParamGrid& grid,
                  const SweepOptions& opt);

}  // namespace gradrect
