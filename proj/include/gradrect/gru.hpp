#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gradrect/losses.hpp"
#include "gradrect/metrics.hpp"
#include "gradrect/optim.hpp"

namespace gradrect {

/// Below this norm the EMA retain gradient defines no half-space.
inline constexpr double kZeroReferenceNorm = 1e-15;
/// cos(g_u, g_ref) within this distance of -1 counts as degenerate.
inline constexpr double kDegenerateCosTol = 1e-12;

/// Euclidean projection of g_u onto {x : <x, g_ref> >= 0}.
/// Returns g_u unchanged when it is already feasible or g_ref is ~0;
/// otherwise g_u - (<g_u, g_ref> / ||g_ref||^2) g_ref.
GradientVector rectify(const GradientVector& g_u, const GradientVector& g_ref);

/// True when rectify() would modify g_u.
bool rectification_fires(const GradientVector& g_u, const GradientVector& g_ref);

/// (1 - gamma) * ema_prev + gamma * g_r
GradientVector ema_update(const GradientVector& ema_prev, const GradientVector& g_r, double gamma);

/// g if ||g|| <= tau, else tau * g / ||g||.
GradientVector clip(const GradientVector& g, double tau);

struct GruConfig {
    double lr = 1e-2;
    double gamma = 0.8;
    std::optional<double> tau = 0.001;
    std::size_t steps = 1;
    std::size_t batch_u = 8;
    std::size_t batch_r = 8;
    LossSpec loss;
    OptimizerKind optimizer = OptimizerKind::SGD;
    AdamWParams adam;  // lr is taken from GruConfig::lr
    std::uint64_t seed = 0;

    /// gamma must lie in (0, 1): gamma = 0 would pin the EMA at zero and
    /// silently switch rectification off.
    void validate() const;
};

/// Draws the per-step mini-batches. D_u is visited in shuffled epochs
/// without replacement; D_r is sampled uniformly with replacement. Both arms
/// of a paired run construct the sampler from the same seed and therefore
/// see identical index sequences.
class BatchSampler {
public:
    BatchSampler(std::size_t n_unlearn, std::size_t n_retain, std::size_t batch_u,
                 std::size_t batch_r, CounterRng rng);

    std::vector<std::size_t> next_unlearn();
    std::vector<std::size_t> next_retain();
    /// Fresh unlearn batch from a side stream; does not disturb the epoch order.
    std::vector<std::size_t> resample_unlearn();

private:
    std::size_t n_u_, n_r_, b_u_, b_r_;
    CounterRng epoch_rng_;
    CounterRng retain_rng_;
    CounterRng resample_rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

struct GruState {
    ParamVector theta;
    GradientVector ema_retain;  // starts at 0
    std::size_t step = 0;
    Optimizer optimizer;

    static GruState initial(const ParamVector& theta0, const GruConfig& cfg);
};

struct RunLog {
    std::vector<StepRecord> records;
    std::vector<std::string> events;
    double initial_retain_risk = 0.0;
    double final_retain_risk = 0.0;
    bool rectify_enabled = true;
    OptimizerKind optimizer = OptimizerKind::SGD;
};

/// Everything one step needs besides the mutable state.
struct StepContext {
    const Model& architecture;
    const Batch& unlearn_set;
    const Batch& retain_set;
    const Batch& probe;
    bool rectify_enabled = true;
};

/// One iteration of the rectified update: sample, compute g_u and g_r, update
/// the EMA, rectify, clip, step the optimizer, log. A degenerate direction
/// (cos = -1) triggers one unlearn-batch resample; if that is degenerate too
/// the step applies no update and is flagged.
void gru_step(GruState& state, const GruConfig& cfg, const StepContext& ctx,
              BatchSampler& sampler, RunLog& log);

/// T steps from theta_0 = model.params(). With rectify_enabled = false this is
/// the plain baseline update on the same batches. `probe` defaults to a
/// 64-sequence subsample of D_r drawn from the seed's "eval.probe" stream.
std::pair<ParamVector, RunLog> run_unlearn(const Model& model, const GruConfig& cfg,
                                           const Batch& unlearn_set, const Batch& retain_set,
                                           bool rectify_enabled,
                                           std::optional<Batch> probe = std::nullopt);

inline constexpr std::size_t kRetainProbeSize = 64;

}  // namespace gradrect
