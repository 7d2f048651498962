#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "gradrect/param_vector.hpp"

namespace gradrect {

/// theta - lr * g. Requires lr > 0 and matching sizes.
ParamVector sgd_step(const ParamVector& theta, const GradientVector& g, double lr);

struct AdamWParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Bias-corrected first/second moments. An empty state is sized lazily on the
/// first step.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
};

/// Decoupled weight decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps)) - lr * wd * theta
ParamVector adamw_step(AdamState& state, const ParamVector& theta, const GradientVector& g,
                       const AdamWParams& p);

enum class OptimizerKind { SGD, AdamW };

const char* to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

/// Per-run optimizer: SGD is stateless, AdamW carries moments.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, AdamWParams params);

    ParamVector step(const ParamVector& theta, const GradientVector& g);

    OptimizerKind kind() const { return kind_; }
    const AdamWParams& params() const { return params_; }
    const AdamState& adam_state() const { return adam_; }

private:
    OptimizerKind kind_;
    AdamWParams params_;
    AdamState adam_;
};

}  // namespace gradrect
