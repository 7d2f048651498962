#include "gradrect/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect {

ParamVector sgd_step(const ParamVector& theta, const GradientVector& g, double lr) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw UsageError("sgd_step: lr must be positive");
    require_same_size(theta.size(), g.size(), "sgd_step");
    ParamVector out = theta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = theta[i] - lr * g[i];
    if (!out.all_finite()) throw NumericError("sgd_step produced non-finite parameters");
    return out;
}

ParamVector adamw_step(AdamState& state, const ParamVector& theta, const GradientVector& g,
                       const AdamWParams& p) {
    if (!(p.beta1 >= 0.0 && p.beta1 < 1.0 && p.beta2 >= 0.0 && p.beta2 < 1.0))
        throw UsageError("adamw_step: betas must lie in [0, 1)");
    if (!(p.eps > 0.0)) throw UsageError("adamw_step: eps must be positive");
    if (!(p.lr > 0.0)) throw UsageError("adamw_step: lr must be positive");
    if (p.weight_decay < 0.0) throw UsageError("adamw_step: weight decay must be >= 0");
    require_same_size(theta.size(), g.size(), "adamw_step");
    const std::size_t n = theta.size();
    if (state.t == 0 && state.m.empty() && state.v.empty()) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
    }
    if (state.m.size() != n || state.v.size() != n)
        throw UsageError(fmt::format("adamw_step: state sized {} for {} parameters", state.m.size(), n));
    ++state.t;
    const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.t));
    ParamVector out = theta;
    for (std::size_t i = 0; i < n; ++i) {
        state.m[i] = p.beta1 * state.m[i] + (1.0 - p.beta1) * g[i];
        state.v[i] = p.beta2 * state.v[i] + (1.0 - p.beta2) * g[i] * g[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        out[i] = theta[i] - p.lr * (mhat / (std::sqrt(vhat) + p.eps)) - p.lr * p.weight_decay * theta[i];
    }
    if (!out.all_finite()) throw NumericError("adamw_step produced non-finite parameters");
    return out;
}

const char* to_string(OptimizerKind kind) {
    return kind == OptimizerKind::SGD ? "sgd" : "adamw";
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::SGD;
    if (name == "adamw") return OptimizerKind::AdamW;
    throw UsageError(fmt::format("unknown optimizer '{}'", name));
}

Optimizer::Optimizer(OptimizerKind kind, AdamWParams params) : kind_(kind), params_(params) {}

ParamVector Optimizer::step(const ParamVector& theta, const GradientVector& g) {
    if (kind_ == OptimizerKind::SGD) return sgd_step(theta, g, params_.lr);
    return adamw_step(adam_, theta, g, params_);
}

}  // namespace gradrect
