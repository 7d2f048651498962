#pragma once

#include <functional>
#include <string>

#include <json.hpp>

#include "gradrect/model.hpp"
#include "gradrect/param_vector.hpp"

namespace gradrect {

/// alpha * theta_u + (1 - alpha) * theta_org, alpha in [0, 1].
ParamVector blend(const ParamVector& theta_u, const ParamVector& theta_org, double alpha);

struct CalibrationResult {
    double alpha = 0.0;
    double target_fraction = 0.0;
    double achieved_retention_fraction = 0.0;
    std::size_t iterations = 0;  // retain_eval calls, including the reference
    bool converged = false;
    bool non_monotone = false;
    ParamVector blended;
};

using RetainEval = std::function<double(const ParamVector&)>;

/// Largest alpha whose blend keeps retain_eval >= target * retain_eval(theta_org).
///
/// Bisects on alpha assuming retention falls monotonically as alpha grows.
/// Stops once the achieved fraction is within `tol` above the target or the
/// bracket is narrower than `tol`. If an evaluation contradicts monotonicity
/// the search falls back to a 21-point grid scan and flags the result.
CalibrationResult calibrate_uwc(const ParamVector& theta_u, const ParamVector& theta_org,
                                const RetainEval& retain_eval, double target_fraction,
                                double tol, std::size_t max_iter);

nlohmann::json to_json(const CalibrationResult& result, bool include_params = false);

/// Retention metrics usable as retain_eval. TokenAccuracy is a step function
/// of the parameters (argmax flips); ExpectedAccuracy is its continuous
/// expectation under the model's own next-token distribution.
enum class RetentionProxy { TokenAccuracy, ExpectedAccuracy };

const char* to_string(RetentionProxy proxy);
RetentionProxy retention_proxy_from_string(const std::string& name);
std::string describe(RetentionProxy proxy);

/// retain_eval evaluating `proxy` on `retain_set` for parameters laid out as
/// `architecture`.
RetainEval make_retention_eval(const Model& architecture, const Batch& retain_set,
                               RetentionProxy proxy);

}  // namespace gradrect
