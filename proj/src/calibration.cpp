#include "gradrect/calibration.hpp"

#include <cmath>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect {

ParamVector blend(const ParamVector& theta_u, const ParamVector& theta_org, double alpha) {
    require_same_size(theta_u.size(), theta_org.size(), "blend");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw UsageError(fmt::format("blend: alpha {} outside [0, 1]", alpha));
    ParamVector out = theta_org;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = alpha * theta_u[i] + (1.0 - alpha) * theta_org[i];
    return out;
}

CalibrationResult calibrate_uwc(const ParamVector& theta_u, const ParamVector& theta_org,
                                const RetainEval& retain_eval, double target_fraction, double tol,
                                std::size_t max_iter) {
    if (!(target_fraction > 0.0 && target_fraction <= 1.0))
        throw UsageError("calibrate_uwc: target fraction must lie in (0, 1]");
    if (!(tol > 0.0)) throw UsageError("calibrate_uwc: tol must be positive");
    if (max_iter < 2) throw UsageError("calibrate_uwc: max_iter must be >= 2");
    require_same_size(theta_u.size(), theta_org.size(), "calibrate_uwc");

    CalibrationResult res;
    res.target_fraction = target_fraction;
    const double r0 = retain_eval(theta_org);
    res.iterations = 1;
    if (!(r0 > 0.0) || !std::isfinite(r0))
        throw UsageError("calibrate_uwc: retain_eval(theta_org) must be positive");
    const double threshold = target_fraction * r0;

    auto finish = [&](double alpha, double value, bool converged) {
        res.alpha = alpha;
        res.achieved_retention_fraction = value / r0;
        res.converged = converged;
        res.blended = blend(theta_u, theta_org, alpha);
        return res;
    };

    const double r1 = retain_eval(theta_u);
    ++res.iterations;
    if (r1 >= threshold) return finish(1.0, r1, true);

    // Invariant: value(lo) >= threshold > value(hi).
    double lo = 0.0, v_lo = r0;
    double hi = 1.0, v_hi = r1;
    while (res.iterations < max_iter) {
        const double mid = 0.5 * (lo + hi);
        const double v = retain_eval(blend(theta_u, theta_org, mid));
        ++res.iterations;
        if (v > v_lo || v < v_hi) {
            res.non_monotone = true;
            break;
        }
        if (v >= threshold) {
            lo = mid;
            v_lo = v;
            if (v / r0 - target_fraction <= tol) return finish(lo, v_lo, true);
        } else {
            hi = mid;
            v_hi = v;
        }
        if (hi - lo < tol) return finish(lo, v_lo, v_lo / r0 - target_fraction <= tol);
    }
    if (!res.non_monotone) return finish(lo, v_lo, false);

    // Grid fallback: largest feasible alpha on a 21-point grid.
    double best_alpha = 0.0, best_v = r0;
    for (int k = 1; k <= 20; ++k) {
        const double a = k / 20.0;
        const double v = k == 20 ? r1 : retain_eval(blend(theta_u, theta_org, a));
        if (k != 20) ++res.iterations;
        if (v >= threshold) {
            best_alpha = a;
            best_v = v;
        }
    }
    if (lo > best_alpha) {
        best_alpha = lo;
        best_v = v_lo;
    }
    return finish(best_alpha, best_v, best_v / r0 - target_fraction <= tol);
}

nlohmann::json to_json(const CalibrationResult& r, bool include_params) {
    nlohmann::json j{{"alpha", r.alpha},
                     {"target_fraction", r.target_fraction},
                     {"achieved_retention_fraction", r.achieved_retention_fraction},
                     {"iterations", r.iterations},
                     {"converged", r.converged},
                     {"non_monotone", r.non_monotone}};
    if (include_params) j["blended"] = r.blended.raw();
    return j;
}

const char* to_string(RetentionProxy proxy) {
    return proxy == RetentionProxy::TokenAccuracy ? "token_accuracy" : "expected_accuracy";
}

RetentionProxy retention_proxy_from_string(const std::string& name) {
    if (name == "token_accuracy") return RetentionProxy::TokenAccuracy;
    if (name == "expected_accuracy") return RetentionProxy::ExpectedAccuracy;
    throw UsageError("unknown retention proxy '" + name + "'");
}

std::string describe(RetentionProxy proxy) {
    return proxy == RetentionProxy::TokenAccuracy
               ? "retain per-token accuracy"
               : "retain per-token expected accuracy (mean probability of the observed token)";
}

RetainEval make_retention_eval(const Model& architecture, const Batch& retain_set,
                               RetentionProxy proxy) {
    if (retain_set.empty()) throw UsageError("make_retention_eval: empty retain set");
    return [&architecture, &retain_set, proxy](const ParamVector& theta) {
        const ForwardPass pass = forward(architecture.with_params(theta));
        return proxy == RetentionProxy::TokenAccuracy ? token_accuracy(pass, retain_set)
                                                      : expected_token_accuracy(pass, retain_set);
    };
}

}  // namespace gradrect
