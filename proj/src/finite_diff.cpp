#include "gradrect/finite_diff.hpp"

#include <cmath>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect {

GradientVector finite_diff_grad(const ParamLossFn& loss, const ParamVector& theta, double h) {
    if (!(h > 0.0)) throw UsageError("finite_diff_grad: h must be positive");
    GradientVector g = GradientVector::zeros_like(theta);
    ParamVector x = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double x0 = theta[i];
        x[i] = x0 + h;
        const double fp = loss(x);
        x[i] = x0 - h;
        const double fm = loss(x);
        x[i] = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError(fmt::format("finite_diff_grad: non-finite loss at coordinate {}", i));
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double relative_l2_error(const GradientVector& a, const GradientVector& b, double floor) {
    require_same_size(a.size(), b.size(), "relative_l2_error");
    return norm(a - b) / std::max(norm(b), floor);
}

}  // namespace gradrect
