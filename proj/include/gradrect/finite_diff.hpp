#pragma once

#include <functional>

#include "gradrect/param_vector.hpp"

namespace gradrect {

using ParamLossFn = std::function<double(const ParamVector&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h, coordinate by
/// coordinate. Throws UsageError for h <= 0 and NumericError when the loss is
/// non-finite at a perturbed point.
GradientVector finite_diff_grad(const ParamLossFn& loss, const ParamVector& theta, double h);

/// ||a - b|| / max(||b||, floor)
double relative_l2_error(const GradientVector& a, const GradientVector& b, double floor = 1e-12);

}  // namespace gradrect
