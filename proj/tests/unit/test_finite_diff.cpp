#include <doctest.h>

#include <cmath>

#include "gradrect/errors.hpp"
#include "gradrect/finite_diff.hpp"

using namespace gradrect;

TEST_SUITE("finite_diff") {

TEST_CASE("quadratic is exact up to rounding") {
    const auto g = finite_diff_grad(
        [](const ParamVector& p) { return 0.5 * (p[0] * p[0] + p[1] * p[1]); },
        ParamVector::from_values({1, 2}), 1e-5);
    CHECK(std::abs(g[0] - 1.0) <= 1e-8);
    CHECK(std::abs(g[1] - 2.0) <= 1e-8);
}

TEST_CASE("cubic carries the h^2 truncation term") {
    const double h = 1e-3;
    const auto g = finite_diff_grad([](const ParamVector& p) { return p[0] * p[0] * p[0]; },
                                    ParamVector::from_values({1}), h);
    CHECK(g[0] == doctest::Approx(3.0 + h * h).epsilon(1e-12));
}

TEST_CASE("constant loss gives the zero vector") {
    const auto g = finite_diff_grad([](const ParamVector&) { return 4.0; }, ParamVector::from_values({1, 2, 3}), 1e-4);
    for (double v : g.values()) CHECK(v == 0.0);
}

TEST_CASE("errors") {
    CHECK_THROWS_AS(finite_diff_grad([](const ParamVector&) { return 0.0; }, ParamVector::from_values({1}), 0.0),
                    UsageError);
    CHECK_THROWS_AS(finite_diff_grad([](const ParamVector& p) { return p[0] > 1.0 ? INFINITY : 0.0; },
                                     ParamVector::from_values({1}), 1e-3),
                    NumericError);
}

}
