#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradrect/rng.hpp"

namespace gradrect::theory {

using Vec = std::vector<double>;

/// Small dense row-major square matrix.
class Matrix {
public:
    Matrix() = default;
    explicit Matrix(std::size_t n) : n_(n), a_(n * n, 0.0) {}
    Matrix(std::size_t n, std::vector<double> values);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(std::span<const double> d);

    std::size_t dim() const { return n_; }
    double& operator()(std::size_t i, std::size_t j) { return a_[i * n_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }

    Vec apply(std::span<const double> x) const;
    /// x^T M x
    double quad_form(std::span<const double> x) const;
    bool is_symmetric(double tol = 0.0) const;

private:
    std::size_t n_ = 0;
    std::vector<double> a_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, iterated until
/// the off-diagonal Frobenius norm drops below `tol`. Ascending order.
Vec jacobi_eigenvalues(const Matrix& m, double tol = 1e-12);

struct SmoothnessConstants {
    double L = 0.0;    // largest eigenvalue
    double ell = 0.0;  // smallest eigenvalue
};

/// Throws UsageError for asymmetric input.
SmoothnessConstants smoothness_constants(const Matrix& m);

/// Unlearn loss 0.5 (x-a)^T A (x-a) and retain loss 0.5 (x-b)^T B (x-b).
struct QuadraticPair {
    Matrix A;
    Vec a;
    Matrix B;
    Vec b;
    double L_unlearn = 0.0;
    double L_retain = 0.0;
    double ell_retain = 0.0;

    static QuadraticPair make(Matrix A, Vec a, Matrix B, Vec b);

    std::size_t dim() const { return a.size(); }
    double unlearn_loss(std::span<const double> x) const;
    double retain_loss(std::span<const double> x) const;
    Vec unlearn_grad(std::span<const double> x) const;
    Vec retain_grad(std::span<const double> x) const;
};

/// Random PSD matrix Q diag(lambda) Q^T with log-uniform spectrum and
/// condition number at most `max_condition`.
Matrix random_psd(std::size_t n, CounterRng& rng, double max_condition = 1e6);
QuadraticPair random_quadratic_pair(std::size_t n, CounterRng& rng, double max_condition = 1e6);

/// q-curvature of a quadratic with Hessian B: int_0^1 (1-a) g^T B g da = g^T B g / 2.
double q_curvature(const Matrix& B, std::span<const double> g, double q);

/// q-curvature by composite Simpson (65 nodes) of
/// (1-a) * hess_quad(theta - a q g, g), where hess_quad(x, g) = g^T H(x) g.
using HessianQuadForm = std::function<double(std::span<const double> x, std::span<const double> g)>;
double q_curvature(const HessianQuadForm& hess_quad, std::span<const double> theta,
                   std::span<const double> g, double q);

/// Projection of g onto {x : <x, ref> >= 0}; same rule as the GRU update,
/// restated on plain vectors for the test beds.
Vec rectify(std::span<const double> g, std::span<const double> ref);

struct VerificationReport {
    std::string name;
    bool passed = true;
    bool out_of_hypothesis = false;  // lr outside the theorem's range
    std::size_t steps_checked = 0;
    std::size_t violations = 0;
    std::size_t degenerate_steps = 0;
    std::size_t rectified_steps = 0;
    std::size_t descent_bound_violations = 0;
    double min_delta = std::numeric_limits<double>::infinity();  // per-step loss change
    double max_delta = -std::numeric_limits<double>::infinity();
    // Retention comparison tallies.
    std::size_t condition_satisfied = 0;
    std::size_t condition_satisfied_failures = 0;
    std::size_t condition_violated = 0;
    std::size_t condition_violated_failures = 0;
    std::size_t identical_steps = 0;  // rectification did not fire
    /// max over condition-satisfied cases of R_gru - R_plain - tol (-inf if none)
    double worst_margin = -std::numeric_limits<double>::infinity();

    void merge(const VerificationReport& other);
};

nlohmann::json to_json(const VerificationReport& r);

/// GRU steps with exact gradients on the quadratic pair. Checks that the
/// unlearn loss never increases (relative tolerance 1e-9) and that every step
/// satisfies the smoothness descent bound. A step with cos(g_u, g_r) = -1
/// (within 1e-12) is degenerate: rectification removes the whole update.
VerificationReport verify_theorem1(const QuadraticPair& pair, double lr, std::size_t steps,
                                   std::span<const double> theta0);
VerificationReport verify_theorem1(const QuadraticPair& pair, double lr, std::size_t steps,
                                   CounterRng& rng);

/// Draws (theta, g_u) for one retention comparison.
struct GuSample {
    Vec theta;
    Vec g_u;
};
using GuSampler = std::function<GuSample(const QuadraticPair&, CounterRng&)>;

GuSample gaussian_gu_sampler(const QuadraticPair& pair, CounterRng& rng);

/// One-step retention comparison R(theta - lr g~) vs R(theta - lr g_u) with
/// g~ = rectify(g_u, grad R(theta)). Conditions: (a) ell >= L sin^2(phi),
/// (b) 0 < lr <= 2/L. When both hold the GRU step must not be worse
/// (tolerance 1e-9 (1 + |R|)); other samples are only tallied.
VerificationReport verify_theorem2(const QuadraticPair& pair, double lr, const GuSampler& sampler,
                                   std::size_t trials, CounterRng& rng);

struct SuiteOptions {
    std::size_t instances = 1000;
    std::size_t min_dim = 2;
    std::size_t max_dim = 10;
    double lr_factor = 1.9;  // lr = lr_factor / L
    std::size_t steps = 50;  // monotonicity walks
    std::size_t trials = 20; // retention comparisons per instance
    std::uint64_t seed = 0;
};

VerificationReport theorem1_suite(const SuiteOptions& opt);
/// Degenerate constructions: a = -b, A = B = I, theta_0 on the segment.
VerificationReport theorem1_degenerate_suite(std::size_t cases, std::uint64_t seed);
VerificationReport theorem2_suite(const SuiteOptions& opt);
/// 2-D search for condition-violating samples where the GRU step loses.
VerificationReport theorem2_adversarial(std::size_t instances, std::uint64_t seed);

}  // namespace gradrect::theory
