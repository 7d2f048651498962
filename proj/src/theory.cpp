#include "gradrect/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect::theory {

Matrix::Matrix(std::size_t n, std::vector<double> values) : n_(n), a_(std::move(values)) {
    if (a_.size() != n * n) throw UsageError("Matrix: value count must be n*n");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> d) {
    Matrix m(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
}

Vec Matrix::apply(std::span<const double> x) const {
    if (x.size() != n_) throw UsageError("Matrix::apply: dimension mismatch");
    Vec y(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n_; ++j) s += a_[i * n_ + j] * x[j];
        y[i] = s;
    }
    return y;
}

double Matrix::quad_form(std::span<const double> x) const { return dot(x, apply(x)); }

bool Matrix::is_symmetric(double tol) const {
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = i + 1; j < n_; ++j)
            if (std::abs((*this)(i, j) - (*this)(j, i)) > tol) return false;
    return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw UsageError("dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

namespace {

double off_diagonal_norm(const Matrix& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.dim(); ++i)
        for (std::size_t j = 0; j < m.dim(); ++j)
            if (i != j) s += m(i, j) * m(i, j);
    return std::sqrt(s);
}

double frobenius(const Matrix& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.dim(); ++i)
        for (std::size_t j = 0; j < m.dim(); ++j) s += m(i, j) * m(i, j);
    return std::sqrt(s);
}

}  // namespace

Vec jacobi_eigenvalues(const Matrix& input, double tol) {
    if (!input.is_symmetric(1e-12 * std::max(1.0, frobenius(input))))
        throw UsageError("jacobi_eigenvalues: matrix is not symmetric");
    Matrix m = input;
    const std::size_t n = m.dim();
    // Off-diagonal threshold relative to the matrix scale, so large spectra converge too.
    const double target = tol * std::max(1.0, frobenius(input));
    for (int sweep = 0; sweep < 100 && off_diagonal_norm(m) > target; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m(p, q);
                if (apq == 0.0) continue;
                const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m(k, p), mkq = m(k, q);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m(p, k), mqk = m(q, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(q, k) = s * mpk + c * mqk;
                }
            }
        }
    }
    Vec ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = m(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

SmoothnessConstants smoothness_constants(const Matrix& m) {
    if (m.dim() == 0) throw UsageError("smoothness_constants: empty matrix");
    const Vec ev = jacobi_eigenvalues(m);
    return {ev.back(), ev.front()};
}

QuadraticPair QuadraticPair::make(Matrix A, Vec a, Matrix B, Vec b) {
    const std::size_t n = a.size();
    if (A.dim() != n || B.dim() != n || b.size() != n)
        throw UsageError("QuadraticPair: inconsistent dimensions");
    QuadraticPair p{std::move(A), std::move(a), std::move(B), std::move(b)};
    p.L_unlearn = smoothness_constants(p.A).L;
    const auto sc = smoothness_constants(p.B);
    p.L_retain = sc.L;
    p.ell_retain = sc.ell;
    return p;
}

namespace {

Vec sub(std::span<const double> x, std::span<const double> y) {
    Vec d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - y[i];
    return d;
}

Vec axpy(std::span<const double> x, double s, std::span<const double> y) {
    Vec d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] + s * y[i];
    return d;
}

}  // namespace

double QuadraticPair::unlearn_loss(std::span<const double> x) const { return 0.5 * A.quad_form(sub(x, a)); }
double QuadraticPair::retain_loss(std::span<const double> x) const { return 0.5 * B.quad_form(sub(x, b)); }
Vec QuadraticPair::unlearn_grad(std::span<const double> x) const { return A.apply(sub(x, a)); }
Vec QuadraticPair::retain_grad(std::span<const double> x) const { return B.apply(sub(x, b)); }

Matrix random_psd(std::size_t n, CounterRng& rng, double max_condition) {
    if (n == 0) throw UsageError("random_psd: n must be positive");
    if (!(max_condition >= 1.0)) throw UsageError("random_psd: max_condition must be >= 1");
    // Orthonormal basis by Gram-Schmidt on Gaussian columns.
    std::vector<Vec> q;
    while (q.size() < n) {
        Vec v(n);
        for (auto& x : v) x = rng.normal();
        for (const auto& u : q) {
            const double c = dot(v, u);
            for (std::size_t i = 0; i < n; ++i) v[i] -= c * u[i];
        }
        const double nv = norm(v);
        if (nv < 1e-8) continue;
        for (auto& x : v) x /= nv;
        q.push_back(std::move(v));
    }
    const double lmax = std::exp(std::log(0.5) + rng.uniform() * std::log(20.0));
    const double cond = std::exp(rng.uniform() * std::log(max_condition));
    const double lmin = lmax / cond;
    Vec lam(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i == 0) lam[i] = lmax;
        else if (i == 1) lam[i] = lmin;
        else lam[i] = std::exp(std::log(lmin) + rng.uniform() * std::log(cond));
    }
    Matrix m(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += q[k][i] * lam[k] * q[k][j];
            m(i, j) = s;
            m(j, i) = s;
        }
    return m;
}

QuadraticPair random_quadratic_pair(std::size_t n, CounterRng& rng, double max_condition) {
    Matrix A = random_psd(n, rng, max_condition);
    Matrix B = random_psd(n, rng, max_condition);
    Vec a(n), b(n);
    for (auto& x : a) x = 2.0 * rng.normal();
    for (auto& x : b) x = 2.0 * rng.normal();
    return QuadraticPair::make(std::move(A), std::move(a), std::move(B), std::move(b));
}

double q_curvature(const Matrix& B, std::span<const double> g, double /*q*/) {
    return 0.5 * B.quad_form(g);
}

double q_curvature(const HessianQuadForm& hess_quad, std::span<const double> theta,
                   std::span<const double> g, double q) {
    constexpr int kIntervals = 64;  // 65 nodes
    const double h = 1.0 / kIntervals;
    double s = 0.0;
    for (int i = 0; i <= kIntervals; ++i) {
        const double a = i * h;
        const double w = (i == 0 || i == kIntervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        s += w * (1.0 - a) * hess_quad(axpy(theta, -a * q, g), g);
    }
    return s * h / 3.0;
}

Vec rectify(std::span<const double> g, std::span<const double> ref) {
    const double ip = dot(g, ref);
    const double nr = norm(ref);
    Vec out(g.begin(), g.end());
    if (ip >= 0.0 || nr < 1e-15) return out;
    const double c = ip / (nr * nr);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= c * ref[i];
    return out;
}

void VerificationReport::merge(const VerificationReport& o) {
    passed = passed && o.passed;
    out_of_hypothesis = out_of_hypothesis || o.out_of_hypothesis;
    steps_checked += o.steps_checked;
    violations += o.violations;
    degenerate_steps += o.degenerate_steps;
    rectified_steps += o.rectified_steps;
    descent_bound_violations += o.descent_bound_violations;
    min_delta = std::min(min_delta, o.min_delta);
    max_delta = std::max(max_delta, o.max_delta);
    condition_satisfied += o.condition_satisfied;
    condition_satisfied_failures += o.condition_satisfied_failures;
    condition_violated += o.condition_violated;
    condition_violated_failures += o.condition_violated_failures;
    identical_steps += o.identical_steps;
    worst_margin = std::max(worst_margin, o.worst_margin);
}

nlohmann::json to_json(const VerificationReport& r) {
    auto finite_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
    return {{"name", r.name},
            {"passed", r.passed},
            {"out_of_hypothesis", r.out_of_hypothesis},
            {"steps_checked", r.steps_checked},
            {"violations", r.violations},
            {"degenerate_steps", r.degenerate_steps},
            {"rectified_steps", r.rectified_steps},
            {"descent_bound_violations", r.descent_bound_violations},
            {"min_delta", finite_or_null(r.min_delta)},
            {"max_delta", finite_or_null(r.max_delta)},
            {"condition_satisfied", r.condition_satisfied},
            {"condition_satisfied_failures", r.condition_satisfied_failures},
            {"condition_violated", r.condition_violated},
            {"condition_violated_failures", r.condition_violated_failures},
            {"identical_steps", r.identical_steps},
            {"worst_margin", finite_or_null(r.worst_margin)}};
}

VerificationReport verify_theorem1(const QuadraticPair& pair, double lr, std::size_t steps,
                                   std::span<const double> theta0) {
    VerificationReport rep;
    rep.name = "theorem1";
    const double L = pair.L_unlearn;
    rep.out_of_hypothesis = !(lr > 0.0 && lr < 2.0 / L);
    Vec x(theta0.begin(), theta0.end());
    for (std::size_t t = 0; t < steps; ++t) {
        const Vec gu = pair.unlearn_grad(x);
        const Vec gr = pair.retain_grad(x);
        const double nu = norm(gu), nr = norm(gr);
        if (nu == 0.0) break;  // stationary
        const double l0 = pair.unlearn_loss(x);
        ++rep.steps_checked;
        if (nr >= 1e-15 && dot(gu, gr) / (nu * nr) <= -1.0 + 1e-12) {
            // Rectification annihilates the update; nothing moves from here on.
            ++rep.degenerate_steps;
            rep.min_delta = std::min(rep.min_delta, 0.0);
            rep.max_delta = std::max(rep.max_delta, 0.0);
            break;
        }
        const Vec g = rectify(gu, gr);
        if (dot(gu, gr) < 0.0 && nr >= 1e-15) ++rep.rectified_steps;
        const Vec x1 = axpy(x, -lr, g);
        const double l1 = pair.unlearn_loss(x1);
        const double delta = l1 - l0;
        rep.min_delta = std::min(rep.min_delta, delta);
        rep.max_delta = std::max(rep.max_delta, delta);
        if (l1 > l0 + 1e-9 * std::abs(l0)) ++rep.violations;
        const double lin = lr * dot(gu, g);
        const double quad = 0.5 * L * lr * lr * dot(g, g);
        if (l1 > l0 - lin + quad + 1e-9 * (std::abs(l0) + std::abs(lin) + quad))
            ++rep.descent_bound_violations;
        x = x1;
    }
    rep.passed = rep.violations == 0 && rep.descent_bound_violations == 0;
    return rep;
}

VerificationReport verify_theorem1(const QuadraticPair& pair, double lr, std::size_t steps,
                                   CounterRng& rng) {
    Vec x0(pair.dim());
    for (auto& v : x0) v = 3.0 * rng.normal();
    return verify_theorem1(pair, lr, steps, x0);
}

GuSample gaussian_gu_sampler(const QuadraticPair& pair, CounterRng& rng) {
    const std::size_t n = pair.dim();
    GuSample s;
    s.theta.resize(n);
    for (auto& v : s.theta) v = 3.0 * rng.normal();
    // Mix of a signed multiple of grad R and isotropic noise at a random scale,
    // so the conflict angle covers the whole range, near-(anti)parallel included.
    const Vec gr = pair.retain_grad(s.theta);
    const double nr = norm(gr);
    const double along = rng.normal();
    const double noise = std::pow(10.0, -3.0 + 4.0 * rng.uniform());
    s.g_u.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        s.g_u[i] = (nr > 0 ? along * gr[i] / nr : 0.0) + noise * rng.normal();
    return s;
}

VerificationReport verify_theorem2(const QuadraticPair& pair, double lr, const GuSampler& sampler,
                                   std::size_t trials, CounterRng& rng) {
    if (trials == 0) throw UsageError("verify_theorem2: trials must be >= 1");
    VerificationReport rep;
    rep.name = "theorem2";
    const double L = pair.L_retain;
    const double ell = pair.ell_retain;
    const bool cond_b = lr > 0.0 && lr <= 2.0 / L;
    rep.out_of_hypothesis = !cond_b;
    for (std::size_t k = 0; k < trials; ++k) {
        const GuSample s = sampler(pair, rng);
        const Vec gr = pair.retain_grad(s.theta);
        const double nu = norm(s.g_u), nr = norm(gr);
        if (nu == 0.0 || nr == 0.0) continue;
        ++rep.steps_checked;
        const double c = std::clamp(dot(s.g_u, gr) / (nu * nr), -1.0, 1.0);
        const double sin2 = 1.0 - c * c;
        const bool cond_a = ell >= L * sin2;
        const Vec g = rectify(s.g_u, gr);
        const bool fired = dot(s.g_u, gr) < 0.0 && nr >= 1e-15;
        if (fired) ++rep.rectified_steps;
        else ++rep.identical_steps;
        const double r_gru = pair.retain_loss(axpy(s.theta, -lr, g));
        const double r_plain = pair.retain_loss(axpy(s.theta, -lr, s.g_u));
        const double tol = 1e-9 * (1.0 + std::abs(r_plain));
        const bool fails = r_gru > r_plain + tol;
        if (cond_a && cond_b) {
            ++rep.condition_satisfied;
            rep.condition_satisfied_failures += fails;
            rep.worst_margin = std::max(rep.worst_margin, r_gru - r_plain - tol);
        } else {
            ++rep.condition_violated;
            rep.condition_violated_failures += fails;
        }
    }
    rep.violations = rep.condition_satisfied_failures;
    rep.passed = rep.condition_satisfied_failures == 0;
    return rep;
}

namespace {

std::size_t draw_dim(const SuiteOptions& opt, CounterRng& rng) {
    if (opt.min_dim < 1 || opt.max_dim < opt.min_dim) throw UsageError("suite: invalid dimension range");
    return opt.min_dim + rng.below(opt.max_dim - opt.min_dim + 1);
}

}  // namespace

VerificationReport theorem1_suite(const SuiteOptions& opt) {
    VerificationReport total;
    total.name = "theorem1_suite";
    const CounterRng root = CounterRng(opt.seed).derive("theorem1");
    for (std::size_t i = 0; i < opt.instances; ++i) {
        CounterRng rng = root.derive(i);
        const auto pair = random_quadratic_pair(draw_dim(opt, rng), rng);
        total.merge(verify_theorem1(pair, opt.lr_factor / pair.L_unlearn, opt.steps, rng));
    }
    return total;
}

VerificationReport theorem1_degenerate_suite(std::size_t cases, std::uint64_t seed) {
    VerificationReport total;
    total.name = "theorem1_degenerate";
    std::size_t detected = 0;
    const CounterRng root = CounterRng(seed).derive("theorem1.degenerate");
    for (std::size_t i = 0; i < cases; ++i) {
        CounterRng rng = root.derive(i);
        const std::size_t n = 2 + rng.below(9);
        // A = B makes A(x - a) and B(x + a) anti-parallel for x on the open segment (-a, a).
        Matrix A = i % 2 ? random_psd(n, rng, 1e3) : Matrix::identity(n);
        Vec a(n);
        for (auto& v : a) v = 1.0 + rng.uniform();
        Vec b(n);
        for (std::size_t k = 0; k < n; ++k) b[k] = -a[k];
        const auto pair = QuadraticPair::make(A, a, A, b);
        const double t = -0.9 + 1.8 * rng.uniform();
        Vec x0(n);
        for (std::size_t k = 0; k < n; ++k) x0[k] = t * a[k];
        auto rep = verify_theorem1(pair, 1.9 / pair.L_unlearn, 5, x0);
        if (rep.degenerate_steps > 0 && rep.max_delta == 0.0 && rep.min_delta == 0.0) ++detected;
        total.merge(rep);
    }
    total.passed = total.passed && detected == cases;
    return total;
}

VerificationReport theorem2_suite(const SuiteOptions& opt) {
    VerificationReport total;
    total.name = "theorem2_suite";
    const CounterRng root = CounterRng(opt.seed).derive("theorem2");
    for (std::size_t i = 0; i < opt.instances; ++i) {
        CounterRng rng = root.derive(i);
        const auto pair = random_quadratic_pair(draw_dim(opt, rng), rng);
        total.merge(verify_theorem2(pair, opt.lr_factor / pair.L_retain, gaussian_gu_sampler,
                                    opt.trials, rng));
    }
    return total;
}

namespace {

// Near the retain minimizer, with g~ orthogonal to grad R and g_u = g~ - k u,
// a rotated B can make the plain step cheaper than the rectified one.
GuSample adversarial_sampler(const QuadraticPair& pair, CounterRng& rng) {
    GuSample s;
    const double ang = 2.0 * std::numbers::pi * rng.uniform();
    const double eps = std::pow(10.0, -4.0 + 3.0 * rng.uniform());
    s.theta = {pair.b[0] + eps * std::cos(ang), pair.b[1] + eps * std::sin(ang)};
    const Vec gr = pair.retain_grad(s.theta);
    const double nr = norm(gr);
    const Vec u{gr[0] / nr, gr[1] / nr};
    Vec w{-u[1], u[0]};
    if (dot(w, pair.B.apply(u)) < 0.0) w = {-w[0], -w[1]};
    const double k = 0.05 + 0.95 * rng.uniform();
    s.g_u = {w[0] - k * u[0], w[1] - k * u[1]};
    return s;
}

}  // namespace

VerificationReport theorem2_adversarial(std::size_t instances, std::uint64_t seed) {
    VerificationReport total;
    total.name = "theorem2_adversarial";
    const CounterRng root = CounterRng(seed).derive("theorem2.adversarial");
    for (std::size_t i = 0; i < instances; ++i) {
        CounterRng rng = root.derive(i);
        const double kappa = std::pow(10.0, 0.5 + 1.5 * rng.uniform());
        const double psi = std::numbers::pi * rng.uniform();
        const double c = std::cos(psi), s = std::sin(psi);
        Matrix B(2, {c * c + kappa * s * s, (1.0 - kappa) * c * s, (1.0 - kappa) * c * s,
                     s * s + kappa * c * c});
        Vec b{rng.normal(), rng.normal()};
        auto pair = QuadraticPair::make(Matrix::identity(2), Vec{rng.normal(), rng.normal()}, B, b);
        total.merge(verify_theorem2(pair, 1.9 / pair.L_retain, adversarial_sampler, 20, rng));
    }
    return total;
}

}  // namespace gradrect::theory
