#pragma once

// Test-side reference implementations. None of these call into the library
// code they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Active-set solver for min 0.5 x'Hx - c'x subject to A x >= b, H positive
/// definite. Dense KKT solves via Eigen; meant for a handful of constraints.
inline Eigen::VectorXd active_set_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& c,
                                     const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                     int max_iter = 50) {
    const Eigen::Index n = H.rows();
    const Eigen::Index m = A.rows();
    std::vector<Eigen::Index> active;
    Eigen::VectorXd x = H.ldlt().solve(c);
    for (int it = 0; it < max_iter; ++it) {
        // Add the most violated constraint.
        Eigen::Index worst = -1;
        double worst_v = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            const double v = A.row(i).dot(x) - b(i);
            if (v < worst_v && std::find(active.begin(), active.end(), i) == active.end()) {
                worst_v = v;
                worst = i;
            }
        }
        if (worst < 0) return x;
        active.push_back(worst);
        for (;;) {
            const auto k = static_cast<Eigen::Index>(active.size());
            Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + k, n + k);
            Eigen::VectorXd rhs(n + k);
            K.topLeftCorner(n, n) = H;
            for (Eigen::Index j = 0; j < k; ++j) {
                K.block(0, n + j, n, 1) = -A.row(active[j]).transpose();
                K.block(n + j, 0, 1, n) = A.row(active[j]);
                rhs(n + j) = b(active[j]);
            }
            rhs.head(n) = c;
            const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
            x = sol.head(n);
            // Drop a constraint with a negative multiplier and re-solve.
            Eigen::Index drop = -1;
            for (Eigen::Index j = 0; j < k; ++j)
                if (sol(n + j) < 0.0) drop = j;
            if (drop < 0) break;
            active.erase(active.begin() + drop);
            if (active.empty()) {
                x = H.ldlt().solve(c);
                break;
            }
        }
    }
    return x;
}

/// argmin 0.5||x - g||^2 subject to <x, ref> >= 0.
inline std::vector<double> half_space_projection(std::span<const double> g,
                                                 std::span<const double> ref) {
    const auto n = static_cast<Eigen::Index>(g.size());
    const Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd c(n);
    Eigen::MatrixXd A(1, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        c(i) = g[static_cast<std::size_t>(i)];
        A(0, i) = ref[static_cast<std::size_t>(i)];
    }
    const Eigen::VectorXd x = active_set_qp(H, c, A, Eigen::VectorXd::Zero(1));
    return {x.data(), x.data() + n};
}

/// sup_t |F_a(t) - F_b(t)| by direct counting at every pooled point.
inline double ks_statistic_bruteforce(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    double d = 0.0;
    for (double t : pooled) {
        std::size_t ca = 0, cb = 0;
        for (double x : a) ca += x <= t;
        for (double x : b) cb += x <= t;
        const double diff = static_cast<double>(ca) / static_cast<double>(a.size()) -
                            static_cast<double>(cb) / static_cast<double>(b.size());
        d = std::max(d, std::abs(diff));
    }
    return d;
}

/// Kolmogorov survival function summed term by term, no early exit.
inline double kolmogorov_series(double lambda, int terms = 200) {
    double s = 0.0;
    for (int k = 1; k <= terms; ++k)
        s += (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    return std::clamp(2.0 * s, 0.0, 1.0);
}

/// Central differences, written independently of the library's helper.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = f(x);
        x[i] = x0 - h;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double rel_l2(std::span<const double> a, std::span<const double> b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

/// Eigenvalues of a symmetric matrix, ascending.
inline std::vector<double> sym_eigenvalues(const std::vector<double>& rowmajor, std::size_t n) {
    Eigen::MatrixXd m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m(i, j) = rowmajor[i * n + j];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    return {es.eigenvalues().data(), es.eigenvalues().data() + n};
}

}  // namespace oracle
