#include "gradrect/tru.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect {

const char* to_string(ConstraintSign sign) {
    return sign == ConstraintSign::GruConsistent ? "gru_consistent" : "negated_delta";
}

ConstraintSign constraint_sign_from_string(const std::string& name) {
    if (name == "gru_consistent") return ConstraintSign::GruConsistent;
    if (name == "negated_delta") return ConstraintSign::NegatedDelta;
    throw UsageError(fmt::format("unknown constraint sign '{}'", name));
}

void TruConfig::validate(std::size_t n_unlearn) const {
    if (k_subsets < 2) throw UsageError("TRU needs at least 2 subsets");
    if (k_subsets > n_unlearn)
        throw UsageError(fmt::format("TRU: {} subsets but only {} unlearn sequences", k_subsets, n_unlearn));
    if (!(ft_lr > 0.0) || !std::isfinite(ft_lr)) throw UsageError("TRU: ft_lr must be positive");
    if (!(stg >= 0.0) || !std::isfinite(stg)) throw UsageError("TRU: stg must be >= 0");
}

TaskVector compute_task_vector(const Model& org, const Batch& subset, std::size_t steps, double lr) {
    if (subset.empty()) throw UsageError("compute_task_vector: empty subset");
    ParamVector theta = org.params();
    for (std::size_t t = 0; t < steps; ++t) {
        // Ascent on mean log p is descent on mean NLL.
        const GradientVector g = grad_nll(org.with_params(theta), subset);
        theta = displaced(theta, -lr, g);
        if (!theta.all_finite())
            throw NumericError(fmt::format("task-vector fine-tuning diverged at step {}", t));
    }
    TaskVector tv;
    tv.delta = difference(theta, org.params());
    tv.ref_grad = GradientVector::zeros_like(org.params());
    return tv;
}

GradientVector reference_grad(const Model& org, const Batch& complement) {
    if (complement.empty()) throw UsageError("reference_grad: empty complement");
    return grad_nll(org, complement);
}

TaskVector rectify_task_vector(TaskVector tv, ConstraintSign sign, bool* skipped) {
    if (tv.rectified) throw UsageError("rectify_task_vector: already rectified");
    require_same_size(tv.delta.size(), tv.ref_grad.size(), "rectify_task_vector");
    if (skipped) *skipped = false;
    const double nr = norm(tv.ref_grad);
    tv.rectified = true;
    if (nr < 1e-15) {
        if (skipped) *skipped = true;
        return tv;
    }
    const double ip = dot(tv.delta, tv.ref_grad);
    const bool violates = sign == ConstraintSign::GruConsistent ? ip < 0.0 : ip > 0.0;
    if (violates) axpy(tv.delta, -ip / (nr * nr), tv.ref_grad);
    return tv;
}

TaskVector normalize_task_vector(TaskVector tv) {
    const double n = norm(tv.delta);
    if (!(n > 1e-15))
        throw DegenerateVectorError(fmt::format("task vector of subset {} has norm {}", tv.subset_id, n));
    tv.delta = (1.0 / n) * tv.delta;
    tv.normalized = true;
    return tv;
}

std::vector<std::vector<std::size_t>> partition_subsets(std::size_t n, std::size_t k, CounterRng rng) {
    if (k == 0 || k > n) throw UsageError("partition_subsets: need 1 <= k <= n");
    const auto perm = random_permutation(n, rng);
    const std::size_t base = n / k;
    std::vector<std::vector<std::size_t>> parts(k);
    for (std::size_t s = 0; s < k; ++s) {
        const std::size_t begin = s * base;
        const std::size_t end = s + 1 == k ? n : begin + base;
        parts[s].assign(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                        perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return parts;
}

std::pair<ParamVector, TruLog> tru_unlearn(const Model& org, const Batch& unlearn_set,
                                           const TruConfig& cfg) {
    cfg.validate(unlearn_set.size());
    const auto parts = partition_subsets(unlearn_set.size(), cfg.k_subsets,
                                         CounterRng(cfg.seed).derive("partition"));
    TruLog log;
    GradientVector sum = GradientVector::zeros_like(org.params());
    std::size_t used = 0;
    for (std::size_t s = 0; s < parts.size(); ++s) {
        std::vector<bool> in_subset(unlearn_set.size(), false);
        Batch subset, complement;
        for (std::size_t i : parts[s]) {
            in_subset[i] = true;
            subset.push_back(unlearn_set[i]);
        }
        for (std::size_t i = 0; i < unlearn_set.size(); ++i)
            if (!in_subset[i]) complement.push_back(unlearn_set[i]);

        TaskVector tv = compute_task_vector(org, subset, cfg.ft_steps, cfg.ft_lr);
        tv.subset_id = s;
        tv.ref_grad = reference_grad(org, complement);

        SubsetDiagnostics d;
        d.subset_id = s;
        d.size = subset.size();
        d.norm_raw = norm(tv.delta);
        d.norm_ref = norm(tv.ref_grad);
        d.inner_raw = dot(tv.delta, tv.ref_grad);
        if (cfg.rectify) {
            bool skipped = false;
            tv = rectify_task_vector(std::move(tv), cfg.constraint_sign, &skipped);
            if (skipped) log.events.push_back(fmt::format("subset {}: zero reference gradient, not rectified", s));
        }
        d.norm_rectified = norm(tv.delta);
        d.inner_rectified = dot(tv.delta, tv.ref_grad);
        d.fired = cfg.rectify && d.inner_rectified != d.inner_raw;
        try {
            tv = normalize_task_vector(std::move(tv));
            axpy(sum, 1.0, tv.delta);
            ++used;
        } catch (const DegenerateVectorError& e) {
            d.degenerate = true;
            log.events.push_back(fmt::format("subset {} excluded: {}", s, e.what()));
        }
        log.subsets.push_back(d);
    }
    if (used == 0) throw DegenerateVectorError("every TRU subset produced a degenerate task vector");
    ParamVector theta =
        displaced(org.params(), -cfg.stg / static_cast<double>(cfg.k_subsets), sum);
    return {std::move(theta), std::move(log)};
}

void write_tru_diagnostics_csv(const TruLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << "subset_id,size,norm_raw,norm_rectified,norm_ref,inner_raw,inner_rectified,fired,degenerate\n";
    for (const auto& d : log.subsets)
        out << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{}\n", d.subset_id, d.size,
                           d.norm_raw, d.norm_rectified, d.norm_ref, d.inner_raw, d.inner_rectified,
                           d.fired ? 1 : 0, d.degenerate ? 1 : 0);
    out.flush();
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

}  // namespace gradrect
