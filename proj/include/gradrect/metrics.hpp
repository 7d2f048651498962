#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradrect/model.hpp"
#include "gradrect/rng.hpp"

namespace gradrect {

/// One logged unlearning step.
struct StepRecord {
    std::size_t step = 0;
    double unlearn_loss = 0.0;
    double retain_risk = 0.0;            // retain NLL on the fixed probe set, after the step
    std::optional<double> cos_pre;       // cos(g_u, ema retain gradient)
    std::optional<double> cos_post;      // cos(applied gradient, ema retain gradient)
    double norm_gu = 0.0;
    double norm_rectified = 0.0;
    double norm_ema = 0.0;
    bool rectified = false;
    bool degenerate = false;
    std::vector<std::size_t> batch_u;    // indices into D_u
    std::vector<std::size_t> batch_r;    // indices into D_r
};

/// Column layout of trajectory CSVs. Bump the version when columns change.
inline constexpr const char* kTrajectoryCsvSchema = "trajectory-v1";
inline constexpr const char* kTrajectoryCsvHeader =
    "step,unlearn_loss,retain_risk,cos_pre,cos_post,norm_gu,norm_rectified,norm_ema,"
    "rectified,degenerate,batch_u,batch_r";

/// Header plus one row per record. Reals use 17 significant digits, missing
/// cosines are empty fields, batch index lists are ';'-joined.
void write_trajectory_csv(const std::vector<StepRecord>& log, const std::filesystem::path& path);
std::vector<StepRecord> read_trajectory_csv(const std::filesystem::path& path);

/// Cosine similarity; nullopt when either norm is below 1e-15.
std::optional<double> cosine(std::span<const double> a, std::span<const double> b);
template <typename A, typename B>
std::optional<double> cosine(const FlatVector<A>& a, const FlatVector<B>& b) {
    return cosine(a.values(), b.values());
}

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
    double log_p_value = 0.0;  // stays finite when p_value underflows
    bool exact = false;
};

enum class KsMethod { Asymptotic, Exact };

/// Two-sided two-sample Kolmogorov-Smirnov test. The asymptotic p-value uses
/// Q(lambda) with lambda = (sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * D,
/// ne = n*m/(n+m). KsMethod::Exact enumerates every split of the pooled sample
/// and is limited to n, m <= 10. Both samples need at least 5 values.
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b,
                       KsMethod method = KsMethod::Asymptotic);

/// Kolmogorov survival function Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2),
/// truncated once terms drop below 1e-12. Clamped to [0, 1].
double kolmogorov_q(double lambda);

/// Per-sequence NLLs of `model` on `seqs`.
std::vector<double> sequence_nlls(const Model& model, const Batch& seqs);

/// ln(p-value) of the KS test between per-sequence forget NLLs of the
/// unlearned model and the retrained gold model. 0 is the optimum.
double fq_proxy(const Model& unlearned, const Model& retrained_gold, const Batch& forget_set);
KsResult fq_test(const Model& unlearned, const Model& retrained_gold, const Batch& forget_set);

/// Harmonic mean of the given components in [0, 1]; 0 if any component is 0.
double harmonic_mean(std::span<const double> components);

/// Harmonic mean of (retain token accuracy, holdout token accuracy,
/// exp(-retain NLL per token)).
double mu_proxy(const Model& model, const Batch& retain_set, const Batch& holdout_set);

struct EvalReport {
    double forget_nll = 0.0;   // per token
    double retain_nll = 0.0;   // per token
    double holdout_nll = 0.0;  // per token
    double retain_token_acc = 0.0;
    double holdout_token_acc = 0.0;
    double fq_proxy = 0.0;
    double ks_statistic = 0.0;
    double mu_proxy = 0.0;
};

EvalReport evaluate(const Model& model, const Model& retrained_gold, const Batch& forget_set,
                    const Batch& retain_set, const Batch& holdout_set);

nlohmann::json to_json(const EvalReport& report);

/// Fixed seed-determined subsample (without replacement) used to track retain
/// risk along a trajectory.
Batch retain_probe(const Batch& retain_set, std::size_t n, CounterRng rng);

}  // namespace gradrect
