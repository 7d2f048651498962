#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gradrect/model.hpp"
#include "gradrect/rng.hpp"

namespace gradrect {

/// Which half-space a rectified task vector is projected onto.
///   GruConsistent: <T~, ref> >= 0, so applying -T~ does not raise the
///                  reference NLL to first order.
///   NegatedDelta:  <-T~, ref> >= 0, the constraint stated on the applied
///                  update -T~.
enum class ConstraintSign { GruConsistent, NegatedDelta };

const char* to_string(ConstraintSign sign);
ConstraintSign constraint_sign_from_string(const std::string& name);

struct TaskVector {
    GradientVector delta;     // theta_finetuned - theta_org
    std::size_t subset_id = 0;
    GradientVector ref_grad;  // grad of the NLL over the complement, at theta_org
    bool rectified = false;
    bool normalized = false;
};

struct TruConfig {
    std::size_t k_subsets = 4;
    std::size_t ft_steps = 5;
    double ft_lr = 1e-4;
    double stg = 0.7;
    ConstraintSign constraint_sign = ConstraintSign::GruConsistent;
    /// Off gives the plain task-vector baseline (same pipeline, no projection).
    bool rectify = true;
    std::uint64_t seed = 0;

    void validate(std::size_t n_unlearn) const;
};

/// T full-batch ascent steps on the subset's mean log-likelihood starting at
/// theta_org; returns the displacement.
TaskVector compute_task_vector(const Model& org, const Batch& subset, std::size_t steps,
                               double lr);

/// Gradient of the mean NLL of the complement at theta_org.
GradientVector reference_grad(const Model& org, const Batch& complement);

/// Projects tv.delta onto the configured half-space of tv.ref_grad. A
/// reference gradient with norm < 1e-15 leaves the vector as is and sets
/// `*skipped` when provided.
TaskVector rectify_task_vector(TaskVector tv, ConstraintSign sign, bool* skipped = nullptr);

/// Scales to unit norm; DegenerateVectorError when ||delta|| <= 1e-15.
TaskVector normalize_task_vector(TaskVector tv);

/// Seeded shuffle of [0, n) cut into k parts of size n/k, the last part
/// taking the remainder.
std::vector<std::vector<std::size_t>> partition_subsets(std::size_t n, std::size_t k,
                                                        CounterRng rng);

struct SubsetDiagnostics {
    std::size_t subset_id = 0;
    std::size_t size = 0;
    double norm_raw = 0.0;
    double norm_rectified = 0.0;
    double norm_ref = 0.0;
    double inner_raw = 0.0;        // <T, ref>
    double inner_rectified = 0.0;  // <T~, ref>
    bool fired = false;
    bool degenerate = false;
};

struct TruLog {
    std::vector<SubsetDiagnostics> subsets;
    std::vector<std::string> events;
};

/// theta_org - (stg / K) * sum of the rectified, unit-normalized task vectors.
/// Degenerate subsets drop out of the sum; the divisor stays K.
std::pair<ParamVector, TruLog> tru_unlearn(const Model& org, const Batch& unlearn_set,
                                           const TruConfig& cfg);

void write_tru_diagnostics_csv(const TruLog& log, const std::filesystem::path& path);

}  // namespace gradrect
