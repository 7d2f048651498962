#pragma once

#include <optional>
#include <string>

#include "gradrect/model.hpp"

namespace gradrect {

struct LossValue {
    double value = 0.0;
    GradientVector grad;
};

enum class LossKind { GA, GD, NPO, NPO_GD, NPO_KL };

const char* to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);
bool is_npo_family(LossKind kind);

struct LossSpec {
    LossKind kind = LossKind::GA;
    double lambda = 1.0;  // regularizer weight for GD / NPO_GD / NPO_KL
    double beta = 0.1;    // NPO inverse temperature
    /// Divide each sequence's log-ratio by its length before the NPO link.
    bool length_normalized = false;
    /// Frozen model before unlearning; required by the NPO family.
    std::optional<Model> reference;

    /// Throws UsageError on a missing reference, negative lambda, or
    /// non-positive beta.
    void validate() const;
};

/// (1/n) sum log p(s); minimizing it drives the forget likelihood down.
LossValue ga_loss(const Model& model, const Batch& batch_u);

/// -(1/m) sum log p(s)
LossValue retain_loss(const Model& model, const Batch& batch_r);

/// ga_loss + lambda * retain_loss
LossValue gd_loss(const Model& model, const Batch& batch_u, const Batch& batch_r,
                  double lambda = 1.0);

/// (1/n) sum (2/beta) log(1 + (p(s)/p_ref(s))^beta), evaluated as
/// (2/beta) softplus(beta * (log p - log p_ref)). Its gradient is GA's,
/// reweighted per sequence by 2 * sigmoid(beta * log-ratio).
LossValue npo_loss(const Model& model, const Model& reference, const Batch& batch_u,
                   double beta = 0.1, bool length_normalized = false);

/// Mean over all batch positions of KL(p_ref(.|ctx) || p(.|ctx)).
LossValue kl_regularizer(const Model& model, const Model& reference, const Batch& batch_r);

/// GA | GD = GA + l*retain | NPO | NPO_GD = NPO + l*retain | NPO_KL = NPO + l*KL
LossValue composite_loss(const LossSpec& spec, const Model& model, const Batch& batch_u,
                         const Batch& batch_r);

/// log(1 + e^z) without overflow: the exponent fed to exp never exceeds 30.
double softplus(double z);
double sigmoid(double z);

}  // namespace gradrect
