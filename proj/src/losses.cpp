#include "gradrect/losses.hpp"

#include <cmath>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect {

const char* to_string(LossKind kind) {
    switch (kind) {
        case LossKind::GA: return "GA";
        case LossKind::GD: return "GD";
        case LossKind::NPO: return "NPO";
        case LossKind::NPO_GD: return "NPO_GD";
        case LossKind::NPO_KL: return "NPO_KL";
    }
    return "?";
}

LossKind loss_kind_from_string(const std::string& name) {
    for (LossKind k : {LossKind::GA, LossKind::GD, LossKind::NPO, LossKind::NPO_GD, LossKind::NPO_KL})
        if (name == to_string(k)) return k;
    throw UsageError(fmt::format("unknown loss kind '{}'", name));
}

bool is_npo_family(LossKind kind) {
    return kind == LossKind::NPO || kind == LossKind::NPO_GD || kind == LossKind::NPO_KL;
}

void LossSpec::validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) throw UsageError("lambda must be finite and >= 0");
    if (!std::isfinite(beta) || beta <= 0.0) throw UsageError("beta must be finite and > 0");
    if (is_npo_family(kind) && !reference)
        throw UsageError(fmt::format("{} requires a reference model", to_string(kind)));
}

double softplus(double z) {
    if (z > 30.0) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace {

void require_nonempty(const Batch& b, const char* what) {
    if (b.empty()) throw UsageError(fmt::format("{}: empty batch", what));
}

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(fmt::format("{}: non-finite value", what));
}

// (sign / n) * sum log p(s) and its gradient.
LossValue scaled_loglik(const Model& model, const Batch& batch, double sign, const char* what) {
    require_nonempty(batch, what);
    check_batch_vocab(batch, model.vocab_size());
    const ForwardPass pass = forward(model);
    const double w = sign / static_cast<double>(batch.size());
    LogLikAdjoint adj(model.vocab_size());
    double total = 0.0;
    for (const auto& s : batch) {
        total += log_prob(pass, s);
        adj.add_sequence(s, w);
    }
    LossValue out{w * total, adj.gradient(model, pass)};
    require_finite(out.value, what);
    return out;
}

void add_scaled(LossValue& acc, double s, const LossValue& term) {
    acc.value += s * term.value;
    axpy(acc.grad, s, term.grad);
}

void require_same_arch(const Model& a, const Model& b) {
    if (a.params().segments() != b.params().segments() || a.vocab_size() != b.vocab_size())
        throw UsageError("reference model architecture differs from the trained model");
}

}  // namespace

LossValue ga_loss(const Model& model, const Batch& batch_u) {
    return scaled_loglik(model, batch_u, 1.0, "ga_loss");
}

LossValue retain_loss(const Model& model, const Batch& batch_r) {
    return scaled_loglik(model, batch_r, -1.0, "retain_loss");
}

LossValue gd_loss(const Model& model, const Batch& batch_u, const Batch& batch_r, double lambda) {
    if (!(lambda >= 0.0)) throw UsageError("gd_loss: lambda must be >= 0");
    LossValue out = ga_loss(model, batch_u);
    if (lambda != 0.0) add_scaled(out, lambda, retain_loss(model, batch_r));
    else require_nonempty(batch_r, "gd_loss");
    return out;
}

LossValue npo_loss(const Model& model, const Model& reference, const Batch& batch_u, double beta,
                   bool length_normalized) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw UsageError("npo_loss: beta must be > 0");
    require_nonempty(batch_u, "npo_loss");
    require_same_arch(model, reference);
    check_batch_vocab(batch_u, model.vocab_size());
    const ForwardPass pass = forward(model);
    const ForwardPass ref = forward(reference);
    const double inv_n = 1.0 / static_cast<double>(batch_u.size());
    LogLikAdjoint adj(model.vocab_size());
    double total = 0.0;
    for (const auto& s : batch_u) {
        const double len = length_normalized ? static_cast<double>(s.size()) : 1.0;
        const double x = (log_prob(pass, s) - log_prob(ref, s)) / len;
        const double z = beta * x;
        require_finite(z, "npo_loss log-ratio");
        total += (2.0 / beta) * softplus(z);
        adj.add_sequence(s, inv_n * 2.0 * sigmoid(z) / len);
    }
    LossValue out{inv_n * total, adj.gradient(model, pass)};
    require_finite(out.value, "npo_loss");
    return out;
}

LossValue kl_regularizer(const Model& model, const Model& reference, const Batch& batch_r) {
    require_nonempty(batch_r, "kl_regularizer");
    require_same_arch(model, reference);
    check_batch_vocab(batch_r, model.vocab_size());
    const ForwardPass pass = forward(model);
    const ForwardPass ref = forward(reference);
    const std::size_t V = model.vocab_size();

    // KL per context, counted once per visiting position.
    std::vector<std::size_t> visits(V + 1, 0);
    std::size_t positions = 0;
    for (const auto& s : batch_r) {
        std::size_t ctx = V;
        for (TokenId t : s) {
            ++visits[ctx];
            ++positions;
            ctx = t;
        }
    }
    const double w = 1.0 / static_cast<double>(positions);
    LogLikAdjoint adj(V);
    std::vector<double> q(V);
    double total = 0.0;
    for (std::size_t c = 0; c <= V; ++c) {
        if (visits[c] == 0) continue;
        const auto lq = ref.row(c);
        const auto lp = pass.row(c);
        double kl = 0.0;
        for (std::size_t v = 0; v < V; ++v) {
            q[v] = std::exp(lq[v]);
            kl += q[v] * (lq[v] - lp[v]);
        }
        total += static_cast<double>(visits[c]) * kl;
        adj.add_target(c, q, -w * static_cast<double>(visits[c]));
    }
    LossValue out{w * total, adj.gradient(model, pass)};
    require_finite(out.value, "kl_regularizer");
    return out;
}

LossValue composite_loss(const LossSpec& spec, const Model& model, const Batch& batch_u,
                         const Batch& batch_r) {
    spec.validate();
    switch (spec.kind) {
        case LossKind::GA: return ga_loss(model, batch_u);
        case LossKind::GD: return gd_loss(model, batch_u, batch_r, spec.lambda);
        case LossKind::NPO:
            return npo_loss(model, *spec.reference, batch_u, spec.beta, spec.length_normalized);
        case LossKind::NPO_GD: {
            LossValue out = npo_loss(model, *spec.reference, batch_u, spec.beta, spec.length_normalized);
            if (spec.lambda != 0.0) add_scaled(out, spec.lambda, retain_loss(model, batch_r));
            return out;
        }
        case LossKind::NPO_KL: {
            LossValue out = npo_loss(model, *spec.reference, batch_u, spec.beta, spec.length_normalized);
            if (spec.lambda != 0.0)
                add_scaled(out, spec.lambda, kl_regularizer(model, *spec.reference, batch_r));
            return out;
        }
    }
    throw UsageError("unknown loss kind");
}

}  // namespace gradrect
