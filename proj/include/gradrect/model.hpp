#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gradrect/dataset.hpp"
#include "gradrect/param_vector.hpp"
#include "gradrect/rng.hpp"

namespace gradrect {

enum class ModelKind { TabularBigram, MlpLm };

const char* to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Autoregressive next-token model conditioned on the previous token.
///
/// The first token of every sequence is conditioned on a dedicated BOS
/// context (index V), so p(s) is a proper distribution over sequences of a
/// given length. Two architectures share this interface:
///   TabularBigram: one logit row per context, (V+1) x V parameters.
///   MlpLm: BOS-augmented embedding (V+1) x d, tanh hidden layer h,
///          affine output V.
class Model {
public:
    static Model tabular_bigram(std::size_t vocab_size);
    static Model mlp_lm(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim,
                        CounterRng& rng, double init_scale = 0.3);

    /// Rebuilds a model around existing parameters; layout must match.
    static Model from_params(ModelKind kind, std::size_t vocab_size, std::size_t embed_dim,
                             std::size_t hidden_dim, ParamVector params);

    /// Same architecture, different parameters.
    Model with_params(ParamVector params) const;

    ModelKind kind() const { return kind_; }
    std::size_t vocab_size() const { return vocab_; }
    std::size_t embed_dim() const { return embed_; }
    std::size_t hidden_dim() const { return hidden_; }
    std::size_t num_contexts() const { return vocab_ + 1; }
    std::size_t bos() const { return vocab_; }

    const ParamVector& params() const { return params_; }

    static SegmentTable layout(ModelKind kind, std::size_t vocab_size, std::size_t embed_dim,
                               std::size_t hidden_dim);

private:
    Model(ModelKind kind, std::size_t vocab, std::size_t embed, std::size_t hidden,
          ParamVector params);

    ModelKind kind_;
    std::size_t vocab_;
    std::size_t embed_;
    std::size_t hidden_;
    ParamVector params_;
};

/// Forward pass over every context. Because both architectures condition only
/// on the previous token, one pass yields every next-token distribution the
/// model can produce.
struct ForwardPass {
    std::size_t vocab = 0;
    std::vector<double> log_probs;  // (V+1) x V, row-major by context
    std::vector<double> hidden;     // (V+1) x h tanh activations (MlpLm only)

    std::span<const double> row(std::size_t ctx) const {
        return {log_probs.data() + ctx * vocab, vocab};
    }
    double log_prob(std::size_t ctx, TokenId token) const { return log_probs[ctx * vocab + token]; }
};

ForwardPass forward(const Model& model);

/// Sum over positions of log p(s_i | s_{i-1}).
double log_prob(const ForwardPass& pass, const TokenSequence& seq);
double log_prob(const Model& model, const TokenSequence& seq);

/// Per-sequence log-probabilities, in batch order.
std::vector<double> sequence_log_probs(const ForwardPass& pass, const Batch& batch);

/// Accumulates d/dlogits of an objective of the form
///   sum_k w_k * sum_v q_k(v) log p(v | ctx_k)
/// where each term is either an observed token (q = one-hot) or a full
/// target distribution. The logit gradient of one term is w * (q - p(.|ctx)),
/// so only the weighted target mass and total weight per context are stored.
class LogLikAdjoint {
public:
    explicit LogLikAdjoint(std::size_t vocab_size);

    void add_token(std::size_t ctx, TokenId token, double weight);
    /// Every position of `seq`, each with the same weight.
    void add_sequence(const TokenSequence& seq, double weight);
    void add_target(std::size_t ctx, std::span<const double> target, double weight);

    /// Gradient w.r.t. the model parameters of the accumulated objective.
    GradientVector gradient(const Model& model, const ForwardPass& pass) const;

private:
    std::size_t vocab_;
    std::vector<double> target_mass_;  // (V+1) x V
    std::vector<double> ctx_weight_;   // V+1
};

/// Gradient of sum_ctx <dlogits[ctx], logits(ctx)> w.r.t. the parameters.
GradientVector backprop_logits(const Model& model, const ForwardPass& pass,
                               std::span<const double> dlogits);

/// -(1/m) sum_s log p(s)
double mean_nll(const Model& model, const Batch& batch);

/// Exact gradient of mean per-sequence NLL. Throws UsageError on empty batch.
GradientVector grad_nll(const Model& model, const Batch& batch);

/// Mean NLL per token, pooled over all positions of the batch.
double nll_per_token(const ForwardPass& pass, const Batch& batch);

/// Fraction of positions where the most likely next token (lowest id on
/// ties) equals the observed token.
double token_accuracy(const ForwardPass& pass, const Batch& batch);

/// Mean probability assigned to the observed token: the expectation of
/// token_accuracy under sampling from the model. Continuous in the parameters.
double expected_token_accuracy(const ForwardPass& pass, const Batch& batch);

void check_batch_vocab(const Batch& batch, std::size_t vocab_size);

}  // namespace gradrect
