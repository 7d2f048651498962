#include "gradrect/model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect {

const char* to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::TabularBigram: return "tabular_bigram";
        case ModelKind::MlpLm: return "mlp_lm";
    }
    return "?";
}

ModelKind model_kind_from_string(const std::string& name) {
    if (name == "tabular_bigram") return ModelKind::TabularBigram;
    if (name == "mlp_lm") return ModelKind::MlpLm;
    throw UsageError(fmt::format("unknown model kind '{}'", name));
}

SegmentTable Model::layout(ModelKind kind, std::size_t V, std::size_t d, std::size_t h) {
    if (V == 0) throw UsageError("vocabulary size must be positive");
    const std::size_t C = V + 1;
    if (kind == ModelKind::TabularBigram) return {{"logits", 0, C * V}};
    if (d == 0 || h == 0) throw UsageError("mlp_lm needs positive embed and hidden dims");
    SegmentTable t;
    std::size_t off = 0;
    auto add = [&](const char* name, std::size_t len) {
        t.push_back({name, off, len});
        off += len;
    };
    add("embedding", C * d);
    add("hidden.weight", h * d);
    add("hidden.bias", h);
    add("output.weight", V * h);
    add("output.bias", V);
    return t;
}

Model::Model(ModelKind kind, std::size_t vocab, std::size_t embed, std::size_t hidden,
             ParamVector params)
    : kind_(kind), vocab_(vocab), embed_(embed), hidden_(hidden), params_(std::move(params)) {
    if (params_.segments() != layout(kind_, vocab_, embed_, hidden_))
        throw UsageError("parameter layout does not match the model architecture");
    if (!params_.all_finite()) throw NumericError("model parameters must be finite");
}

Model Model::tabular_bigram(std::size_t vocab_size) {
    auto segs = layout(ModelKind::TabularBigram, vocab_size, 0, 0);
    const std::size_t n = segs.back().offset + segs.back().length;
    return Model(ModelKind::TabularBigram, vocab_size, 0, 0,
                 ParamVector(std::vector<double>(n, 0.0), std::move(segs)));
}

Model Model::mlp_lm(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim,
                    CounterRng& rng, double init_scale) {
    auto segs = layout(ModelKind::MlpLm, vocab_size, embed_dim, hidden_dim);
    const std::size_t n = segs.back().offset + segs.back().length;
    ParamVector p(std::vector<double>(n, 0.0), std::move(segs));
    for (const char* name : {"embedding", "hidden.weight", "output.weight"})
        for (double& v : p.segment(name)) v = init_scale * rng.normal();
    return Model(ModelKind::MlpLm, vocab_size, embed_dim, hidden_dim, std::move(p));
}

Model Model::from_params(ModelKind kind, std::size_t vocab_size, std::size_t embed_dim,
                         std::size_t hidden_dim, ParamVector params) {
    if (kind == ModelKind::TabularBigram) embed_dim = hidden_dim = 0;
    return Model(kind, vocab_size, embed_dim, hidden_dim, std::move(params));
}

Model Model::with_params(ParamVector params) const {
    return Model(kind_, vocab_, embed_, hidden_, std::move(params));
}

namespace {

void log_softmax_inplace(std::span<double> row) {
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (double& v : row) v -= lse;
}

}  // namespace

ForwardPass forward(const Model& model) {
    const std::size_t V = model.vocab_size();
    const std::size_t C = model.num_contexts();
    ForwardPass pass;
    pass.vocab = V;
    pass.log_probs.assign(C * V, 0.0);
    const ParamVector& p = model.params();
    if (model.kind() == ModelKind::TabularBigram) {
        const auto logits = p.segment("logits");
        std::copy(logits.begin(), logits.end(), pass.log_probs.begin());
    } else {
        const std::size_t d = model.embed_dim();
        const std::size_t h = model.hidden_dim();
        const auto E = p.segment("embedding");
        const auto W1 = p.segment("hidden.weight");
        const auto b1 = p.segment("hidden.bias");
        const auto W2 = p.segment("output.weight");
        const auto b2 = p.segment("output.bias");
        pass.hidden.assign(C * h, 0.0);
        for (std::size_t c = 0; c < C; ++c) {
            const double* e = E.data() + c * d;
            double* hc = pass.hidden.data() + c * h;
            for (std::size_t j = 0; j < h; ++j) {
                double z = b1[j];
                for (std::size_t k = 0; k < d; ++k) z += W1[j * d + k] * e[k];
                hc[j] = std::tanh(z);
            }
            double* out = pass.log_probs.data() + c * V;
            for (std::size_t v = 0; v < V; ++v) {
                double z = b2[v];
                for (std::size_t j = 0; j < h; ++j) z += W2[v * h + j] * hc[j];
                out[v] = z;
            }
        }
    }
    for (std::size_t c = 0; c < C; ++c)
        log_softmax_inplace({pass.log_probs.data() + c * V, V});
    return pass;
}

double log_prob(const ForwardPass& pass, const TokenSequence& seq) {
    seq.check_vocab(pass.vocab);
    double s = 0.0;
    std::size_t ctx = pass.vocab;  // BOS
    for (TokenId t : seq) {
        s += pass.log_prob(ctx, t);
        ctx = t;
    }
    return s;
}

double log_prob(const Model& model, const TokenSequence& seq) {
    seq.check_vocab(model.vocab_size());
    return log_prob(forward(model), seq);
}

std::vector<double> sequence_log_probs(const ForwardPass& pass, const Batch& batch) {
    std::vector<double> out;
    out.reserve(batch.size());
    for (const auto& s : batch) out.push_back(log_prob(pass, s));
    return out;
}

LogLikAdjoint::LogLikAdjoint(std::size_t vocab_size)
    : vocab_(vocab_size), target_mass_((vocab_size + 1) * vocab_size, 0.0),
      ctx_weight_(vocab_size + 1, 0.0) {}

void LogLikAdjoint::add_token(std::size_t ctx, TokenId token, double weight) {
    if (ctx > vocab_ || token >= vocab_)
        throw DomainError(fmt::format("context {} / token {} out of range", ctx, token));
    target_mass_[ctx * vocab_ + token] += weight;
    ctx_weight_[ctx] += weight;
}

void LogLikAdjoint::add_sequence(const TokenSequence& seq, double weight) {
    seq.check_vocab(vocab_);
    std::size_t ctx = vocab_;
    for (TokenId t : seq) {
        target_mass_[ctx * vocab_ + t] += weight;
        ctx_weight_[ctx] += weight;
        ctx = t;
    }
}

void LogLikAdjoint::add_target(std::size_t ctx, std::span<const double> target, double weight) {
    if (ctx > vocab_ || target.size() != vocab_)
        throw UsageError("add_target: context or target size out of range");
    for (std::size_t v = 0; v < vocab_; ++v) target_mass_[ctx * vocab_ + v] += weight * target[v];
    ctx_weight_[ctx] += weight;
}

GradientVector LogLikAdjoint::gradient(const Model& model, const ForwardPass& pass) const {
    if (model.vocab_size() != vocab_) throw UsageError("adjoint vocabulary mismatch");
    std::vector<double> dlogits(target_mass_.size(), 0.0);
    for (std::size_t c = 0; c <= vocab_; ++c) {
        const double w = ctx_weight_[c];
        for (std::size_t v = 0; v < vocab_; ++v) {
            const std::size_t i = c * vocab_ + v;
            dlogits[i] = target_mass_[i] - w * std::exp(pass.log_probs[i]);
        }
    }
    return backprop_logits(model, pass, dlogits);
}

GradientVector backprop_logits(const Model& model, const ForwardPass& pass,
                               std::span<const double> dlogits) {
    const std::size_t V = model.vocab_size();
    const std::size_t C = model.num_contexts();
    require_same_size(dlogits.size(), C * V, "backprop_logits");
    GradientVector g = GradientVector::zeros_like(model.params());
    if (model.kind() == ModelKind::TabularBigram) {
        auto out = g.segment("logits");
        std::copy(dlogits.begin(), dlogits.end(), out.begin());
        return g;
    }
    const std::size_t d = model.embed_dim();
    const std::size_t h = model.hidden_dim();
    const ParamVector& p = model.params();
    const auto E = p.segment("embedding");
    const auto W1 = p.segment("hidden.weight");
    const auto W2 = p.segment("output.weight");
    auto dE = g.segment("embedding");
    auto dW1 = g.segment("hidden.weight");
    auto db1 = g.segment("hidden.bias");
    auto dW2 = g.segment("output.weight");
    auto db2 = g.segment("output.bias");
    std::vector<double> dz(h);
    for (std::size_t c = 0; c < C; ++c) {
        const double* dl = dlogits.data() + c * V;
        bool any = false;
        for (std::size_t v = 0; v < V; ++v) any = any || dl[v] != 0.0;
        if (!any) continue;
        const double* hc = pass.hidden.data() + c * h;
        std::fill(dz.begin(), dz.end(), 0.0);
        for (std::size_t v = 0; v < V; ++v) {
            db2[v] += dl[v];
            for (std::size_t j = 0; j < h; ++j) {
                dW2[v * h + j] += dl[v] * hc[j];
                dz[j] += W2[v * h + j] * dl[v];
            }
        }
        const double* e = E.data() + c * d;
        for (std::size_t j = 0; j < h; ++j) {
            dz[j] *= 1.0 - hc[j] * hc[j];
            db1[j] += dz[j];
            for (std::size_t k = 0; k < d; ++k) {
                dW1[j * d + k] += dz[j] * e[k];
                dE[c * d + k] += W1[j * d + k] * dz[j];
            }
        }
    }
    return g;
}

void check_batch_vocab(const Batch& batch, std::size_t vocab_size) {
    for (const auto& s : batch) s.check_vocab(vocab_size);
}

double mean_nll(const Model& model, const Batch& batch) {
    if (batch.empty()) throw UsageError("mean_nll: empty batch");
    check_batch_vocab(batch, model.vocab_size());
    const ForwardPass pass = forward(model);
    double s = 0.0;
    for (const auto& seq : batch) s += log_prob(pass, seq);
    return -s / static_cast<double>(batch.size());
}

GradientVector grad_nll(const Model& model, const Batch& batch) {
    if (batch.empty()) throw UsageError("grad_nll: empty batch");
    check_batch_vocab(batch, model.vocab_size());
    const ForwardPass pass = forward(model);
    LogLikAdjoint adj(model.vocab_size());
    const double w = -1.0 / static_cast<double>(batch.size());
    for (const auto& seq : batch) adj.add_sequence(seq, w);
    return adj.gradient(model, pass);
}

double nll_per_token(const ForwardPass& pass, const Batch& batch) {
    if (batch.empty()) throw UsageError("nll_per_token: empty batch");
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& seq : batch) {
        s += log_prob(pass, seq);
        n += seq.size();
    }
    return -s / static_cast<double>(n);
}

double token_accuracy(const ForwardPass& pass, const Batch& batch) {
    if (batch.empty()) throw UsageError("token_accuracy: empty batch");
    const std::size_t V = pass.vocab;
    std::vector<TokenId> argmax(V + 1);
    for (std::size_t c = 0; c <= V; ++c) {
        const auto row = pass.row(c);
        argmax[c] = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    std::size_t hits = 0, n = 0;
    for (const auto& seq : batch) {
        seq.check_vocab(V);
        std::size_t ctx = V;
        for (TokenId t : seq) {
            hits += argmax[ctx] == t;
            ++n;
            ctx = t;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

double expected_token_accuracy(const ForwardPass& pass, const Batch& batch) {
    if (batch.empty()) throw UsageError("expected_token_accuracy: empty batch");
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& seq : batch) {
        seq.check_vocab(pass.vocab);
        std::size_t ctx = pass.vocab;
        for (TokenId t : seq) {
            s += std::exp(pass.log_prob(ctx, t));
            ++n;
            ctx = t;
        }
    }
    return s / static_cast<double>(n);
}

}  // namespace gradrect
