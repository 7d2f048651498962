#include "gradrect/gru.hpp"

#include <cmath>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect {

GradientVector rectify(const GradientVector& g_u, const GradientVector& g_ref) {
    require_same_size(g_u.size(), g_ref.size(), "rectify");
    const double ip = dot(g_u, g_ref);
    const double nr = norm(g_ref);
    if (ip >= 0.0 || nr < kZeroReferenceNorm) return g_u;
    GradientVector out = g_u;
    axpy(out, -ip / (nr * nr), g_ref);
    return out;
}

bool rectification_fires(const GradientVector& g_u, const GradientVector& g_ref) {
    require_same_size(g_u.size(), g_ref.size(), "rectification_fires");
    return dot(g_u, g_ref) < 0.0 && norm(g_ref) >= kZeroReferenceNorm;
}

GradientVector ema_update(const GradientVector& ema_prev, const GradientVector& g_r, double gamma) {
    require_same_size(ema_prev.size(), g_r.size(), "ema_update");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw UsageError("ema_update: gamma must lie in [0, 1)");
    GradientVector out = ema_prev;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - gamma) * ema_prev[i] + gamma * g_r[i];
    return out;
}

GradientVector clip(const GradientVector& g, double tau) {
    if (!(tau > 0.0)) throw UsageError("clip: tau must be positive");
    const double n = norm(g);
    if (n <= tau) return g;
    return (tau / n) * g;
}

void GruConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw UsageError("lr must be positive");
    if (!(gamma > 0.0 && gamma < 1.0))
        throw UsageError(fmt::format("gamma must lie in (0, 1), got {}", gamma));
    if (tau && !(*tau > 0.0)) throw UsageError("tau must be positive when present");
    if (batch_u == 0 || batch_r == 0) throw UsageError("batch sizes must be >= 1");
    loss.validate();
}

BatchSampler::BatchSampler(std::size_t n_unlearn, std::size_t n_retain, std::size_t batch_u,
                           std::size_t batch_r, CounterRng rng)
    : n_u_(n_unlearn), n_r_(n_retain), b_u_(batch_u), b_r_(batch_r),
      epoch_rng_(rng.derive("unlearn.epochs")), retain_rng_(rng.derive("retain.draws")),
      resample_rng_(rng.derive("unlearn.resample")) {
    if (n_u_ == 0 || n_r_ == 0) throw UsageError("BatchSampler: datasets must be non-empty");
    if (b_u_ == 0 || b_r_ == 0) throw UsageError("BatchSampler: batch sizes must be >= 1");
}

std::vector<std::size_t> BatchSampler::next_unlearn() {
    std::vector<std::size_t> out;
    out.reserve(b_u_);
    for (std::size_t k = 0; k < b_u_; ++k) {
        if (cursor_ == order_.size()) {
            order_ = random_permutation(n_u_, epoch_rng_);
            cursor_ = 0;
        }
        out.push_back(order_[cursor_++]);
    }
    return out;
}

std::vector<std::size_t> BatchSampler::next_retain() {
    std::vector<std::size_t> out(b_r_);
    for (auto& i : out) i = retain_rng_.below(n_r_);
    return out;
}

std::vector<std::size_t> BatchSampler::resample_unlearn() {
    if (b_u_ <= n_u_) {
        auto p = random_permutation(n_u_, resample_rng_);
        p.resize(b_u_);
        return p;
    }
    std::vector<std::size_t> out(b_u_);
    for (auto& i : out) i = resample_rng_.below(n_u_);
    return out;
}

GruState GruState::initial(const ParamVector& theta0, const GruConfig& cfg) {
    AdamWParams p = cfg.adam;
    p.lr = cfg.lr;
    return GruState{theta0, GradientVector::zeros_like(theta0), 0, Optimizer(cfg.optimizer, p)};
}

namespace {

Batch gather(const Batch& set, const std::vector<std::size_t>& idx) {
    Batch out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(set[i]);
    return out;
}

bool is_degenerate(const std::optional<double>& c) {
    return c && *c <= -1.0 + kDegenerateCosTol;
}

}  // namespace

void gru_step(GruState& state, const GruConfig& cfg, const StepContext& ctx, BatchSampler& sampler,
              RunLog& log) {
    StepRecord rec;
    rec.step = state.step;
    rec.batch_u = sampler.next_unlearn();
    rec.batch_r = sampler.next_retain();
    const Model current = ctx.architecture.with_params(state.theta);
    const Batch br = gather(ctx.retain_set, rec.batch_r);
    LossValue lu = composite_loss(cfg.loss, current, gather(ctx.unlearn_set, rec.batch_u), br);
    const LossValue lr = retain_loss(current, br);
    state.ema_retain = ema_update(state.ema_retain, lr.grad, cfg.gamma);
    rec.cos_pre = cosine(lu.grad, state.ema_retain);

    bool skip = false;
    if (ctx.rectify_enabled && is_degenerate(rec.cos_pre)) {
        log.events.push_back(fmt::format("step {}: degenerate direction, resampling unlearn batch", state.step));
        rec.batch_u = sampler.resample_unlearn();
        lu = composite_loss(cfg.loss, current, gather(ctx.unlearn_set, rec.batch_u), br);
        rec.cos_pre = cosine(lu.grad, state.ema_retain);
        if (is_degenerate(rec.cos_pre)) {
            log.events.push_back(fmt::format("step {}: still degenerate, zero update", state.step));
            rec.degenerate = true;
            skip = true;
        }
    }
    rec.unlearn_loss = lu.value;
    rec.norm_gu = norm(lu.grad);
    rec.norm_ema = norm(state.ema_retain);

    GradientVector applied = lu.grad;
    if (ctx.rectify_enabled) {
        rec.rectified = rectification_fires(lu.grad, state.ema_retain);
        applied = rectify(lu.grad, state.ema_retain);
    }
    if (skip) applied = GradientVector::zeros_like(lu.grad);
    rec.norm_rectified = norm(applied);
    if (cfg.tau) applied = clip(applied, *cfg.tau);
    rec.cos_post = cosine(applied, state.ema_retain);

    if (!skip) state.theta = state.optimizer.step(state.theta, applied);
    ++state.step;
    rec.retain_risk = mean_nll(ctx.architecture.with_params(state.theta), ctx.probe);
    log.records.push_back(std::move(rec));
}

std::pair<ParamVector, RunLog> run_unlearn(const Model& model, const GruConfig& cfg_in,
                                           const Batch& unlearn_set, const Batch& retain_set,
                                           bool rectify_enabled, std::optional<Batch> probe) {
    GruConfig cfg = cfg_in;
    // The NPO reference defaults to the model as it stands before unlearning.
    if (is_npo_family(cfg.loss.kind) && !cfg.loss.reference) cfg.loss.reference = model;
    cfg.validate();
    if (unlearn_set.empty() || retain_set.empty())
        throw UsageError("run_unlearn: unlearn and retain sets must be non-empty");
    const CounterRng root(cfg.seed);
    const Batch probe_set =
        probe ? std::move(*probe) : retain_probe(retain_set, kRetainProbeSize, root.derive("eval.probe"));

    RunLog log;
    log.rectify_enabled = rectify_enabled;
    log.optimizer = cfg.optimizer;
    log.initial_retain_risk = mean_nll(model, probe_set);
    log.final_retain_risk = log.initial_retain_risk;

    GruState state = GruState::initial(model.params(), cfg);
    BatchSampler sampler(unlearn_set.size(), retain_set.size(), cfg.batch_u, cfg.batch_r,
                         root.derive("batches"));
    const StepContext ctx{model, unlearn_set, retain_set, probe_set, rectify_enabled};
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        try {
            gru_step(state, cfg, ctx, sampler, log);
        } catch (const NumericError& e) {
            throw NumericError(fmt::format("unlearning step {}: {}", t, e.what()));
        }
    }
    if (!log.records.empty()) log.final_retain_risk = log.records.back().retain_risk;
    return {std::move(state.theta), std::move(log)};
}

}  // namespace gradrect
