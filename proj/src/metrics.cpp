#include "gradrect/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect {

namespace {

std::string fmt_real(double v) { return fmt::format("{:.17g}", v); }

std::string join_indices(const std::vector<std::size_t>& idx) {
    std::string s;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (i) s += ';';
        s += std::to_string(idx[i]);
    }
    return s;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_real(const std::string& s, const std::filesystem::path& path) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty())
        throw IoError(fmt::format("'{}': bad number '{}'", path.string(), s));
    return v;
}

std::size_t parse_index(const std::string& s, const std::filesystem::path& path) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty())
        throw IoError(fmt::format("'{}': bad integer '{}'", path.string(), s));
    return static_cast<std::size_t>(v);
}

}  // namespace

void write_trajectory_csv(const std::vector<StepRecord>& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << kTrajectoryCsvHeader << '\n';
    for (const auto& r : log) {
        out << r.step << ',' << fmt_real(r.unlearn_loss) << ',' << fmt_real(r.retain_risk) << ','
            << (r.cos_pre ? fmt_real(*r.cos_pre) : "") << ','
            << (r.cos_post ? fmt_real(*r.cos_post) : "") << ',' << fmt_real(r.norm_gu) << ','
            << fmt_real(r.norm_rectified) << ',' << fmt_real(r.norm_ema) << ','
            << (r.rectified ? 1 : 0) << ',' << (r.degenerate ? 1 : 0) << ','
            << join_indices(r.batch_u) << ',' << join_indices(r.batch_r) << '\n';
    }
    out.flush();
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

std::vector<StepRecord> read_trajectory_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
    std::string line;
    if (!std::getline(in, line) || line != kTrajectoryCsvHeader)
        throw IoError(fmt::format("'{}': missing or unexpected trajectory header", path.string()));
    std::vector<StepRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 12)
            throw IoError(fmt::format("'{}': expected 12 fields, got {}", path.string(), f.size()));
        StepRecord r;
        r.step = parse_index(f[0], path);
        r.unlearn_loss = parse_real(f[1], path);
        r.retain_risk = parse_real(f[2], path);
        if (!f[3].empty()) r.cos_pre = parse_real(f[3], path);
        if (!f[4].empty()) r.cos_post = parse_real(f[4], path);
        r.norm_gu = parse_real(f[5], path);
        r.norm_rectified = parse_real(f[6], path);
        r.norm_ema = parse_real(f[7], path);
        r.rectified = parse_index(f[8], path) != 0;
        r.degenerate = parse_index(f[9], path) != 0;
        for (int col : {10, 11}) {
            auto& dst = col == 10 ? r.batch_u : r.batch_r;
            if (f[col].empty()) continue;
            for (const auto& tok : split(f[col], ';')) dst.push_back(parse_index(tok, path));
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::optional<double> cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na < 1e-15 || nb < 1e-15) return std::nullopt;
    return dot(a, b) / (na * nb);
}

double kolmogorov_q(double lambda) {
    if (!(lambda > 0.0)) return 1.0;
    if (lambda < 0.2) {
        // The alternating series converges slowly here; use the theta-function dual
        // 1 - sqrt(2 pi)/lambda * sum exp(-(2k-1)^2 pi^2 / (8 lambda^2)).
        double s = 0.0;
        for (int k = 1; k < 100; ++k) {
            const double t = std::exp(-std::pow(2.0 * k - 1.0, 2) * std::numbers::pi * std::numbers::pi /
                                      (8.0 * lambda * lambda));
            s += t;
            if (t < 1e-17) break;
        }
        return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s, 0.0, 1.0);
    }
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k < 100000; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        if (term < 1e-12) break;
        sum += sign * term;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

namespace {

double ks_statistic_sorted(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double m = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() || j < b.size()) {
        double x;
        if (j >= b.size() || (i < a.size() && a[i] <= b[j])) x = a[i];
        else x = b[j];
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    return d;
}

}  // namespace

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b, KsMethod method) {
    if (a.size() < 5 || b.size() < 5)
        throw UsageError(fmt::format("ks_two_sample: samples need >= 5 values (got {}, {})",
                                     a.size(), b.size()));
    for (double v : a)
        if (std::isnan(v)) throw NumericError("ks_two_sample: NaN in sample");
    for (double v : b)
        if (std::isnan(v)) throw NumericError("ks_two_sample: NaN in sample");
    std::vector<double> sa(a.begin(), a.end());
    std::vector<double> sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());

    KsResult r;
    r.statistic = ks_statistic_sorted(sa, sb);
    const double n = static_cast<double>(sa.size());
    const double m = static_cast<double>(sb.size());

    if (method == KsMethod::Exact) {
        if (sa.size() > 10 || sb.size() > 10)
            throw UsageError("ks_two_sample: exact method supports n, m <= 10");
        std::vector<double> pooled(sa);
        pooled.insert(pooled.end(), sb.begin(), sb.end());
        const std::size_t N = pooled.size();
        std::size_t total = 0, extreme = 0;
        std::vector<double> xa, xb;
        for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
            if (static_cast<std::size_t>(std::popcount(mask)) != sa.size()) continue;
            xa.clear();
            xb.clear();
            for (std::size_t k = 0; k < N; ++k) ((mask >> k) & 1u ? xa : xb).push_back(pooled[k]);
            std::sort(xa.begin(), xa.end());
            std::sort(xb.begin(), xb.end());
            ++total;
            if (ks_statistic_sorted(xa, xb) >= r.statistic - 1e-12) ++extreme;
        }
        r.exact = true;
        r.p_value = static_cast<double>(extreme) / static_cast<double>(total);
        r.log_p_value = std::log(r.p_value);
        return r;
    }

    const double ne = n * m / (n + m);
    const double sq = std::sqrt(ne);
    const double lambda = (sq + 0.12 + 0.11 / sq) * r.statistic;
    r.p_value = kolmogorov_q(lambda);
    if (r.p_value > 1e-300) r.log_p_value = std::log(r.p_value);
    else r.log_p_value = std::numbers::ln2 - 2.0 * lambda * lambda;  // leading series term
    return r;
}

std::vector<double> sequence_nlls(const Model& model, const Batch& seqs) {
    check_batch_vocab(seqs, model.vocab_size());
    const ForwardPass pass = forward(model);
    std::vector<double> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) out.push_back(-log_prob(pass, s));
    return out;
}

KsResult fq_test(const Model& unlearned, const Model& retrained_gold, const Batch& forget_set) {
    if (unlearned.vocab_size() != retrained_gold.vocab_size())
        throw UsageError("fq_proxy: models have different vocabularies");
    if (forget_set.empty()) throw UsageError("fq_proxy: empty forget set");
    const auto a = sequence_nlls(unlearned, forget_set);
    const auto b = sequence_nlls(retrained_gold, forget_set);
    return ks_two_sample(a, b);
}

double fq_proxy(const Model& unlearned, const Model& retrained_gold, const Batch& forget_set) {
    return fq_test(unlearned, retrained_gold, forget_set).log_p_value;
}

double harmonic_mean(std::span<const double> components) {
    if (components.empty()) throw UsageError("harmonic_mean: no components");
    double s = 0.0;
    for (double c : components) {
        if (!(c >= 0.0)) throw UsageError("harmonic_mean: components must be >= 0");
        if (c == 0.0) return 0.0;
        s += 1.0 / c;
    }
    return static_cast<double>(components.size()) / s;
}

double mu_proxy(const Model& model, const Batch& retain_set, const Batch& holdout_set) {
    const ForwardPass pass = forward(model);
    const double c[3] = {token_accuracy(pass, retain_set), token_accuracy(pass, holdout_set),
                         std::exp(-nll_per_token(pass, retain_set))};
    return harmonic_mean(c);
}

EvalReport evaluate(const Model& model, const Model& retrained_gold, const Batch& forget_set,
                    const Batch& retain_set, const Batch& holdout_set) {
    const ForwardPass pass = forward(model);
    EvalReport r;
    r.forget_nll = nll_per_token(pass, forget_set);
    r.retain_nll = nll_per_token(pass, retain_set);
    r.holdout_nll = nll_per_token(pass, holdout_set);
    r.retain_token_acc = token_accuracy(pass, retain_set);
    r.holdout_token_acc = token_accuracy(pass, holdout_set);
    const KsResult ks = fq_test(model, retrained_gold, forget_set);
    r.fq_proxy = ks.log_p_value;
    r.ks_statistic = ks.statistic;
    const double c[3] = {r.retain_token_acc, r.holdout_token_acc, std::exp(-r.retain_nll)};
    r.mu_proxy = harmonic_mean(c);
    return r;
}

nlohmann::json to_json(const EvalReport& r) {
    return {{"forget_nll_per_token", r.forget_nll},
            {"retain_nll_per_token", r.retain_nll},
            {"holdout_nll_per_token", r.holdout_nll},
            {"retain_token_acc", r.retain_token_acc},
            {"holdout_token_acc", r.holdout_token_acc},
            {"fq_proxy", r.fq_proxy},
            {"ks_statistic", r.ks_statistic},
            {"mu_proxy", r.mu_proxy},
            {"fq_statistic", "two-sample KS over per-sequence forget NLL vs retrained gold"}};
}

Batch retain_probe(const Batch& retain_set, std::size_t n, CounterRng rng) {
    if (retain_set.empty()) throw UsageError("retain_probe: empty retain set");
    if (n >= retain_set.size()) return retain_set;
    auto perm = random_permutation(retain_set.size(), rng);
    perm.resize(n);
    std::sort(perm.begin(), perm.end());
    Batch out;
    for (std::size_t i : perm) out.push_back(retain_set[i]);
    return out;
}

}  // namespace gradrect
