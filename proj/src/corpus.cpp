#include "gradrect/corpus.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "gradrect/errors.hpp"
#include "gradrect/param_vector.hpp"

namespace gradrect {

void CorpusSpec::validate() const {
    if (vocab_size < 2) throw UsageError("corpus: vocab_size must be >= 2");
    if (n_profiles < 3) throw UsageError("corpus: n_profiles must be >= 3");
    if (seqs_per_profile < 1 || seq_len < 1) throw UsageError("corpus: counts must be >= 1");
    if (!(forget_fraction > 0.0 && forget_fraction < 1.0))
        throw UsageError("corpus: forget_fraction must lie in (0, 1)");
    if (!(profile_concentration > 0.0) || !(base_concentration > 0.0))
        throw UsageError("corpus: concentrations must be positive");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
        throw UsageError("corpus: holdout_fraction must lie in (0, 1)");
    if (forget_profiles() < 1) throw UsageError("corpus: forget_fraction * n_profiles rounds to 0");
    const std::size_t rest = n_profiles - forget_profiles();
    if (holdout_profiles() < 1 || holdout_profiles() >= rest)
        throw UsageError("corpus: need at least one retain and one holdout profile");
}

std::size_t CorpusSpec::forget_profiles() const {
    return static_cast<std::size_t>(std::llround(forget_fraction * static_cast<double>(n_profiles)));
}

std::size_t CorpusSpec::holdout_profiles() const {
    const std::size_t f = forget_profiles();
    if (f >= n_profiles) return 0;
    const double rest = static_cast<double>(n_profiles - f);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(holdout_fraction * rest)));
}

namespace {

// Marsaglia-Tsang gamma sampler on the project RNG, so datasets are identical
// across standard libraries (std::gamma_distribution is implementation-defined).
double sample_gamma(double shape, CounterRng& rng) {
    if (shape < 1.0) {
        const double u = rng.uniform();
        return sample_gamma(shape + 1.0, rng) * std::pow(u > 0.0 ? u : 0x1.0p-53, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

void sample_dirichlet(std::span<const double> alpha, std::span<double> out, CounterRng& rng) {
    double s = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        out[i] = sample_gamma(alpha[i], rng);
        s += out[i];
    }
    if (!(s > 0.0)) {
        // All gammas underflowed: fall back to the largest-alpha vertex.
        std::fill(out.begin(), out.end(), 0.0);
        out[static_cast<std::size_t>(std::max_element(alpha.begin(), alpha.end()) - alpha.begin())] = 1.0;
        return;
    }
    for (auto& v : out) v /= s;
}

TokenId sample_categorical(std::span<const double> p, CounterRng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t v = 0; v < p.size(); ++v) {
        acc += p[v];
        if (u < acc) return static_cast<TokenId>(v);
    }
    for (std::size_t v = p.size(); v-- > 0;)
        if (p[v] > 0.0) return static_cast<TokenId>(v);
    return 0;
}

}  // namespace

std::vector<std::vector<double>> sample_profile_tables(const CorpusSpec& spec, CounterRng& rng) {
    const std::size_t V = spec.vocab_size;
    const std::size_t rows = V + 1;
    CounterRng base_rng = rng.derive("base");
    std::vector<double> base(rows * V);
    const std::vector<double> flat(V, spec.base_concentration);
    for (std::size_t r = 0; r < rows; ++r)
        sample_dirichlet(flat, {base.data() + r * V, V}, base_rng);

    std::vector<std::vector<double>> tables(spec.n_profiles, std::vector<double>(rows * V));
    std::vector<double> alpha(V);
    for (std::size_t k = 0; k < spec.n_profiles; ++k) {
        CounterRng prng = rng.derive("profile").derive(k);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t v = 0; v < V; ++v)
                alpha[v] = std::max(spec.profile_concentration * base[r * V + v], 1e-300);
            sample_dirichlet(alpha, {tables[k].data() + r * V, V}, prng);
        }
    }
    return tables;
}

TokenDataset gen_corpus(const CorpusSpec& spec) {
    spec.validate();
    const std::size_t V = spec.vocab_size;
    CounterRng data = CounterRng(spec.seed).derive("data");
    CounterRng table_rng = data.derive("tables");
    const auto tables = sample_profile_tables(spec, table_rng);

    CounterRng split_rng = data.derive("splits");
    const auto order = random_permutation(spec.n_profiles, split_rng);
    std::vector<Split> tag(spec.n_profiles, Split::Retain);
    const std::size_t nf = spec.forget_profiles();
    const std::size_t nh = spec.holdout_profiles();
    for (std::size_t i = 0; i < nf; ++i) tag[order[i]] = Split::Unlearn;
    for (std::size_t i = nf; i < nf + nh; ++i) tag[order[i]] = Split::Holdout;

    std::vector<TaggedSequence> entries;
    entries.reserve(spec.n_profiles * spec.seqs_per_profile);
    for (std::size_t k = 0; k < spec.n_profiles; ++k) {
        CounterRng srng = data.derive("sequences").derive(k);
        const auto& t = tables[k];
        for (std::size_t s = 0; s < spec.seqs_per_profile; ++s) {
            std::vector<TokenId> toks;
            toks.reserve(spec.seq_len);
            std::size_t ctx = V;
            for (std::size_t i = 0; i < spec.seq_len; ++i) {
                const TokenId tok = sample_categorical({t.data() + ctx * V, V}, srng);
                toks.push_back(tok);
                ctx = tok;
            }
            entries.push_back({TokenSequence(std::move(toks)), tag[k], static_cast<std::uint32_t>(k)});
        }
    }
    return TokenDataset(V, std::move(entries));
}

double table_tv_distance(const std::vector<double>& p, const std::vector<double>& q,
                         std::size_t vocab_size) {
    require_same_size(p.size(), q.size(), "table_tv_distance");
    if (vocab_size == 0 || p.size() % vocab_size != 0)
        throw UsageError("table_tv_distance: size is not a multiple of the vocabulary");
    const std::size_t rows = p.size() / vocab_size;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double tv = 0.0;
        for (std::size_t v = 0; v < vocab_size; ++v)
            tv += std::abs(p[r * vocab_size + v] - q[r * vocab_size + v]);
        total += 0.5 * tv;
    }
    return total / static_cast<double>(rows);
}

}  // namespace gradrect
