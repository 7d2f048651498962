#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "fixtures.hpp"
#include "gradrect/errors.hpp"
#include "gradrect/metrics.hpp"
#include "oracles.hpp"

using namespace gradrect;

namespace {

std::size_t count_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) ++n;
    return n;
}

/// Permutation p-value by enumerating every split with std::next_permutation.
double exact_p_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    const double d_obs = oracle::ks_statistic_bruteforce(a, b);
    std::vector<int> mask(pooled.size(), 0);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(b.size()), 1);
    std::sort(mask.begin(), mask.end());
    std::size_t total = 0, extreme = 0;
    do {
        std::vector<double> xa, xb;
        for (std::size_t k = 0; k < pooled.size(); ++k) (mask[k] ? xb : xa).push_back(pooled[k]);
        ++total;
        if (oracle::ks_statistic_bruteforce(xa, xb) >= d_obs - 1e-12) ++extreme;
    } while (std::next_permutation(mask.begin(), mask.end()));
    return static_cast<double>(extreme) / static_cast<double>(total);
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("cosine examples") {
    const std::vector<double> e1{1, 0}, e2{0, 1}, d{1, 1}, d2{2, 2}, m{-1, 1}, z{0, 0};
    CHECK(cosine(e1, e2).value() == 0.0);
    CHECK(cosine(d, d2).value() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine(e1, m).value() == doctest::Approx(-0.707107).epsilon(1e-6));
    CHECK(cosine(e1, m).value() == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK_FALSE(cosine(e1, z).has_value());
    CHECK_FALSE(cosine(z, z).has_value());
}

TEST_CASE("cosine stays in [-1, 1] up to rounding") {
    CounterRng rng(61);
    for (int t = 0; t < 500; ++t) {
        std::vector<double> a(1 + rng.below(10)), b;
        for (auto& x : a) x = rng.normal();
        b = a;
        const double s = rng.uniform() < 0.5 ? -3.0 : 3.0;
        for (auto& x : b) x *= s;
        const double c = cosine(a, b).value();
        CHECK(std::abs(c) <= 1.0 + 1e-12);
        CHECK(std::abs(std::abs(c) - 1.0) <= 1e-12);
    }
}

TEST_CASE("KS examples") {
    const std::vector<double> a{1, 2, 3, 4, 5};
    const auto same = ks_two_sample(a, a);
    CHECK(same.statistic == 0.0);
    CHECK(same.p_value == 1.0);
    CHECK(same.log_p_value == 0.0);

    const std::vector<double> zeros(5, 0.0), ones(5, 1.0);
    CHECK(ks_two_sample(zeros, ones).statistic == 1.0);

    const std::vector<double> shifted{1.5, 2.5, 3.5, 4.5, 5.5};
    const auto r = ks_two_sample(a, shifted);
    CHECK(r.statistic == doctest::Approx(0.2).epsilon(1e-15));
    // lambda = (sqrt(2.5) + 0.12 + 0.11/sqrt(2.5)) * 0.2, Q evaluated at 30 digits.
    CHECK(std::abs(r.p_value - 0.999621706053583221) <= 1e-6);
    const double sq = std::sqrt(2.5);
    CHECK(std::abs(r.p_value - oracle::kolmogorov_series((sq + 0.12 + 0.11 / sq) * 0.2)) <= 1e-6);

    CHECK_THROWS_AS(ks_two_sample(std::vector<double>{1, 2, 3, 4}, a), UsageError);
    CHECK_THROWS_AS(ks_two_sample(a, std::vector<double>{1, 2, 3, 4, NAN}), NumericError);
}

TEST_CASE("Kolmogorov Q against frozen high-precision values") {
    CHECK(std::abs(kolmogorov_q(0.5) - 0.963945243664875) <= 1e-12);
    CHECK(std::abs(kolmogorov_q(1.0) - 0.269999671677354) <= 1e-12);
    CHECK(std::abs(kolmogorov_q(2.0) - 0.000670925255779695) <= 1e-13);
    CHECK(std::abs(kolmogorov_q(0.19) - 0.99999999999998101) <= 1e-14);
    CHECK(kolmogorov_q(0.0) == 1.0);
    // Both branches agree where they meet.
    CHECK(std::abs(kolmogorov_q(0.2 - 1e-12) - kolmogorov_q(0.2)) <= 1e-11);
    for (double l = 0.25; l < 3.0; l += 0.05)
        CHECK(std::abs(kolmogorov_q(l) - oracle::kolmogorov_series(l)) <= 1e-11);
}

TEST_CASE("KS statistic equals brute force and is symmetric") {
    CounterRng rng(62);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> a(5 + rng.below(30)), b(5 + rng.below(30));
        // Rounded values force ties across the samples.
        for (auto& x : a) x = std::round(4 * rng.normal()) / 2;
        for (auto& x : b) x = std::round(4 * rng.normal() + 1) / 2;
        const auto ab = ks_two_sample(a, b), ba = ks_two_sample(b, a);
        CHECK(ab.statistic == oracle::ks_statistic_bruteforce(a, b));
        CHECK(ab.statistic == ba.statistic);
        CHECK(ab.p_value == ba.p_value);
        CHECK(ab.statistic >= 0.0);
        CHECK(ab.statistic <= 1.0);
    }
}

TEST_CASE("underflowing p-values keep a finite log") {
    std::vector<double> a(3000), b(3000);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = static_cast<double>(i);
        b[i] = 1e6 + static_cast<double>(i);
    }
    const auto r = ks_two_sample(a, b);
    CHECK(r.statistic == 1.0);
    const double sq = std::sqrt(1500.0);
    const double lambda = sq + 0.12 + 0.11 / sq;
    CHECK(std::isfinite(r.log_p_value));
    CHECK(r.log_p_value == doctest::Approx(std::log(2.0) - 2.0 * lambda * lambda).epsilon(1e-12));
}

TEST_CASE("exact permutation p-values") {
    const std::vector<double> a{1, 2, 3, 4, 5}, b{1.5, 2.5, 3.5, 4.5, 5.5};
    const auto r = ks_two_sample(a, b, KsMethod::Exact);
    CHECK(r.exact);
    CHECK(r.p_value == 1.0);  // every split of 10 distinct values has D >= 0.2

    const std::vector<double> lo{0, 1, 2, 3, 4}, hi{10, 11, 12, 13, 14};
    CHECK(ks_two_sample(lo, hi, KsMethod::Exact).p_value == doctest::Approx(2.0 / 252.0).epsilon(1e-15));

    CounterRng rng(63);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> x(5 + rng.below(3)), y(5 + rng.below(3));
        for (auto& v : x) v = std::round(3 * rng.normal());
        for (auto& v : y) v = std::round(3 * rng.normal() + 2);
        CHECK(ks_two_sample(x, y, KsMethod::Exact).p_value == doctest::Approx(exact_p_oracle(x, y)).epsilon(1e-15));
    }
    CHECK_THROWS_AS(ks_two_sample(std::vector<double>(11, 1.0), a, KsMethod::Exact), UsageError);
}

TEST_CASE("fq proxy") {
    CounterRng rng(64);
    const Model gold = fixture::random_model(ModelKind::MlpLm, 5, rng);
    const Model other = fixture::random_model(ModelKind::MlpLm, 5, rng, 2.0);
    const Batch forget = fixture::random_batch(5, 12, 6, rng);
    CHECK(fq_proxy(gold, gold, forget) == 0.0);
    CHECK(fq_proxy(other, gold, forget) <= 0.0);
    CHECK(std::log(0.05) == doctest::Approx(-2.9957).epsilon(1e-4));
    CHECK_THROWS_AS(fq_proxy(gold, gold, {}), UsageError);
    CHECK_THROWS_AS(fq_proxy(Model::tabular_bigram(4), gold, forget), UsageError);
    const auto nll = sequence_nlls(gold, forget);
    REQUIRE(nll.size() == forget.size());
    for (std::size_t i = 0; i < nll.size(); ++i) CHECK(nll[i] == -log_prob(gold, forget[i]));
}

TEST_CASE("harmonic mean and mu proxy") {
    const double ones[3] = {1, 1, 1}, halves[3] = {0.5, 0.5, 0.5}, zero[3] = {0.9, 0.0, 0.8};
    CHECK(harmonic_mean(ones) == 1.0);
    CHECK(harmonic_mean(halves) == 0.5);
    CHECK(harmonic_mean(zero) == 0.0);
    const double mixed[2] = {0.25, 0.75};
    CHECK(harmonic_mean(mixed) == doctest::Approx(0.375));

    // A model that predicts every retain transition with certainty scores 1.
    std::vector<double> logits(4 * 3, 0.0);
    logits[3 * 3 + 0] = 1000.0;  // BOS -> 0
    logits[0 * 3 + 1] = 1000.0;  // 0 -> 1
    logits[1 * 3 + 2] = 1000.0;  // 1 -> 2
    const Model sure = Model::from_params(ModelKind::TabularBigram, 3, 0, 0,
                                          ParamVector(logits, Model::layout(ModelKind::TabularBigram, 3, 0, 0)));
    const Batch path{TokenSequence{0, 1, 2}};
    CHECK(mu_proxy(sure, path, path) == 1.0);
    CHECK(mu_proxy(sure, path, Batch{TokenSequence{2, 2}}) == 0.0);

    CounterRng rng(65);
    const Model m = fixture::random_model(ModelKind::MlpLm, 5, rng);
    const double mu = mu_proxy(m, fixture::random_batch(5, 10, 5, rng), fixture::random_batch(5, 10, 5, rng));
    CHECK(mu >= 0.0);
    CHECK(mu <= 1.0);
}

TEST_CASE("evaluate agrees with the standalone metrics") {
    CounterRng rng(66);
    const Model m = fixture::random_model(ModelKind::MlpLm, 5, rng);
    const Model gold = fixture::random_model(ModelKind::MlpLm, 5, rng);
    const Batch f = fixture::random_batch(5, 8, 5, rng), r = fixture::random_batch(5, 8, 5, rng),
                h = fixture::random_batch(5, 8, 5, rng);
    const EvalReport e = evaluate(m, gold, f, r, h);
    CHECK(e.fq_proxy == fq_proxy(m, gold, f));
    CHECK(e.mu_proxy == doctest::Approx(mu_proxy(m, r, h)).epsilon(1e-15));
    CHECK(e.fq_proxy <= 0.0);
    CHECK(e.ks_statistic >= 0.0);
    CHECK(e.ks_statistic <= 1.0);
    CHECK(to_json(e).at("mu_proxy").get<double>() == e.mu_proxy);
}

TEST_CASE("trajectory CSV round trip") {
    fixture::TempDir dir("metrics");
    const auto empty = dir.path() / "empty.csv";
    write_trajectory_csv({}, empty);
    CHECK(count_lines(empty) == 1);
    CHECK(read_trajectory_csv(empty).empty());

    CounterRng rng(67);
    std::vector<StepRecord> log;
    for (std::size_t s = 0; s < 3; ++s) {
        StepRecord r;
        r.step = s;
        r.unlearn_loss = rng.normal() / 3.0;
        r.retain_risk = std::exp(rng.normal());
        if (s != 1) r.cos_pre = 2 * rng.uniform() - 1;
        if (s != 2) r.cos_post = rng.uniform() * 1e-17;
        r.norm_gu = rng.uniform();
        r.norm_rectified = r.norm_gu * rng.uniform();
        r.norm_ema = 1e-300 * rng.uniform();
        r.rectified = s == 0;
        r.degenerate = s == 2;
        r.batch_u = {s, s + 7};
        if (s != 1) r.batch_r = {3, 1, 4};
        log.push_back(r);
    }
    const auto path = dir.path() / "traj.csv";
    write_trajectory_csv(log, path);
    CHECK(count_lines(path) == 4);
    {
        std::ifstream in(path);
        std::string header;
        std::getline(in, header);
        CHECK(header == kTrajectoryCsvHeader);
    }
    const auto back = read_trajectory_csv(path);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].step == log[i].step);
        CHECK(back[i].unlearn_loss == log[i].unlearn_loss);
        CHECK(back[i].retain_risk == log[i].retain_risk);
        CHECK(back[i].cos_pre == log[i].cos_pre);
        CHECK(back[i].cos_post == log[i].cos_post);
        CHECK(back[i].norm_gu == log[i].norm_gu);
        CHECK(back[i].norm_rectified == log[i].norm_rectified);
        CHECK(back[i].norm_ema == log[i].norm_ema);
        CHECK(back[i].rectified == log[i].rectified);
        CHECK(back[i].degenerate == log[i].degenerate);
        CHECK(back[i].batch_u == log[i].batch_u);
        CHECK(back[i].batch_r == log[i].batch_r);
    }
    CHECK_THROWS_AS(write_trajectory_csv(log, dir.path() / "missing" / "x.csv"), IoError);
    CHECK_THROWS_AS(read_trajectory_csv(dir.path() / "nope.csv"), IoError);
}

TEST_CASE("retain probe") {
    CounterRng rng(68);
    const Batch r = fixture::random_batch(5, 100, 4, rng);
    const Batch p = retain_probe(r, 64, CounterRng(1));
    CHECK(p.size() == 64);
    CHECK(retain_probe(r, 64, CounterRng(1)) == p);
    CHECK(retain_probe(r, 500, CounterRng(1)) == r);
    CHECK_THROWS_AS(retain_probe({}, 4, CounterRng(1)), UsageError);
}

}  // TEST_SUITE
