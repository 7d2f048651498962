#pragma once

#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

namespace gradrect {

/// SplitMix64 in counter mode ("SplitMix64-CTR").
///
/// The n-th output is `mix64(key + n * 0x9E3779B97F4A7C15)`, where mix64 is the
/// SplitMix64 finalizer. Because outputs are a pure function of (key, n), a
/// stream can be split into named sub-streams without consuming state:
/// `derive("pretrain")` hashes the label into a fresh key. Each pipeline stage
/// (data, pretrain, unlearn, eval, ...) owns its own derived stream, so stages
/// are reproducible independently of one another.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t seed) : key_(mix64(seed)), counter_(0) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()();

    /// Independent stream keyed by (this key, label). Does not advance *this.
    [[nodiscard]] CounterRng derive(std::string_view label) const;
    [[nodiscard]] CounterRng derive(std::uint64_t index) const;

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform integer in [0, n) by rejection (unbiased). n must be > 0.
    std::uint64_t below(std::uint64_t n);
    double normal();

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    static std::uint64_t mix64(std::uint64_t z);

private:
    CounterRng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

    std::uint64_t key_;
    std::uint64_t counter_;
};

/// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> random_permutation(std::size_t n, CounterRng& rng);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace gradrect
