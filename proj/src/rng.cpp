#include "gradrect/rng.hpp"

#include <cmath>
#include <numbers>

#include "gradrect/errors.hpp"

namespace gradrect {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t CounterRng::mix64(std::uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

CounterRng::result_type CounterRng::operator()() {
    const std::uint64_t out = mix64(key_ + counter_ * kGolden);
    ++counter_;
    return out;
}

CounterRng CounterRng::derive(std::string_view label) const {
    return CounterRng(mix64(key_ ^ mix64(fnv1a64(label))), 0, 0);
}

CounterRng CounterRng::derive(std::uint64_t index) const {
    return CounterRng(mix64(key_ ^ mix64(~index)), 0, 0);
}

double CounterRng::uniform() {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

std::uint64_t CounterRng::below(std::uint64_t n) {
    if (n == 0) throw UsageError("CounterRng::below: n must be positive");
    const std::uint64_t limit = max() - max() % n;
    for (;;) {
        const std::uint64_t x = (*this)();
        if (x < limit) return x % n;
    }
}

double CounterRng::normal() {
    // Box-Muller; u1 is kept away from 0.
    const double u1 = (static_cast<double>((*this)() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::size_t> random_permutation(std::size_t n, CounterRng& rng) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace gradrect
