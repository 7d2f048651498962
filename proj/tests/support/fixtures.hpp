#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "gradrect/dataset.hpp"
#include "gradrect/model.hpp"
#include "gradrect/rng.hpp"

namespace fixture {

using namespace gradrect;

/// Every parameter (biases included) drawn from N(0, scale^2).
inline Model random_model(ModelKind kind, std::size_t V, CounterRng& rng, double scale = 0.7) {
    const Model base = kind == ModelKind::MlpLm ? Model::mlp_lm(V, 3, 4, rng) : Model::tabular_bigram(V);
    std::vector<double> v(base.params().size());
    for (auto& x : v) x = scale * rng.normal();
    return base.with_params(ParamVector(std::move(v), base.params().segments()));
}

inline Batch random_batch(std::size_t V, std::size_t n, std::size_t max_len, CounterRng& rng) {
    Batch b;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<TokenId> t(1 + rng.below(max_len));
        for (auto& x : t) x = static_cast<TokenId>(rng.below(V));
        b.emplace_back(std::move(t));
    }
    return b;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("gradrect-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace fixture
