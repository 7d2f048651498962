#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "gradrect/dataset.hpp"
#include "gradrect/rng.hpp"

namespace gradrect {

/// Synthetic profile corpus: each profile is a bigram source, loosely in the
/// shape of a fictitious-author benchmark where whole profiles are forgotten.
struct CorpusSpec {
    std::size_t vocab_size = 32;
    std::size_t n_profiles = 40;
    std::size_t seqs_per_profile = 20;
    std::size_t seq_len = 16;
    double forget_fraction = 0.05;  // one of 0.01, 0.05, 0.10
    /// Dirichlet sharpness around the shared base table; large values make
    /// every profile table converge to the base.
    double profile_concentration = 2.0;
    /// Dirichlet parameter of the shared base rows (small = peaky rows).
    double base_concentration = 0.3;
    double holdout_fraction = 0.1;  // share of non-forget profiles held out
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t forget_profiles() const;
    std::size_t holdout_profiles() const;
};

nlohmann::json to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);

/// (V+1) x V row-stochastic transition table per profile (row V is the
/// start-of-sequence distribution). All profiles draw each row from
/// Dirichlet(profile_concentration * base_row) around one shared base table.
std::vector<std::vector<double>> sample_profile_tables(const CorpusSpec& spec, CounterRng& rng);

/// Samples tables and sequences. Forget profiles (chosen by seeded shuffle)
/// are tagged Unlearn; the remaining profiles are split into Retain and
/// Holdout profiles.
TokenDataset gen_corpus(const CorpusSpec& spec);

/// Mean total-variation distance between corresponding rows of two tables.
double table_tv_distance(const std::vector<double>& p, const std::vector<double>& q,
                         std::size_t vocab_size);

}  // namespace gradrect
