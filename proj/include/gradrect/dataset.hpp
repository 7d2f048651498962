#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace gradrect {

using TokenId = std::uint32_t;

/// Non-empty sequence of token ids. Vocabulary bounds are checked against a
/// model or dataset, not here, since the sequence does not know V.
class TokenSequence {
public:
    explicit TokenSequence(std::vector<TokenId> tokens);
    TokenSequence(std::initializer_list<TokenId> tokens)
        : TokenSequence(std::vector<TokenId>(tokens)) {}

    std::size_t size() const { return tokens_.size(); }
    TokenId operator[](std::size_t i) const { return tokens_[i]; }
    std::span<const TokenId> tokens() const { return tokens_; }
    auto begin() const { return tokens_.begin(); }
    auto end() const { return tokens_.end(); }

    /// Throws DomainError if any id >= vocab_size.
    void check_vocab(std::size_t vocab_size) const;

    bool operator==(const TokenSequence&) const = default;

private:
    std::vector<TokenId> tokens_;
};

using Batch = std::vector<TokenSequence>;

enum class Split : std::uint8_t { Unlearn = 0, Retain = 1, Holdout = 2 };

const char* to_string(Split s);

struct TaggedSequence {
    TokenSequence sequence;
    Split split;
    std::uint32_t profile = 0;
};

/// Token corpus partitioned into unlearn (D_u), retain (D_r) and holdout sets.
class TokenDataset {
public:
    TokenDataset(std::size_t vocab_size, std::vector<TaggedSequence> entries);

    std::size_t vocab_size() const { return vocab_size_; }
    std::size_t size() const { return entries_.size(); }
    const std::vector<TaggedSequence>& entries() const { return entries_; }

    /// Sequences carrying `split`, in dataset order.
    Batch select(Split split) const;
    std::size_t count(Split split) const;

    /// Writes the versioned binary format (little-endian):
    ///   "GRDDATA1" | u32 version | u32 vocab | u64 count |
    ///   count x { u8 split | u32 profile | u32 len | u32 tokens[len] }
    void save(const std::filesystem::path& path) const;
    static TokenDataset load(const std::filesystem::path& path);

    bool operator==(const TokenDataset& other) const;

private:
    std::size_t vocab_size_;
    std::vector<TaggedSequence> entries_;
};

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

}  // namespace gradrect
