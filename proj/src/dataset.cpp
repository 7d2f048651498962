#include "gradrect/dataset.hpp"

#include <fmt/format.h>

#include "binio.hpp"
#include "gradrect/errors.hpp"

namespace gradrect {

TokenSequence::TokenSequence(std::vector<TokenId> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty()) throw UsageError("TokenSequence must be non-empty");
}

void TokenSequence::check_vocab(std::size_t vocab_size) const {
    for (TokenId t : tokens_)
        if (t >= vocab_size)
            throw DomainError(fmt::format("token id {} out of range for vocabulary {}", t, vocab_size));
}

const char* to_string(Split s) {
    switch (s) {
        case Split::Unlearn: return "unlearn";
        case Split::Retain: return "retain";
        case Split::Holdout: return "holdout";
    }
    return "?";
}

TokenDataset::TokenDataset(std::size_t vocab_size, std::vector<TaggedSequence> entries)
    : vocab_size_(vocab_size), entries_(std::move(entries)) {
    if (vocab_size_ == 0) throw UsageError("vocabulary size must be positive");
    for (const auto& e : entries_) {
        e.sequence.check_vocab(vocab_size_);
        if (static_cast<unsigned>(e.split) > 2) throw UsageError("invalid split tag");
    }
}

Batch TokenDataset::select(Split split) const {
    Batch out;
    for (const auto& e : entries_)
        if (e.split == split) out.push_back(e.sequence);
    return out;
}

std::size_t TokenDataset::count(Split split) const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.split == split;
    return n;
}

void TokenDataset::save(const std::filesystem::path& path) const {
    binio::Writer w(path);
    w.bytes("GRDDATA1", 8);
    w.uint(kDatasetFormatVersion);
    w.uint(static_cast<std::uint32_t>(vocab_size_));
    w.uint(static_cast<std::uint64_t>(entries_.size()));
    for (const auto& e : entries_) {
        w.uint(static_cast<std::uint8_t>(e.split));
        w.uint(e.profile);
        w.uint(static_cast<std::uint32_t>(e.sequence.size()));
        for (TokenId t : e.sequence) w.uint(t);
    }
    w.finish();
}

TokenDataset TokenDataset::load(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("GRDDATA1");
    const auto version = r.uint<std::uint32_t>();
    if (version != kDatasetFormatVersion)
        throw IoError(fmt::format("'{}': unsupported dataset version {}", path.string(), version));
    const auto vocab = r.uint<std::uint32_t>();
    const auto count = r.uint<std::uint64_t>();
    std::vector<TaggedSequence> entries;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto split = r.uint<std::uint8_t>();
        if (split > 2) throw IoError(fmt::format("'{}': bad split tag {}", path.string(), split));
        const auto profile = r.uint<std::uint32_t>();
        const auto len = r.uint<std::uint32_t>();
        if (len == 0) throw IoError(fmt::format("'{}': empty sequence", path.string()));
        std::vector<TokenId> tokens(len);
        for (auto& t : tokens) t = r.uint<std::uint32_t>();
        entries.push_back({TokenSequence(std::move(tokens)), static_cast<Split>(split), profile});
    }
    if (!r.at_end()) throw IoError(fmt::format("'{}': trailing bytes", path.string()));
    try {
        return TokenDataset(vocab, std::move(entries));
    } catch (const std::exception& e) {
        throw IoError(fmt::format("'{}': {}", path.string(), e.what()));
    }
}

bool TokenDataset::operator==(const TokenDataset& other) const {
    if (vocab_size_ != other.vocab_size_ || entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.split != b.split || a.profile != b.profile || !(a.sequence == b.sequence)) return false;
    }
    return true;
}

}  // namespace gradrect
