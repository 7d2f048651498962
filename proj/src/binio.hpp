#pragma once

// Little-endian binary helpers shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect::binio {

class Writer {
public:
    explicit Writer(const std::filesystem::path& path)
        : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    }

    void bytes(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    }
    template <typename U>
    void uint(U v) {
        unsigned char buf[sizeof(U)];
        for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(buf, sizeof(U));
    }
    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        uint(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    void finish() {
        out_.flush();
        if (!out_) throw IoError(fmt::format("write to '{}' failed", path_.string()));
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
    }

    void bytes(void* data, std::size_t n) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw IoError(fmt::format("'{}': unexpected end of file", path_.string()));
    }
    template <typename U>
    U uint() {
        unsigned char buf[sizeof(U)];
        bytes(buf, sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
    std::string str(std::size_t max_len = 1 << 16) {
        const auto n = uint<std::uint32_t>();
        if (n > max_len) throw IoError(fmt::format("'{}': string too long", path_.string()));
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    void expect_magic(const char (&magic)[9]) {
        char buf[8];
        bytes(buf, 8);
        if (std::string(buf, 8) != std::string(magic, 8))
            throw IoError(fmt::format("'{}': bad magic, expected {}", path_.string(), magic));
    }
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ifstream in_;
};

}  // namespace gradrect::binio
