#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "lsr/common.hpp"

namespace lsr {

/// Little-endian binary writer. Field widths are explicit so the on-disk
/// formats are identical regardless of host padding rules.
class BinWriter {
public:
    explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw DataError("cannot open for writing: " + path);
        path_ = path;
    }

    void magic(const char (&tag)[9]) { out_.write(tag, 8); }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }

    void close() {
        out_.close();
        if (!out_) throw DataError("write failure: " + path_);
    }

private:
    template <class T>
    void le(T v) {
        unsigned char buf[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        raw(buf, sizeof(T));
    }
    void raw(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) throw DataError("write failure: " + path_);
    }

    std::ofstream out_;
    std::string path_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw DataError("cannot open: " + path);
    }

    void expect_magic(const char (&tag)[9]) {
        char buf[8];
        raw(buf, 8);
        if (std::memcmp(buf, tag, 8) != 0) throw DataError(path_ + ": bad magic, expected " + tag);
    }
    std::uint8_t u8() {
        std::uint8_t v;
        raw(&v, 1);
        return v;
    }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }

    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

private:
    template <class T>
    T le() {
        unsigned char buf[sizeof(T)];
        raw(buf, sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
        return v;
    }
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n)) throw DataError(path_ + ": truncated file");
    }

    std::ifstream in_;
    std::string path_;
};

}  // namespace lsr
