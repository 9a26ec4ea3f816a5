#pragma once

// Little-endian primitives shared by the binary dataset, checkpoint and
// projection formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "fairtrain/data.hpp"

namespace fairtrain::binio {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((v >> (8 * b)) & 0xffu);
    os.write(bytes, 8);
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_u32(std::ostream& os, std::uint32_t v) {
    char bytes[4];
    for (int b = 0; b < 4; ++b) bytes[b] = static_cast<char>((v >> (8 * b)) & 0xffu);
    os.write(bytes, 4);
}

class Reader {
public:
    Reader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

    [[noreturn]] void fail(const std::string& message) const {
        throw ParseError(source_ + ": byte offset " + std::to_string(field_offset_) + ": " + message,
                         field_offset_);
    }

    void expect_magic(const char (&magic)[8]) {
        char head[8];
        read_bytes(head, 8, "magic");
        if (std::memcmp(head, magic, 8) != 0) fail("bad magic bytes");
    }

    std::uint64_t u64(const char* what) {
        unsigned char bytes[8];
        read_bytes(reinterpret_cast<char*>(bytes), 8, what);
        std::uint64_t v = 0;
        for (int b = 7; b >= 0; --b) v = (v << 8) | bytes[b];
        return v;
    }

    std::uint32_t u32(const char* what) {
        unsigned char bytes[4];
        read_bytes(reinterpret_cast<char*>(bytes), 4, what);
        std::uint32_t v = 0;
        for (int b = 3; b >= 0; --b) v = (v << 8) | bytes[b];
        return v;
    }

    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

    std::string bytes(std::size_t count, const char* what) {
        std::string out(count, '\0');
        read_bytes(out.data(), count, what);
        return out;
    }

    void expect_end() {
        field_offset_ = offset_;
        if (is_.peek() != std::char_traits<char>::eof()) fail("trailing bytes after payload");
    }

private:
    void read_bytes(char* out, std::size_t count, const char* what) {
        field_offset_ = offset_;
        is_.read(out, static_cast<std::streamsize>(count));
        if (static_cast<std::size_t>(is_.gcount()) != count) {
            fail(std::string("truncated while reading ") + what);
        }
        offset_ += count;
    }

    std::istream& is_;
    std::string source_;
    std::size_t offset_ = 0;
    std::size_t field_offset_ = 0;
};

}  // namespace fairtrain::binio
