#pragma once

// Little-endian binary primitives shared by the volume, ADC, and checkpoint
// formats. Values are packed bytewise so files decode identically on any host.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace tessflow::io {

class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated stream (u32)");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_u64(std::ostream& os, uint64_t v) {
    write_u32(os, static_cast<uint32_t>(v));
    write_u32(os, static_cast<uint32_t>(v >> 32));
}

inline uint64_t read_u64(std::istream& is) {
    uint64_t lo = read_u32(is);
    uint64_t hi = read_u32(is);
    return lo | (hi << 32);
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline float read_f32(std::istream& is) {
    uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void write_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
    uint64_t bits = read_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

// 12-byte magic + u32 version = 16-byte header
inline void write_magic(std::ostream& os, const char magic[12], uint32_t version) {
    os.write(magic, 12);
    write_u32(os, version);
}

inline uint32_t read_magic(std::istream& is, const char magic[12]) {
    char buf[12];
    if (!is.read(buf, 12)) throw FormatError("truncated stream (magic)");
    if (std::memcmp(buf, magic, 12) != 0) throw FormatError("bad magic");
    return read_u32(is);
}

} // namespace tessflow::io
