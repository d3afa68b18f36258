#pragma once

// Little-endian byte buffer helpers shared by the RLAB / RDST containers.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rlab/common.hpp"

namespace rlab::wire {

struct Writer {
    std::vector<uint8_t> bytes;

    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    template <class T>
    void le(T v) {
        uint8_t buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        // Host is little-endian on every supported target; keep the copy
        // explicit so the format stays defined.
        raw(buf, sizeof(T));
    }
    void u8(uint8_t v) { le(v); }
    void u16(uint16_t v) { le(v); }
    void u32(uint32_t v) { le(v); }
    void i32(int32_t v) { le(v); }
    void i64(int64_t v) { le(v); }
    void f32(float v) { le(v); }
    void str32(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void str16(const std::string& s) {
        u16(static_cast<uint16_t>(s.size()));
        raw(s.data(), s.size());
    }
};

struct Reader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;

    explicit Reader(const std::vector<uint8_t>& b) : bytes(b) {}

    void raw(void* p, size_t n) {
        if (pos + n > bytes.size())
            throw FormatError("truncated file at byte offset " + std::to_string(pos));
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    }
    template <class T>
    T le() {
        T v;
        raw(&v, sizeof(T));
        return v;
    }
    uint8_t u8() { return le<uint8_t>(); }
    uint16_t u16() { return le<uint16_t>(); }
    uint32_t u32() { return le<uint32_t>(); }
    int32_t i32() { return le<int32_t>(); }
    int64_t i64() { return le<int64_t>(); }
    float f32() { return le<float>(); }
    std::string str32() {
        const uint32_t n = u32();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    std::string str16() {
        const uint16_t n = u16();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
};

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    const auto n = static_cast<size_t>(in.tellg());
    in.seekg(0);
    std::vector<uint8_t> bytes(n);
    if (n) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (!in) throw FormatError("short read: " + path);
    return bytes;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write: " + path);
}

inline void expect_magic(Reader& r, const char magic[4], const std::string& what) {
    char m[4];
    r.raw(m, 4);
    if (std::memcmp(m, magic, 4) != 0)
        throw FormatError(what + ": bad magic (expected \"" + std::string(magic, 4) +
                          "\", got \"" + std::string(m, 4) + "\")");
}

}  // namespace rlab::wire
