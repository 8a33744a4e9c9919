#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "stedm/errors.hpp"

namespace stedm {

/// Minimal SHA-1, used for content-addressing configs and result tables.
class Sha1 {
public:
    Sha1() { reset(); }

    void reset() {
        h_ = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
        len_ = 0;
        buf_fill_ = 0;
    }

    void update(const void* data, size_t n) {
        const auto* p = static_cast<const uint8_t*>(data);
        len_ += n;
        while (n > 0) {
            size_t take = std::min(n, sizeof(buf_) - buf_fill_);
            std::memcpy(buf_ + buf_fill_, p, take);
            buf_fill_ += take;
            p += take;
            n -= take;
            if (buf_fill_ == sizeof(buf_)) {
                process(buf_);
                buf_fill_ = 0;
            }
        }
    }

    void update(const std::string& s) { update(s.data(), s.size()); }

    std::string hex_digest() {
        uint64_t bits = len_ * 8;
        uint8_t pad = 0x80;
        update(&pad, 1);
        uint8_t zero = 0;
        while (buf_fill_ != 56) update(&zero, 1);
        uint8_t lenb[8];
        for (int i = 0; i < 8; ++i) lenb[i] = static_cast<uint8_t>(bits >> (56 - 8 * i));
        // bypass len_ accounting for the trailer
        std::memcpy(buf_ + 56, lenb, 8);
        process(buf_);
        static const char* hexd = "0123456789abcdef";
        std::string out(40, '0');
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 8; ++j)
                out[static_cast<size_t>(i * 8 + j)] = hexd[(h_[static_cast<size_t>(i)] >> (28 - 4 * j)) & 0xF];
        return out;
    }

    static std::string of(const std::string& s) {
        Sha1 h;
        h.update(s);
        return h.hex_digest();
    }

    static std::string of_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw io_error("sha1: cannot open " + path);
        Sha1 h;
        char buf[65536];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
            h.update(buf, static_cast<size_t>(in.gcount()));
        return h.hex_digest();
    }

private:
    static uint32_t rol(uint32_t x, int s) { return (x << s) | (x >> (32 - s)); }

    void process(const uint8_t* block) {
        uint32_t w[80];
        for (int i = 0; i < 16; ++i)
            w[i] = (uint32_t(block[4 * i]) << 24) | (uint32_t(block[4 * i + 1]) << 16) |
                   (uint32_t(block[4 * i + 2]) << 8) | uint32_t(block[4 * i + 3]);
        for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
        uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
        for (int i = 0; i < 80; ++i) {
            uint32_t f, k;
            if (i < 20) {
                f = (b & c) | ((~b) & d);
                k = 0x5A827999u;
            } else if (i < 40) {
                f = b ^ c ^ d;
                k = 0x6ED9EBA1u;
            } else if (i < 60) {
                f = (b & c) | (b & d) | (c & d);
                k = 0x8F1BBCDCu;
            } else {
                f = b ^ c ^ d;
                k = 0xCA62C1D6u;
            }
            uint32_t tmp = rol(a, 5) + f + e + k + w[i];
            e = d;
            d = c;
            c = rol(b, 30);
            b = a;
            a = tmp;
        }
        h_[0] += a;
        h_[1] += b;
        h_[2] += c;
        h_[3] += d;
        h_[4] += e;
    }

    std::array<uint32_t, 5> h_{};
    uint8_t buf_[64]{};
    size_t buf_fill_ = 0;
    uint64_t len_ = 0;
};

}  // namespace stedm
