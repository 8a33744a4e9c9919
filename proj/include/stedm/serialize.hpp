#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "stedm/errors.hpp"
#include "stedm/tensor.hpp"

namespace stedm {

// Checkpoint container: named float32 arrays in a flat binary file.
// Layout (all integers little-endian):
//   magic   "STEDMCK1"
//   u32     schema version (1)
//   u32     array count
//   per array:
//     u32 name length, name bytes
//     u32 ndim, u32 dims[ndim]
//     f32 data[numel]
// The format is documented in the README; schema bumps are explicit.

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
    uint8_t b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

inline bool host_is_little_endian() {
    uint16_t x = 1;
    uint8_t b;
    std::memcpy(&b, &x, 1);
    return b == 1;
}

}  // namespace detail

constexpr uint32_t kCheckpointSchemaVersion = 1;

inline void save_arrays(const std::string& path,
                        const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("checkpoint: cannot write " + path);
    os.write("STEDMCK1", 8);
    detail::put_u32(os, kCheckpointSchemaVersion);
    detail::put_u32(os, static_cast<uint32_t>(arrays.size()));
    for (const auto& [name, t] : arrays) {
        detail::put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(os, static_cast<uint32_t>(t->ndim()));
        for (int i = 0; i < t->ndim(); ++i) detail::put_u32(os, static_cast<uint32_t>(t->dim(i)));
        if (detail::host_is_little_endian()) {
            os.write(reinterpret_cast<const char*>(t->data()),
                     static_cast<std::streamsize>(t->numel() * 4));
        } else {
            for (size_t i = 0; i < t->numel(); ++i) {
                uint32_t u;
                float f = (*t)[i];
                std::memcpy(&u, &f, 4);
                detail::put_u32(os, u);
            }
        }
    }
    if (!os) throw io_error("checkpoint: write failed for " + path);
}

inline std::map<std::string, Tensor> load_arrays(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "STEDMCK1", 8) != 0)
        throw data_error("checkpoint: bad magic in " + path);
    uint32_t version = detail::get_u32(is);
    if (version != kCheckpointSchemaVersion)
        throw data_error("checkpoint: unsupported schema version in " + path);
    uint32_t count = detail::get_u32(is);
    std::map<std::string, Tensor> out;
    for (uint32_t a = 0; a < count; ++a) {
        uint32_t nlen = detail::get_u32(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        uint32_t ndim = detail::get_u32(is);
        std::vector<int> dims(ndim);
        for (auto& d : dims) d = static_cast<int>(detail::get_u32(is));
        Tensor t(dims);
        if (detail::host_is_little_endian()) {
            is.read(reinterpret_cast<char*>(t.data()),
                    static_cast<std::streamsize>(t.numel() * 4));
        } else {
            for (size_t i = 0; i < t.numel(); ++i) {
                uint32_t u = detail::get_u32(is);
                float f;
                std::memcpy(&f, &u, 4);
                t[i] = f;
            }
        }
        if (!is) throw data_error("checkpoint: truncated file " + path);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

}  // namespace stedm
