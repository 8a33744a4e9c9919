#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "stedm/errors.hpp"
#include "stedm/rng.hpp"
#include "stedm/tensor.hpp"

namespace stedm {

/// 8-bit interleaved raster (HWC). c is 1 or 3.
struct ImageU8 {
    int w = 0, h = 0, c = 0;
    std::vector<uint8_t> pix;

    ImageU8() = default;
    ImageU8(int w_, int h_, int c_) : w(w_), h(h_), c(c_), pix(size_t(w_) * h_ * c_, 0) {}

    uint8_t& at(int x, int y, int ch) { return pix[(size_t(y) * w + x) * c + ch]; }
    uint8_t at(int x, int y, int ch) const { return pix[(size_t(y) * w + x) * c + ch]; }
};

// ---------------------------------------------------------------------------
// PNG I/O (zlib-backed; 8-bit gray/RGB/RGBA, no interlace)
// ---------------------------------------------------------------------------

namespace pngio {

inline void put_be32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(uint8_t(x >> 24));
    v.push_back(uint8_t(x >> 16));
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x));
}

inline void write_chunk(std::ofstream& os, const char type[4], const std::vector<uint8_t>& data) {
    std::vector<uint8_t> head;
    put_be32(head, static_cast<uint32_t>(data.size()));
    os.write(reinterpret_cast<const char*>(head.data()), 4);
    os.write(type, 4);
    if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
    uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
    if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    std::vector<uint8_t> tail;
    put_be32(tail, crc);
    os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

inline uint32_t get_be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace pngio

inline void write_png(const std::string& path, const ImageU8& img) {
    if (img.c != 1 && img.c != 3) throw io_error("write_png: channels must be 1 or 3");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("write_png: cannot open " + path);
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    os.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<uint8_t> ihdr;
    pngio::put_be32(ihdr, static_cast<uint32_t>(img.w));
    pngio::put_be32(ihdr, static_cast<uint32_t>(img.h));
    ihdr.push_back(8);                            // bit depth
    ihdr.push_back(img.c == 1 ? 0 : 2);           // color type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    pngio::write_chunk(os, "IHDR", ihdr);

    size_t stride = size_t(img.w) * img.c;
    std::vector<uint8_t> raw((stride + 1) * size_t(img.h));
    for (int y = 0; y < img.h; ++y) {
        raw[size_t(y) * (stride + 1)] = 0;  // filter: none
        std::memcpy(raw.data() + size_t(y) * (stride + 1) + 1, img.pix.data() + size_t(y) * stride,
                    stride);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw io_error("write_png: deflate failed");
    comp.resize(comp_len);
    pngio::write_chunk(os, "IDAT", comp);
    pngio::write_chunk(os, "IEND", {});
    if (!os) throw io_error("write_png: write failed for " + path);
}

inline ImageU8 read_png(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("read_png: cannot open " + path);
    std::vector<uint8_t> file((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
        throw data_error("read_png: not a PNG file: " + path);

    int w = 0, h = 0, color_type = -1;
    std::vector<uint8_t> idat;
    size_t off = 8;
    while (off + 8 <= file.size()) {
        uint32_t len = pngio::get_be32(&file[off]);
        if (off + 12 + len > file.size()) throw data_error("read_png: truncated chunk in " + path);
        std::string type(reinterpret_cast<const char*>(&file[off + 4]), 4);
        const uint8_t* data = &file[off + 8];
        if (type == "IHDR") {
            w = static_cast<int>(pngio::get_be32(data));
            h = static_cast<int>(pngio::get_be32(data + 4));
            int depth = data[8];
            color_type = data[9];
            if (depth != 8) throw data_error("read_png: only 8-bit PNGs supported: " + path);
            if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6)
                throw data_error("read_png: unsupported color type (palette?): " + path);
            if (data[12] != 0) throw data_error("read_png: interlaced PNGs unsupported: " + path);
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            break;
        }
        off += 12 + len;
    }
    if (w <= 0 || h <= 0 || idat.empty()) throw data_error("read_png: missing image data: " + path);

    int src_c = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;
    size_t stride = size_t(w) * src_c;
    std::vector<uint8_t> raw((stride + 1) * size_t(h));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw data_error("read_png: inflate failed: " + path);

    // undo per-scanline filters
    std::vector<uint8_t> pix(stride * size_t(h));
    int bpp = src_c;
    for (int y = 0; y < h; ++y) {
        uint8_t filter = raw[size_t(y) * (stride + 1)];
        const uint8_t* src = raw.data() + size_t(y) * (stride + 1) + 1;
        uint8_t* dst = pix.data() + size_t(y) * stride;
        const uint8_t* up = y > 0 ? pix.data() + size_t(y - 1) * stride : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            int a = x >= size_t(bpp) ? dst[x - bpp] : 0;
            int b = up ? up[x] : 0;
            int c = (up && x >= size_t(bpp)) ? up[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += pngio::paeth(a, b, c); break;
                default: throw data_error("read_png: bad filter byte: " + path);
            }
            dst[x] = static_cast<uint8_t>(v);
        }
    }

    // normalize to 1 or 3 channels (drop alpha)
    int out_c = (src_c == 1 || src_c == 2) ? 1 : 3;
    ImageU8 img(w, h, out_c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < out_c; ++ch)
                img.at(x, y, ch) = pix[(size_t(y) * w + x) * src_c + ch];
    return img;
}

// ---------------------------------------------------------------------------
// Tensor conversions. Tensors hold CHW floats in [-1, 1].
// ---------------------------------------------------------------------------

inline Tensor image_to_tensor(const ImageU8& img) {
    Tensor t({img.c, img.h, img.w});
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                t.at(ch, y, x) = float(img.at(x, y, ch)) / 127.5f - 1.0f;
    return t;
}

inline ImageU8 tensor_to_image(const Tensor& t) {
    if (t.ndim() != 3) throw shape_error("tensor_to_image: want CHW tensor");
    ImageU8 img(t.dim(2), t.dim(1), t.dim(0));
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                float v = std::clamp(t.at(ch, y, x), -1.0f, 1.0f);
                img.at(x, y, ch) = static_cast<uint8_t>(std::lround((v + 1.0f) * 127.5f));
            }
    return img;
}

// ---------------------------------------------------------------------------
// Color space helpers
// ---------------------------------------------------------------------------

/// h in degrees [0,360), s and v in [0,1]; returns rgb in [0,1].
inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    h = std::fmod(h, 360.0);
    if (h < 0) h += 360.0;
    double c = v * s;
    double hp = h / 60.0;
    double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0, g1 = 0, b1 = 0;
    if (hp < 1) { r1 = c; g1 = x; }
    else if (hp < 2) { r1 = x; g1 = c; }
    else if (hp < 3) { g1 = c; b1 = x; }
    else if (hp < 4) { g1 = x; b1 = c; }
    else if (hp < 5) { r1 = x; b1 = c; }
    else { r1 = c; b1 = x; }
    double m = v - c;
    r = r1 + m;
    g = g1 + m;
    b = b1 + m;
}

/// rgb in [0,1]; hue in degrees [0,360) (0 when gray), s and v in [0,1].
inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    double mx = std::max({r, g, b});
    double mn = std::min({r, g, b});
    double d = mx - mn;
    v = mx;
    s = mx > 0 ? d / mx : 0.0;
    if (d <= 1e-12) {
        h = 0.0;
        return;
    }
    if (mx == r) h = 60.0 * std::fmod((g - b) / d, 6.0);
    else if (mx == g) h = 60.0 * ((b - r) / d + 2.0);
    else h = 60.0 * ((r - g) / d + 4.0);
    if (h < 0) h += 360.0;
}

/// Saturation of a [-1,1] CHW tensor pixel.
inline double pixel_saturation(const Tensor& t, int y, int x) {
    double r = (std::clamp(t.at(0, y, x), -1.0f, 1.0f) + 1.0) / 2.0;
    double g = (std::clamp(t.at(1, y, x), -1.0f, 1.0f) + 1.0) / 2.0;
    double b = (std::clamp(t.at(2, y, x), -1.0f, 1.0f) + 1.0) / 2.0;
    double h, s, v;
    rgb_to_hsv(r, g, b, h, s, v);
    return s;
}

inline double pixel_hue(const Tensor& t, int y, int x) {
    double r = (std::clamp(t.at(0, y, x), -1.0f, 1.0f) + 1.0) / 2.0;
    double g = (std::clamp(t.at(1, y, x), -1.0f, 1.0f) + 1.0) / 2.0;
    double b = (std::clamp(t.at(2, y, x), -1.0f, 1.0f) + 1.0) / 2.0;
    double h, s, v;
    rgb_to_hsv(r, g, b, h, s, v);
    return h;
}

/// Circular distance between two hues, in degrees [0, 180].
inline double hue_distance(double a, double b) {
    double d = std::fmod(std::abs(a - b), 360.0);
    return d > 180.0 ? 360.0 - d : d;
}

/// Circular mean of hues in degrees; hues weighted equally.
inline double circular_mean_hue(const std::vector<double>& hues) {
    double sx = 0, sy = 0;
    for (double h : hues) {
        double rad = h * M_PI / 180.0;
        sx += std::cos(rad);
        sy += std::sin(rad);
    }
    double m = std::atan2(sy, sx) * 180.0 / M_PI;
    if (m < 0) m += 360.0;
    if (m >= 360.0) m -= 360.0;
    return m;
}

/// Normalized hue histogram (saturated pixels only), for palette comparisons.
inline std::vector<double> hue_histogram(const Tensor& img, int bins = 36, double min_sat = 0.2) {
    std::vector<double> hist(static_cast<size_t>(bins), 0.0);
    double total = 0;
    for (int y = 0; y < img.dim(1); ++y)
        for (int x = 0; x < img.dim(2); ++x) {
            if (pixel_saturation(img, y, x) < min_sat) continue;
            int b = std::min(bins - 1, int(pixel_hue(img, y, x) / 360.0 * bins));
            hist[static_cast<size_t>(b)] += 1.0;
            total += 1.0;
        }
    if (total > 0)
        for (auto& v : hist) v /= total;
    return hist;
}

inline double l1_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0;
    for (size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
    return d;
}

// ---------------------------------------------------------------------------
// Affine warps (nearest-neighbor sampling, reflection padding)
// ---------------------------------------------------------------------------

struct AffineParams {
    double angle_deg = 0.0;
    double scale = 1.0;
    double tx = 0.0;  // translation, fraction of width
    double ty = 0.0;
    bool hflip = false;
};

/// Random affine in the ranges used for style/layout augmentation:
/// rotation +-180 deg, scale 0.8-1.2, translation <=10%, random hflip.
inline AffineParams random_affine(Rng& rng) {
    AffineParams p;
    p.angle_deg = rng.uniform(-180.0, 180.0);
    p.scale = rng.uniform(0.8, 1.2);
    p.tx = rng.uniform(-0.1, 0.1);
    p.ty = rng.uniform(-0.1, 0.1);
    p.hflip = rng.bernoulli(0.5);
    return p;
}

inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    int period = 2 * n - 2;
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

/// Warps a CHW tensor by the inverse-mapped affine around the image center.
/// Nearest-neighbor keeps the source palette intact.
inline Tensor affine_warp(const Tensor& src, const AffineParams& p) {
    if (src.ndim() != 3) throw shape_error("affine_warp: want CHW tensor");
    int C = src.dim(0), H = src.dim(1), W = src.dim(2);
    Tensor out({C, H, W});
    double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    double rad = -p.angle_deg * M_PI / 180.0;  // inverse rotation
    double cosr = std::cos(rad), sinr = std::sin(rad);
    double inv_scale = 1.0 / p.scale;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double dx = x - cx - p.tx * W;
            double dy = y - cy - p.ty * H;
            double sx = (cosr * dx - sinr * dy) * inv_scale;
            double sy = (sinr * dx + cosr * dy) * inv_scale;
            if (p.hflip) sx = -sx;
            int ix = reflect_index(int(std::lround(sx + cx)), W);
            int iy = reflect_index(int(std::lround(sy + cy)), H);
            for (int ch = 0; ch < C; ++ch) out.at(ch, y, x) = src.at(ch, iy, ix);
        }
    return out;
}

/// Same warp for an integer class mask stored as a {H,W} tensor of labels.
inline Tensor affine_warp_mask(const Tensor& mask, const AffineParams& p) {
    if (mask.ndim() != 2) throw shape_error("affine_warp_mask: want HxW tensor");
    Tensor as3({1, mask.dim(0), mask.dim(1)});
    for (size_t i = 0; i < mask.numel(); ++i) as3[i] = mask[i];
    Tensor warped = affine_warp(as3, p);
    Tensor out({mask.dim(0), mask.dim(1)});
    for (size_t i = 0; i < out.numel(); ++i) out[i] = warped[i];
    return out;
}

}  // namespace stedm
