#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stedm/errors.hpp"
#include "stedm/image.hpp"
#include "stedm/rng.hpp"
#include "stedm/style.hpp"
#include "stedm/tensor.hpp"

namespace stedm::sampling {

/// Tissue-fraction threshold for a patch to count as valid (paper is silent;
/// half the patch must be tissue).
constexpr double kTissueFractionThreshold = 0.5;

struct PatchRef {
    int slide_index = 0;
    int x = 0, y = 0;  // top-left pixel
    int size = 0;

    void check_bounds(int W, int H) const {
        if (x < 0 || y < 0 || x + size > W || y + size > H)
            throw index_error("PatchRef: patch outside slide bounds");
    }
};

inline Tensor extract_patch(const Tensor& slide, const PatchRef& p) {
    p.check_bounds(slide.dim(2), slide.dim(1));
    int C = slide.dim(0);
    Tensor out({C, p.size, p.size});
    for (int c = 0; c < C; ++c)
        for (int yy = 0; yy < p.size; ++yy)
            for (int xx = 0; xx < p.size; ++xx)
                out.at(c, yy, xx) = slide.at(c, p.y + yy, p.x + xx);
    return out;
}

inline Tensor extract_mask_patch(const Tensor& mask, const PatchRef& p) {
    Tensor out({p.size, p.size});
    for (int yy = 0; yy < p.size; ++yy)
        for (int xx = 0; xx < p.size; ++xx) out.at(yy, xx) = mask.at(p.y + yy, p.x + xx);
    return out;
}

// ---------------------------------------------------------------------------
// Tissue detection
// ---------------------------------------------------------------------------

enum class ThresholdMethod { otsu, fixed };

/// Binary tissue mask at a downsampled level, with a summed-area table for
/// O(1) patch fraction queries.
struct TissueMask {
    int level = 1;        // downsample factor relative to the slide
    int w = 0, h = 0;     // mask grid dims
    std::vector<uint8_t> mask;
    std::vector<int> sat;  // (h+1) x (w+1) summed-area table

    bool at(int gx, int gy) const { return mask[size_t(gy) * w + gx] != 0; }

    void build_sat() {
        sat.assign(size_t(h + 1) * (w + 1), 0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                sat[size_t(y + 1) * (w + 1) + (x + 1)] =
                    sat[size_t(y) * (w + 1) + (x + 1)] + sat[size_t(y + 1) * (w + 1) + x] -
                    sat[size_t(y) * (w + 1) + x] + (mask[size_t(y) * w + x] ? 1 : 0);
    }

    /// Fraction of tissue cells inside a patch given in slide pixel coords.
    double patch_fraction(int px, int py, int size) const {
        int x0 = px / level, y0 = py / level;
        int x1 = std::min(w, (px + size + level - 1) / level);
        int y1 = std::min(h, (py + size + level - 1) / level);
        if (x0 >= x1 || y0 >= y1) return 0.0;
        int total = (x1 - x0) * (y1 - y0);
        int hits = sat[size_t(y1) * (w + 1) + x1] - sat[size_t(y0) * (w + 1) + x1] -
                   sat[size_t(y1) * (w + 1) + x0] + sat[size_t(y0) * (w + 1) + x0];
        return double(hits) / double(total);
    }
};

/// Otsu threshold over a 256-bin histogram; returns the bin boundary in [0,1].
inline double otsu_threshold(const std::vector<double>& hist) {
    double total = 0, sum_all = 0;
    for (size_t i = 0; i < hist.size(); ++i) {
        total += hist[i];
        sum_all += hist[i] * double(i);
    }
    if (total <= 0) return 0.5;
    double best_t = 127, best_var = -1.0;
    double w0 = 0, sum0 = 0;
    for (size_t i = 0; i + 1 < hist.size(); ++i) {
        w0 += hist[i];
        sum0 += hist[i] * double(i);
        double w1 = total - w0;
        if (w0 <= 0 || w1 <= 0) continue;
        double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best_var) {
            best_var = between;
            best_t = double(i);
        }
    }
    return (best_t + 0.5) / 255.0;
}

/// Grayscale-thresholds a slide: tissue is darker than the (near-white)
/// background, so the mask is true below the threshold.
inline TissueMask compute_tissue_mask(const Tensor& slide, ThresholdMethod method = ThresholdMethod::otsu,
                                      int level = 4, double fixed_threshold = 0.9) {
    if (slide.ndim() != 3) throw shape_error("compute_tissue_mask: want CHW slide");
    int H = slide.dim(1), W = slide.dim(2);
    TissueMask tm;
    tm.level = std::max(1, level);
    tm.w = (W + tm.level - 1) / tm.level;
    tm.h = (H + tm.level - 1) / tm.level;
    // intensity = brightness (max channel), so stained tissue of any hue is
    // uniformly darker than the white slide background
    std::vector<double> gray(size_t(tm.w) * tm.h, 0.0);
    std::vector<int> counts(size_t(tm.w) * tm.h, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double g = 0;
            for (int c = 0; c < slide.dim(0); ++c)
                g = std::max(g, (double(slide.at(c, y, x)) + 1.0) / 2.0);
            size_t cell = size_t(y / tm.level) * tm.w + size_t(x / tm.level);
            gray[cell] += g;
            counts[cell]++;
        }
    for (size_t i = 0; i < gray.size(); ++i) gray[i] /= std::max(1, counts[i]);

    double thr;
    if (method == ThresholdMethod::otsu) {
        std::vector<double> hist(256, 0.0);
        for (double g : gray) {
            int b = std::clamp(int(g * 255.0), 0, 255);
            hist[size_t(b)] += 1.0;
        }
        thr = otsu_threshold(hist);
        // degenerate (single-mode) slides: fall back to a high fixed cut
        double lo = *std::min_element(gray.begin(), gray.end());
        double hi = *std::max_element(gray.begin(), gray.end());
        if (hi - lo < 0.05) thr = fixed_threshold;
    } else {
        thr = fixed_threshold;
    }
    tm.mask.resize(gray.size());
    for (size_t i = 0; i < gray.size(); ++i) tm.mask[i] = gray[i] < thr ? 1 : 0;
    tm.build_sat();
    return tm;
}

// ---------------------------------------------------------------------------
// Style sampling strategies
// ---------------------------------------------------------------------------

/// Augmented strategy: a single affine-transformed copy of the image.
/// Geometry moves, the palette stays.
inline style::StyleQuerySet sample_augmented(const Tensor& image, uint64_t seed) {
    Rng rng(seed);
    style::StyleQuerySet q;
    q.images.push_back(affine_warp(image, random_affine(rng)));
    return q;
}

struct NearbyResult {
    PatchRef patch;
    bool anchor_fallback = false;  // no alternative existed; anchor returned
};

/// Nearby strategy: a patch whose top-left lies within Chebyshev distance
/// `radius` of the anchor, on tissue, excluding the anchor position when an
/// alternative exists.
inline NearbyResult sample_nearby_ref(const Tensor& slide, const TissueMask& tissue,
                                      const PatchRef& anchor, int radius, uint64_t seed) {
    if (radius < 0) throw param_error("sample_nearby: radius must be >= 0");
    int W = slide.dim(2), H = slide.dim(1);
    anchor.check_bounds(W, H);
    Rng rng(seed);
    int x_lo = std::max(0, anchor.x - radius), x_hi = std::min(W - anchor.size, anchor.x + radius);
    int y_lo = std::max(0, anchor.y - radius), y_hi = std::min(H - anchor.size, anchor.y + radius);
    if (x_lo > x_hi || y_lo > y_hi) throw sampling_error("sample_nearby: no in-bounds position");

    auto valid = [&](int x, int y) {
        return tissue.patch_fraction(x, y, anchor.size) >= kTissueFractionThreshold;
    };

    for (int tries = 0; tries < 256; ++tries) {
        int x = rng.uniform_int(x_lo, x_hi);
        int y = rng.uniform_int(y_lo, y_hi);
        if (x == anchor.x && y == anchor.y) continue;
        if (valid(x, y)) return {PatchRef{anchor.slide_index, x, y, anchor.size}, false};
    }
    // exhaustive scan: rejection failed or only the anchor qualifies
    std::vector<std::pair<int, int>> candidates;
    for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x)
            if (!(x == anchor.x && y == anchor.y) && valid(x, y)) candidates.emplace_back(x, y);
    if (!candidates.empty()) {
        auto [x, y] = candidates[rng.uniform_int(candidates.size())];
        return {PatchRef{anchor.slide_index, x, y, anchor.size}, false};
    }
    if (valid(anchor.x, anchor.y)) return {anchor, true};
    throw sampling_error("sample_nearby: no tissue position within radius");
}

inline style::StyleQuerySet sample_nearby(const Tensor& slide, const TissueMask& tissue,
                                          const PatchRef& anchor, int radius, uint64_t seed,
                                          bool* anchor_fallback = nullptr) {
    NearbyResult r = sample_nearby_ref(slide, tissue, anchor, radius, seed);
    if (anchor_fallback) *anchor_fallback = r.anchor_fallback;
    style::StyleQuerySet q;
    q.images.push_back(extract_patch(slide, r.patch));
    return q;
}

/// Uniform over valid tissue positions (with replacement).
inline PatchRef sample_tissue_patch(const Tensor& slide, const TissueMask& tissue, int patch_size,
                                    int slide_index, Rng& rng) {
    int W = slide.dim(2), H = slide.dim(1);
    if (patch_size > W || patch_size > H)
        throw param_error("sample_tissue_patch: patch larger than slide");
    for (int tries = 0; tries < 512; ++tries) {
        int x = rng.uniform_int(0, W - patch_size);
        int y = rng.uniform_int(0, H - patch_size);
        if (tissue.patch_fraction(x, y, patch_size) >= kTissueFractionThreshold)
            return PatchRef{slide_index, x, y, patch_size};
    }
    // rare: enumerate valid positions on a coarse grid, then exactly
    std::vector<std::pair<int, int>> candidates;
    for (int y = 0; y + patch_size <= H; ++y)
        for (int x = 0; x + patch_size <= W; ++x)
            if (tissue.patch_fraction(x, y, patch_size) >= kTissueFractionThreshold)
                candidates.emplace_back(x, y);
    if (candidates.empty()) throw sampling_error("sample_tissue_patch: tissue area too small");
    auto [x, y] = candidates[rng.uniform_int(candidates.size())];
    return PatchRef{slide_index, x, y, patch_size};
}

inline std::vector<PatchRef> sample_multipatch_refs(const Tensor& slide, const TissueMask& tissue,
                                                    int n, int patch_size, int slide_index,
                                                    uint64_t seed) {
    if (n < 1) throw param_error("sample_multipatch: n must be >= 1");
    bool any = false;
    for (uint8_t m : tissue.mask) any |= m != 0;
    if (!any) throw sampling_error("sample_multipatch: empty tissue mask");
    Rng rng(seed);
    std::vector<PatchRef> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        out.push_back(sample_tissue_patch(slide, tissue, patch_size, slide_index, rng));
    return out;
}

/// Multi-patch strategy: n random tissue patches of one slide.
inline style::StyleQuerySet sample_multipatch(const Tensor& slide, const TissueMask& tissue, int n,
                                              int patch_size, uint64_t seed) {
    style::StyleQuerySet q;
    for (const auto& ref : sample_multipatch_refs(slide, tissue, n, patch_size, 0, seed))
        q.images.push_back(extract_patch(slide, ref));
    return q;
}

// ---------------------------------------------------------------------------
// Inference-time style sourcing from unseen pools
// ---------------------------------------------------------------------------

enum class Strategy { none, augmented, nearby, multipatch };

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "none") return Strategy::none;
    if (s == "augmented") return Strategy::augmented;
    if (s == "nearby") return Strategy::nearby;
    if (s == "multipatch") return Strategy::multipatch;
    throw param_error("unknown strategy: " + s);
}

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::none: return "none";
        case Strategy::augmented: return "augmented";
        case Strategy::nearby: return "nearby";
        case Strategy::multipatch: return "multipatch";
    }
    return "?";
}

/// A style pool exposes pixels only; masks of style-source items never
/// reach generation code.
struct StylePool {
    std::vector<Tensor> images;       // whole images (shapes/folder pools)
    std::vector<Tensor> slides;       // whole slides (cohort pools)
    std::vector<TissueMask> tissues;  // per slide
    int patch_size = 0;
};

/// Draws a style query set from an unseen pool. Nearby/augmented use a single
/// random image or tissue patch; multipatch draws n patches from one slide.
inline style::StyleQuerySet sample_inference_styles(const StylePool& pool, Strategy strategy,
                                                    int n, uint64_t seed) {
    Rng rng(seed);
    if (strategy == Strategy::none) {
        style::StyleQuerySet q;
        q.dropped = true;
        return q;
    }
    if (!pool.slides.empty()) {
        size_t s = rng.uniform_int(pool.slides.size());
        const Tensor& slide = pool.slides[s];
        const TissueMask& tissue = pool.tissues[s];
        if (strategy == Strategy::multipatch)
            return sample_multipatch(slide, tissue, n, pool.patch_size, rng.next_u64());
        style::StyleQuerySet q;
        PatchRef ref = sample_tissue_patch(slide, tissue, pool.patch_size,
                                           static_cast<int>(s), rng);
        q.images.push_back(extract_patch(slide, ref));
        return q;
    }
    if (pool.images.empty()) throw data_error("sample_inference_styles: empty pool");
    style::StyleQuerySet q;
    if (strategy == Strategy::multipatch) {
        for (int i = 0; i < n; ++i)
            q.images.push_back(pool.images[rng.uniform_int(pool.images.size())]);
    } else {
        q.images.push_back(pool.images[rng.uniform_int(pool.images.size())]);
    }
    return q;
}

}  // namespace stedm::sampling
