#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stedm/errors.hpp"
#include "stedm/image.hpp"
#include "stedm/rng.hpp"
#include "stedm/tensor.hpp"

namespace stedm::data {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kDatasetSchema = "stedm.dataset.v1";

enum class Split { annotated_train, annotated_val, style_source, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::annotated_train: return "annotated_train";
        case Split::annotated_val: return "annotated_val";
        case Split::style_source: return "style_source";
        case Split::test: return "test";
    }
    return "?";
}

inline Split split_from_name(const std::string& s) {
    if (s == "annotated_train") return Split::annotated_train;
    if (s == "annotated_val") return Split::annotated_val;
    if (s == "style_source") return Split::style_source;
    if (s == "test") return Split::test;
    throw data_error("unknown split name: " + s);
}

/// Ground-truth style parameters recorded exactly as used by the renderer.
/// These are the evaluation oracle for style fidelity.
struct StyleParams {
    double hue_deg = 0.0;        // foreground (tumor/shape) hue
    double saturation = 0.8;     // foreground saturation
    double texture_scale = 3.0;  // value-modulation frequency
    double background_hue = 0.0; // background/tissue hue

    json to_json() const {
        return json{{"hue_deg", hue_deg},
                    {"saturation", saturation},
                    {"texture_scale", texture_scale},
                    {"background_hue", background_hue}};
    }

    static StyleParams from_json(const json& j) {
        StyleParams p;
        p.hue_deg = j.at("hue_deg").get<double>();
        p.saturation = j.at("saturation").get<double>();
        p.texture_scale = j.at("texture_scale").get<double>();
        p.background_hue = j.at("background_hue").get<double>();
        return p;
    }
};

/// One dataset item. Shapes items carry a patch-sized image; cohort items
/// carry a whole synthetic slide with its layout field.
struct Item {
    std::string id;
    Split split = Split::annotated_train;
    Tensor image;        // {3,H,W}
    Tensor mask;         // {H,W} labels, empty if the item has none
    bool mask_on_disk = false;
    StyleParams style;
    int shape_class = -1;
    std::string patient_id;
};

enum class DatasetKind { shapes, cohort, folder };

inline const char* kind_name(DatasetKind k) {
    switch (k) {
        case DatasetKind::shapes: return "shapes";
        case DatasetKind::cohort: return "cohort";
        case DatasetKind::folder: return "folder";
    }
    return "?";
}

inline DatasetKind kind_from_name(const std::string& s) {
    if (s == "shapes") return DatasetKind::shapes;
    if (s == "cohort") return DatasetKind::cohort;
    if (s == "folder") return DatasetKind::folder;
    throw data_error("unknown dataset kind: " + s);
}

struct Dataset {
    DatasetKind kind = DatasetKind::shapes;
    uint64_t seed = 0;
    json params;
    std::vector<Item> items;

    std::vector<int> split_indices(Split s) const {
        std::vector<int> out;
        for (size_t i = 0; i < items.size(); ++i)
            if (items[i].split == s) out.push_back(static_cast<int>(i));
        return out;
    }

    void validate_splits() const {
        // split disjointness holds by construction (one split per item);
        // ids must be unique so no item can appear in two splits on disk
        std::map<std::string, int> seen;
        for (const auto& it : items)
            if (++seen[it.id] > 1) throw data_error("dataset: duplicate item id " + it.id);
    }
};

// ---------------------------------------------------------------------------
// Shape rendering
// ---------------------------------------------------------------------------

namespace render {

struct ShapeGeom {
    int kind = 0;  // 0 circle, 1 cross, 2 star, 3 blob
    double cx = 0, cy = 0;
    double r0 = 0;
    double bar_hw = 0, bar_hl = 0;
    double rot = 0;
    double amp[3] = {0, 0, 0};
    double phase[3] = {0, 0, 0};
};

inline ShapeGeom random_shape(int kind, int size, Rng& rng) {
    ShapeGeom g;
    g.kind = kind;
    double s = size;
    g.cx = s * (0.5 + rng.uniform(-0.08, 0.08));
    g.cy = s * (0.5 + rng.uniform(-0.08, 0.08));
    g.rot = rng.uniform(0.0, 2 * M_PI);
    switch (kind) {
        case 0: g.r0 = s * rng.uniform(0.26, 0.38); break;
        case 1:
            g.bar_hw = s * rng.uniform(0.07, 0.11);
            g.bar_hl = s * rng.uniform(0.3, 0.42);
            break;
        case 2:
            g.r0 = s * rng.uniform(0.2, 0.3);
            g.amp[0] = rng.uniform(0.35, 0.5);
            break;
        default:
            g.r0 = s * rng.uniform(0.24, 0.34);
            for (int i = 0; i < 3; ++i) {
                g.amp[i] = rng.uniform(0.0, 0.12);
                g.phase[i] = rng.uniform(0.0, 2 * M_PI);
            }
            break;
    }
    return g;
}

inline bool inside_shape(const ShapeGeom& g, double x, double y) {
    double dx = x - g.cx, dy = y - g.cy;
    double c = std::cos(-g.rot), s = std::sin(-g.rot);
    double rx = c * dx - s * dy;
    double ry = s * dx + c * dy;
    switch (g.kind) {
        case 0:
            return dx * dx + dy * dy <= g.r0 * g.r0;
        case 1:
            return (std::abs(rx) <= g.bar_hw && std::abs(ry) <= g.bar_hl) ||
                   (std::abs(ry) <= g.bar_hw && std::abs(rx) <= g.bar_hl);
        case 2: {
            double r = std::sqrt(rx * rx + ry * ry);
            double th = std::atan2(ry, rx);
            double rmax = g.r0 * (1.0 + g.amp[0] * std::cos(5.0 * th));
            return r <= rmax;
        }
        default: {
            double r = std::sqrt(rx * rx + ry * ry);
            double th = std::atan2(ry, rx);
            double rmax = g.r0 * (1.0 + g.amp[0] * std::cos(2 * th + g.phase[0]) +
                                  g.amp[1] * std::cos(3 * th + g.phase[1]) +
                                  g.amp[2] * std::cos(5 * th + g.phase[2]));
            return r <= rmax;
        }
    }
}

/// Foreground texture modulates value only; hue stays exact.
inline double texture(double x, double y, double scale, double size, double amp) {
    double u = 2 * M_PI * scale * x / size, v = 2 * M_PI * scale * y / size;
    return amp * std::sin(u) * std::sin(v);
}

inline void put_pixel(Tensor& img, int x, int y, double h, double s, double v) {
    double r, g, b;
    hsv_to_rgb(h, s, std::clamp(v, 0.0, 1.0), r, g, b);
    img.at(0, y, x) = static_cast<float>(r * 2.0 - 1.0);
    img.at(1, y, x) = static_cast<float>(g * 2.0 - 1.0);
    img.at(2, y, x) = static_cast<float>(b * 2.0 - 1.0);
}

}  // namespace render

// ---------------------------------------------------------------------------
// Shapes dataset (flowers analog): style axis = foreground hue, orthogonal
// to shape class and layout by construction.
// ---------------------------------------------------------------------------

struct ShapesOptions {
    int size = 32;
    double train_frac = 0.6;
    double val_frac = 0.1;
    double style_frac = 0.2;  // remainder goes to test
    double fg_sat_lo = 0.7, fg_sat_hi = 1.0;
    double bg_sat_lo = 0.04, bg_sat_hi = 0.16;
};

/// Samples a hue uniformly outside [lo,hi) (the held-out interval).
inline double sample_hue_excluding(double lo, double hi, Rng& rng) {
    double width = hi - lo;
    double u = rng.uniform(0.0, 360.0 - width);
    return u < lo ? u : u + width;
}

inline Item render_shape_item(int size, double hue, int shape_class, const ShapesOptions& opt,
                              Rng& rng) {
    Item it;
    it.shape_class = shape_class;
    it.style.hue_deg = hue;
    it.style.saturation = rng.uniform(opt.fg_sat_lo, opt.fg_sat_hi);
    it.style.texture_scale = rng.uniform(2.0, 6.0);
    it.style.background_hue = rng.uniform(0.0, 360.0);
    double bg_sat = rng.uniform(opt.bg_sat_lo, opt.bg_sat_hi);
    double bg_val = rng.uniform(0.86, 0.96);
    double fg_val = rng.uniform(0.7, 0.92);
    auto geom = render::random_shape(shape_class, size, rng);

    it.image = Tensor({3, size, size});
    it.mask = Tensor({size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            bool fg = render::inside_shape(geom, x + 0.5, y + 0.5);
            double tex = render::texture(x, y, it.style.texture_scale, size, fg ? 0.08 : 0.03);
            if (fg) {
                render::put_pixel(it.image, x, y, it.style.hue_deg, it.style.saturation,
                                  fg_val + tex);
                it.mask.at(y, x) = 1.0f;
            } else {
                render::put_pixel(it.image, x, y, it.style.background_hue, bg_sat, bg_val + tex);
            }
        }
    return it;
}

/// Generates shapes with a held-out hue interval. Training foreground hues
/// avoid [holdout_lo, holdout_hi); style-source and test items cover the
/// whole circle.
inline Dataset gen_shapes_dataset(int count, double holdout_lo, double holdout_hi, uint64_t seed,
                                  ShapesOptions opt = {}) {
    if (count < 4) throw param_error("gen_shapes_dataset: need at least 4 items");
    if (holdout_lo < 0 || holdout_hi > 360 || holdout_lo > holdout_hi)
        throw param_error("gen_shapes_dataset: holdout interval must sit inside [0,360)");
    if (holdout_hi - holdout_lo >= 360.0)
        throw param_error("gen_shapes_dataset: holdout interval covers the full circle");

    Dataset ds;
    ds.kind = DatasetKind::shapes;
    ds.seed = seed;
    ds.params = json{{"count", count},
                     {"size", opt.size},
                     {"holdout_lo", holdout_lo},
                     {"holdout_hi", holdout_hi}};
    Rng rng(seed);

    int n_train = static_cast<int>(count * opt.train_frac);
    int n_val = std::max(1, static_cast<int>(count * opt.val_frac));
    int n_style = std::max(1, static_cast<int>(count * opt.style_frac));
    int n_test = std::max(1, count - n_train - n_val - n_style);
    n_train = count - n_val - n_style - n_test;
    if (n_train < 1) throw param_error("gen_shapes_dataset: count too small for the splits");

    int idx = 0;
    auto emit = [&](Split split, int n, bool holdout_allowed) {
        for (int i = 0; i < n; ++i, ++idx) {
            double hue = holdout_allowed ? rng.uniform(0.0, 360.0)
                                         : sample_hue_excluding(holdout_lo, holdout_hi, rng);
            int cls = static_cast<int>(rng.uniform_int(4));
            Item it = render_shape_item(opt.size, hue, cls, opt, rng);
            it.split = split;
            char buf[16];
            std::snprintf(buf, sizeof buf, "s%05d", idx);
            it.id = buf;
            ds.items.push_back(std::move(it));
        }
    };
    emit(Split::annotated_train, n_train, false);
    emit(Split::annotated_val, n_val, false);
    emit(Split::style_source, n_style, true);
    emit(Split::test, n_test, true);
    ds.validate_splits();
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic slide cohort (WSI analog): one slide per patient, patient-constant
// style, tumor blobs inside an irregular tissue region on a white canvas.
// ---------------------------------------------------------------------------

struct CohortOptions {
    int slide_size = 512;
    int test_patients = 0;        // 0: max(2, patients/5)
    double annotated_hue_lo = 0.0;
    double annotated_hue_hi = 160.0;
    double style_hue_shift = 40.0;  // style/test hue distribution offset
    double tumor_sat_lo = 0.65, tumor_sat_hi = 0.9;
    double tissue_sat_lo = 0.08, tissue_sat_hi = 0.2;
    int tumor_blobs_lo = 4, tumor_blobs_hi = 8;
};

struct TissueGeom {
    double cx, cy, r0;
    double amp[3], phase[3];

    bool inside(double x, double y) const {
        double dx = x - cx, dy = y - cy;
        double r = std::sqrt(dx * dx + dy * dy);
        double th = std::atan2(dy, dx);
        double rmax = r0 * (1.0 + amp[0] * std::cos(2 * th + phase[0]) +
                            amp[1] * std::cos(3 * th + phase[1]) +
                            amp[2] * std::cos(5 * th + phase[2]));
        return r <= rmax;
    }
};

inline Item render_slide(const std::string& patient_id, int size, const StyleParams& style,
                         double tissue_sat, const CohortOptions& opt, Rng& rng) {
    Item it;
    it.patient_id = patient_id;
    it.id = patient_id;
    it.style = style;

    TissueGeom tg;
    tg.cx = size * (0.5 + rng.uniform(-0.05, 0.05));
    tg.cy = size * (0.5 + rng.uniform(-0.05, 0.05));
    tg.r0 = size * rng.uniform(0.36, 0.42);
    for (int i = 0; i < 3; ++i) {
        tg.amp[i] = rng.uniform(0.0, 0.12);
        tg.phase[i] = rng.uniform(0.0, 2 * M_PI);
    }

    int n_blobs = rng.uniform_int(opt.tumor_blobs_lo, opt.tumor_blobs_hi);
    std::vector<render::ShapeGeom> blobs;
    for (int b = 0; b < n_blobs; ++b) {
        render::ShapeGeom g;
        g.kind = 3;
        // keep blob centers inside tissue
        for (int tries = 0; tries < 100; ++tries) {
            g.cx = rng.uniform(0.1, 0.9) * size;
            g.cy = rng.uniform(0.1, 0.9) * size;
            if (tg.inside(g.cx, g.cy)) break;
        }
        g.r0 = size * rng.uniform(0.07, 0.14);
        for (int i = 0; i < 3; ++i) {
            g.amp[i] = rng.uniform(0.0, 0.15);
            g.phase[i] = rng.uniform(0.0, 2 * M_PI);
        }
        blobs.push_back(g);
    }

    double tissue_val = rng.uniform(0.72, 0.82);
    double tumor_val = rng.uniform(0.58, 0.76);

    it.image = Tensor({3, size, size});
    it.mask = Tensor({size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double px = x + 0.5, py = y + 0.5;
            if (!tg.inside(px, py)) {
                // slide background: near-white
                render::put_pixel(it.image, x, y, 0.0, 0.015, 0.975);
                continue;
            }
            bool tumor = false;
            for (const auto& b : blobs)
                if (render::inside_shape(b, px, py)) {
                    tumor = true;
                    break;
                }
            if (tumor) {
                double tex = render::texture(x, y, style.texture_scale * 6.0, size, 0.07);
                render::put_pixel(it.image, x, y, style.hue_deg, style.saturation,
                                  tumor_val + tex);
                it.mask.at(y, x) = 1.0f;
            } else {
                double tex = render::texture(x, y, style.texture_scale * 4.0, size, 0.04);
                render::put_pixel(it.image, x, y, style.background_hue, tissue_sat,
                                  tissue_val + tex);
            }
        }
    return it;
}

/// One slide per patient. The first `annotated` patients expose layouts
/// (split ~90/10 into train/val); the rest are style source. A disjoint test
/// cohort is drawn from the style-source hue distribution.
inline Dataset gen_slide_cohort(int patients, int slide_size, int annotated, uint64_t seed,
                                CohortOptions opt = {}) {
    if (patients < 1) throw param_error("gen_slide_cohort: need at least one patient");
    if (annotated > patients) throw param_error("gen_slide_cohort: annotated > patients");
    int n_test = opt.test_patients > 0 ? opt.test_patients : std::max(2, patients / 5);

    Dataset ds;
    ds.kind = DatasetKind::cohort;
    ds.seed = seed;
    ds.params = json{{"patients", patients},
                     {"slide_size", slide_size},
                     {"annotated", annotated},
                     {"test_patients", n_test},
                     {"annotated_hue_lo", opt.annotated_hue_lo},
                     {"annotated_hue_hi", opt.annotated_hue_hi},
                     {"style_hue_shift", opt.style_hue_shift}};
    Rng rng(seed);

    int n_val = annotated >= 2 ? std::max(1, annotated / 10) : 0;
    int total = patients + n_test;
    for (int p = 0; p < total; ++p) {
        bool is_test = p >= patients;
        bool is_annotated = !is_test && p < annotated;
        StyleParams style;
        double lo = opt.annotated_hue_lo, hi = opt.annotated_hue_hi;
        if (!is_annotated) {
            lo += opt.style_hue_shift;
            hi += opt.style_hue_shift;
        }
        style.hue_deg = std::fmod(rng.uniform(lo, hi) + 360.0, 360.0);
        style.saturation = rng.uniform(opt.tumor_sat_lo, opt.tumor_sat_hi);
        style.texture_scale = rng.uniform(0.8, 1.6);
        style.background_hue = rng.uniform(0.0, 360.0);  // independent of tumor hue
        double tissue_sat = rng.uniform(opt.tissue_sat_lo, opt.tissue_sat_hi);

        char buf[16];
        std::snprintf(buf, sizeof buf, "p%04d", p);
        Item it = render_slide(buf, slide_size, style, tissue_sat, opt, rng);
        if (is_test)
            it.split = Split::test;
        else if (is_annotated)
            it.split = (annotated >= 2 && p >= annotated - n_val) ? Split::annotated_val
                                                                  : Split::annotated_train;
        else
            it.split = Split::style_source;
        ds.items.push_back(std::move(it));
    }
    ds.validate_splits();
    return ds;
}

// ---------------------------------------------------------------------------
// Folder ingestion: user-supplied PNG images (optionally with masks)
// ---------------------------------------------------------------------------

inline Tensor fit_to_patch(const Tensor& img, int patch) {
    int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out({C, patch, patch});
    // center crop/pad; padding is black
    out.fill(-1.0f);
    int sy = std::max(0, (H - patch) / 2), dy = std::max(0, (patch - H) / 2);
    int sx = std::max(0, (W - patch) / 2), dx = std::max(0, (patch - W) / 2);
    int ch = std::min(H, patch), cw = std::min(W, patch);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x)
                out.at(c, dy + y, dx + x) = img.at(c, sy + y, sx + x);
    return out;
}

/// Ingests a folder of 8-bit PNG images; same-named masks (values {0,255})
/// under masks_dir put items into the annotated pools, others become style
/// source. Everything is emitted at patch_size (center crop, black padding).
inline Dataset ingest_folder(const std::string& images_dir,
                             const std::optional<std::string>& masks_dir, int patch_size) {
    if (!fs::is_directory(images_dir)) throw data_error("ingest_folder: not a directory: " + images_dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw data_error("ingest_folder: no .png files in " + images_dir);

    Dataset ds;
    ds.kind = DatasetKind::folder;
    ds.params = json{{"images_dir", images_dir},
                     {"masks_dir", masks_dir ? *masks_dir : ""},
                     {"patch_size", patch_size}};

    std::vector<size_t> annotated;
    for (const auto& f : files) {
        ImageU8 raw = read_png(f.string());
        Tensor img;
        if (raw.c == 3) {
            img = image_to_tensor(raw);
        } else {
            ImageU8 rgb(raw.w, raw.h, 3);
            for (int y = 0; y < raw.h; ++y)
                for (int x = 0; x < raw.w; ++x)
                    for (int ch = 0; ch < 3; ++ch) rgb.at(x, y, ch) = raw.at(x, y, 0);
            img = image_to_tensor(rgb);
        }
        Item it;
        it.id = f.stem().string();
        it.image = fit_to_patch(img, patch_size);

        bool has_mask = false;
        if (masks_dir) {
            fs::path mpath = fs::path(*masks_dir) / f.filename();
            if (fs::exists(mpath)) {
                ImageU8 mraw = read_png(mpath.string());
                if (mraw.w != raw.w || mraw.h != raw.h)
                    throw data_error("ingest_folder: mask/image size mismatch for " +
                                     f.filename().string());
                Tensor m({mraw.h, mraw.w});
                for (int y = 0; y < mraw.h; ++y)
                    for (int x = 0; x < mraw.w; ++x) {
                        uint8_t v = mraw.at(x, y, 0);
                        if (v != 0 && v != 255)
                            throw data_error("ingest_folder: mask values must be {0,255} in " +
                                             mpath.string());
                        m.at(y, x) = v == 255 ? 1.0f : 0.0f;  // white is foreground
                    }
                Tensor m3({1, mraw.h, mraw.w});
                std::copy(m.data(), m.data() + m.numel(), m3.data());
                Tensor fitted = fit_to_patch(m3, patch_size);
                it.mask = Tensor({patch_size, patch_size});
                for (size_t i = 0; i < it.mask.numel(); ++i)
                    it.mask[i] = fitted[i] > 0.0f ? 1.0f : 0.0f;
                has_mask = true;
            }
        }
        if (has_mask) {
            annotated.push_back(ds.items.size());
            it.split = Split::annotated_train;
        } else {
            it.split = Split::style_source;
        }
        ds.items.push_back(std::move(it));
    }
    // hold out ~10% of annotated items for validation
    if (annotated.size() >= 2) {
        size_t n_val = std::max<size_t>(1, annotated.size() / 10);
        for (size_t i = annotated.size() - n_val; i < annotated.size(); ++i)
            ds.items[annotated[i]].split = Split::annotated_val;
    }
    ds.validate_splits();
    return ds;
}

// ---------------------------------------------------------------------------
// Disk round trip: manifest.json + PNG rasters
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    bool any_mask = false;
    for (const auto& it : ds.items) any_mask |= it.mask.numel() > 0;
    if (any_mask) fs::create_directories(fs::path(dir) / "masks");

    json items = json::array();
    for (const auto& it : ds.items) {
        std::string img_rel = "images/" + it.id + ".png";
        write_png((fs::path(dir) / img_rel).string(), tensor_to_image(it.image));
        json ji{{"id", it.id},
                {"split", split_name(it.split)},
                {"image", img_rel},
                {"style", it.style.to_json()},
                {"shape_class", it.shape_class},
                {"patient_id", it.patient_id}};
        if (it.mask.numel() > 0) {
            std::string mask_rel = "masks/" + it.id + ".png";
            ImageU8 m(it.mask.dim(1), it.mask.dim(0), 1);
            for (int y = 0; y < m.h; ++y)
                for (int x = 0; x < m.w; ++x)
                    m.at(x, y, 0) = it.mask.at(y, x) > 0.5f ? 255 : 0;
            write_png((fs::path(dir) / mask_rel).string(), m);
            ji["mask"] = mask_rel;
        }
        items.push_back(std::move(ji));
    }
    json manifest{{"schema", kDatasetSchema},
                  {"kind", kind_name(ds.kind)},
                  {"seed", ds.seed},
                  {"params", ds.params},
                  {"items", items}};
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw io_error("save_dataset: cannot write manifest in " + dir);
    os << manifest.dump(1) << "\n";
}

inline Dataset load_dataset(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw data_error("load_dataset: missing manifest.json in " + dir);
    json manifest = json::parse(is, nullptr, true, true);
    if (manifest.value("schema", "") != kDatasetSchema)
        throw data_error("load_dataset: unsupported manifest schema in " + dir);

    Dataset ds;
    ds.kind = kind_from_name(manifest.at("kind").get<std::string>());
    ds.seed = manifest.at("seed").get<uint64_t>();
    ds.params = manifest.at("params");
    for (const auto& ji : manifest.at("items")) {
        Item it;
        it.id = ji.at("id").get<std::string>();
        it.split = split_from_name(ji.at("split").get<std::string>());
        it.style = StyleParams::from_json(ji.at("style"));
        it.shape_class = ji.value("shape_class", -1);
        it.patient_id = ji.value("patient_id", "");
        ImageU8 img = read_png((fs::path(dir) / ji.at("image").get<std::string>()).string());
        it.image = image_to_tensor(img);
        if (ji.contains("mask")) {
            ImageU8 m = read_png((fs::path(dir) / ji.at("mask").get<std::string>()).string());
            it.mask = Tensor({m.h, m.w});
            for (int y = 0; y < m.h; ++y)
                for (int x = 0; x < m.w; ++x) it.mask.at(y, x) = m.at(x, y, 0) >= 128 ? 1.0f : 0.0f;
        }
        ds.items.push_back(std::move(it));
    }
    ds.validate_splits();
    return ds;
}

}  // namespace stedm::data
