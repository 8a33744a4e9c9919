#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "stedm/hash.hpp"
#include "stedm/image.hpp"
#include "stedm/rng.hpp"
#include "stedm/serialize.hpp"
#include "stedm/tensor.hpp"

using namespace stedm;

namespace {
std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("tensor indexing and shape checks") {
    Tensor t({2, 3, 4});
    CHECK(t.numel() == 24);
    t.at(1, 2, 3) = 5.0f;
    CHECK(t[23] == 5.0f);
    Tensor u({2, 3});
    CHECK_THROWS_AS(t.require_same_shape(u, "test"), shape_error);
}

TEST_CASE("rng determinism and distribution sanity") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng r(7);
    double sum = 0, sum2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double g = r.gaussian();
        sum += g;
        sum2 += g * g;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(double(n)));
    CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / double(n)));

    // uniform_int covers the range
    Rng u(3);
    int seen[5] = {0};
    for (int i = 0; i < 1000; ++i) seen[u.uniform_int(0, 4)]++;
    for (int k = 0; k < 5; ++k) CHECK(seen[k] > 100);
}

TEST_CASE("sha1 known vectors") {
    CHECK(Sha1::of("") == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
    CHECK(Sha1::of("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
    CHECK(Sha1::of("The quick brown fox jumps over the lazy dog") ==
          "2fd4e1c67a2d28fced849ee1bb76e7391b93eb12");
}

TEST_CASE("checkpoint round trip") {
    Tensor a({3, 4});
    Rng r(1);
    for (size_t i = 0; i < a.numel(); ++i) a[i] = float(r.gaussian());
    Tensor b({7});
    for (size_t i = 0; i < b.numel(); ++i) b[i] = float(i);

    auto path = tmp_path("stedm_test_ckpt.bin");
    save_arrays(path, {{"layer.w", &a}, {"layer.b", &b}});
    auto loaded = load_arrays(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded.at("layer.w").shape() == a.shape());
    CHECK(max_abs_diff(loaded.at("layer.w"), a) == 0.0f);
    CHECK(max_abs_diff(loaded.at("layer.b"), b) == 0.0f);
    std::filesystem::remove(path);
}

TEST_CASE("png round trip rgb and gray") {
    Rng r(5);
    ImageU8 img(13, 9, 3);
    for (auto& p : img.pix) p = uint8_t(r.uniform_int(0, 255));
    auto path = tmp_path("stedm_test_rgb.png");
    write_png(path, img);
    ImageU8 back = read_png(path);
    REQUIRE(back.w == img.w);
    REQUIRE(back.h == img.h);
    REQUIRE(back.c == 3);
    CHECK(back.pix == img.pix);
    std::filesystem::remove(path);

    ImageU8 gray(5, 7, 1);
    for (auto& p : gray.pix) p = uint8_t(r.uniform_int(0, 255));
    auto gpath = tmp_path("stedm_test_gray.png");
    write_png(gpath, gray);
    ImageU8 gback = read_png(gpath);
    REQUIRE(gback.c == 1);
    CHECK(gback.pix == gray.pix);
    std::filesystem::remove(gpath);
}

TEST_CASE("image/tensor conversion stays in range") {
    Rng r(9);
    ImageU8 img(8, 8, 3);
    for (auto& p : img.pix) p = uint8_t(r.uniform_int(0, 255));
    Tensor t = image_to_tensor(img);
    for (size_t i = 0; i < t.numel(); ++i) {
        CHECK(t[i] >= -1.0f);
        CHECK(t[i] <= 1.0f);
    }
    ImageU8 back = tensor_to_image(t);
    CHECK(back.pix == img.pix);
}

TEST_CASE("hsv round trip and hue distance") {
    for (double h : {0.0, 45.0, 120.0, 250.0, 359.0}) {
        double r, g, b, h2, s2, v2;
        hsv_to_rgb(h, 0.8, 0.9, r, g, b);
        rgb_to_hsv(r, g, b, h2, s2, v2);
        CHECK(hue_distance(h, h2) < 0.5);
        CHECK(s2 == doctest::Approx(0.8).epsilon(0.01));
        CHECK(v2 == doctest::Approx(0.9).epsilon(0.01));
    }
    CHECK(hue_distance(350.0, 10.0) == doctest::Approx(20.0));
    CHECK(circular_mean_hue({350.0, 10.0}) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("affine warp preserves palette and is seed-deterministic") {
    Rng r(11);
    Tensor img({3, 16, 16});
    // two-tone image
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            bool fg = (x + y) % 3 == 0;
            img.at(0, y, x) = fg ? 0.5f : -0.25f;
            img.at(1, y, x) = fg ? -0.5f : 0.75f;
            img.at(2, y, x) = fg ? 0.0f : 0.25f;
        }
    Rng r1(11), r2(11);
    Tensor w1 = affine_warp(img, random_affine(r1));
    Tensor w2 = affine_warp(img, random_affine(r2));
    CHECK(max_abs_diff(w1, w2) == 0.0f);
    // nearest-neighbor sampling: every output pixel is a source pixel
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            float v = w1.at(0, y, x);
            CHECK((v == 0.5f || v == -0.25f));
        }
}

TEST_CASE("reflect index stays in bounds") {
    for (int n : {1, 2, 5}) {
        for (int i = -20; i <= 20; ++i) {
            int j = reflect_index(i, n);
            CHECK(j >= 0);
            CHECK(j < n);
        }
    }
}
