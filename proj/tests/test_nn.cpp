#include "doctest.h"

#include <cmath>
#include <functional>

#include "stedm/nn.hpp"
#include "stedm/rng.hpp"

using namespace stedm;
using namespace stedm::nn;

namespace {

// Scalar objective for gradient checks: dot(forward(x), proj).
Tensor random_like(const Tensor& t, Rng& rng) {
    Tensor r(t.shape());
    for (size_t i = 0; i < r.numel(); ++i) r[i] = float(rng.gaussian());
    return r;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (size_t i = 0; i < a.numel(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

// Central-difference check of dL/dtheta for a handful of entries.
void check_grad(Tensor& theta, const Tensor& analytic,
                const std::function<double()>& loss, Rng& rng, int probes = 6,
                double tol = 2e-2) {
    for (int p = 0; p < probes; ++p) {
        size_t i = rng.uniform_int(theta.numel());
        float orig = theta[i];
        double h = 1e-2 * std::max(0.1, std::abs(double(orig)));
        theta[i] = float(orig + h);
        double lp = loss();
        theta[i] = float(orig - h);
        double lm = loss();
        theta[i] = orig;
        double fd = (lp - lm) / (2 * h);
        double an = analytic[i];
        double denom = std::max({std::abs(fd), std::abs(an), 1e-3});
        CHECK(std::abs(fd - an) / denom < tol);
    }
}

}  // namespace

TEST_CASE("linear forward/backward matches finite differences") {
    Rng rng(1);
    Linear lin(5, 3);
    lin.init(rng);
    Tensor x({4, 5});
    x = random_like(x, rng);
    Tensor proj = random_like(Tensor({4, 3}), rng);

    auto loss = [&] {
        return dot(lin.forward(x, nullptr), proj);
    };

    Linear::Cache cache;
    Tensor y = lin.forward(x, &cache);
    lin.gw.fill(0);
    lin.gb.fill(0);
    Tensor dx = lin.backward(proj, cache);

    check_grad(lin.w, lin.gw, loss, rng);
    check_grad(lin.b, lin.gb, loss, rng);
    check_grad(x, dx, loss, rng);
}

TEST_CASE("conv2d forward matches direct convolution") {
    Rng rng(2);
    Conv2d conv(2, 3, 3);
    conv.init(rng);
    Tensor x({1, 2, 5, 6});
    x = random_like(x, rng);
    Tensor y = conv.forward(x, nullptr);
    REQUIRE(y.shape() == std::vector<int>({1, 3, 5, 6}));

    // direct nested-loop convolution oracle
    for (int o = 0; o < 3; ++o)
        for (int yy = 0; yy < 5; ++yy)
            for (int xx = 0; xx < 6; ++xx) {
                double acc = conv.b.at(o);
                for (int c = 0; c < 2; ++c)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            int sy = yy + ky - 1, sx = xx + kx - 1;
                            if (sy < 0 || sy >= 5 || sx < 0 || sx >= 6) continue;
                            acc += double(conv.w.at(o, (c * 3 + ky) * 3 + kx)) *
                                   double(x.at(0, c, sy, sx));
                        }
                CHECK(y.at(0, o, yy, xx) == doctest::Approx(acc).epsilon(1e-4));
            }
}

TEST_CASE("conv2d backward matches finite differences") {
    Rng rng(3);
    Conv2d conv(2, 2, 3);
    conv.init(rng);
    Tensor x({2, 2, 4, 4});
    x = random_like(x, rng);
    Tensor proj = random_like(Tensor({2, 2, 4, 4}), rng);

    auto loss = [&] { return dot(conv.forward(x, nullptr), proj); };

    Conv2d::Cache cache;
    conv.forward(x, &cache);
    conv.gw.fill(0);
    conv.gb.fill(0);
    Tensor dx = conv.backward(proj, cache);

    check_grad(conv.w, conv.gw, loss, rng, 8);
    check_grad(conv.b, conv.gb, loss, rng, 2);
    check_grad(x, dx, loss, rng, 8);
}

TEST_CASE("groupnorm normalizes and backward matches finite differences") {
    Rng rng(4);
    GroupNorm gn(4, 2);
    Tensor x({2, 4, 3, 3});
    x = random_like(x, rng);
    x.scale_(2.5f);

    GroupNorm::Cache cache;
    Tensor y = gn.forward(x, &cache);
    // per-group mean 0 / var 1
    for (int n = 0; n < 2; ++n)
        for (int g = 0; g < 2; ++g) {
            double mean = 0, var = 0;
            for (int c = 0; c < 2; ++c)
                for (int i = 0; i < 9; ++i) mean += y.at(n, g * 2 + c, i / 3, i % 3);
            mean /= 18;
            for (int c = 0; c < 2; ++c)
                for (int i = 0; i < 9; ++i) {
                    double d = y.at(n, g * 2 + c, i / 3, i % 3) - mean;
                    var += d * d;
                }
            var /= 18;
            CHECK(std::abs(mean) < 1e-5);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        }

    Tensor proj = random_like(y, rng);
    auto loss = [&] { return dot(gn.forward(x, nullptr), proj); };
    gn.ggamma.fill(0);
    gn.gbeta.fill(0);
    Tensor dx = gn.backward(proj, cache);
    check_grad(gn.gamma, gn.ggamma, loss, rng, 4);
    check_grad(gn.beta, gn.gbeta, loss, rng, 2);
    check_grad(x, dx, loss, rng, 8);
}

TEST_CASE("silu and relu backward match finite differences") {
    Rng rng(5);
    Tensor x({3, 7});
    x = random_like(x, rng);
    Tensor proj = random_like(x, rng);

    SiLU silu;
    SiLU::Cache sc;
    silu.forward(x, &sc);
    Tensor dsx = silu.backward(proj, sc);
    auto sloss = [&] { return dot(silu.forward(x, nullptr), proj); };
    check_grad(x, dsx, sloss, rng, 6);

    ReLU relu;
    ReLU::Cache rc;
    relu.forward(x, &rc);
    Tensor drx = relu.backward(proj, rc);
    for (size_t i = 0; i < x.numel(); ++i)
        CHECK(drx[i] == (x[i] > 0 ? proj[i] : 0.0f));
}

TEST_CASE("pooling and upsampling adjoints") {
    Rng rng(6);
    Tensor x({1, 2, 4, 4});
    x = random_like(x, rng);

    Tensor y = avgpool2(x);
    REQUIRE(y.shape() == std::vector<int>({1, 2, 2, 2}));
    CHECK(y.at(0, 0, 0, 0) ==
          doctest::Approx(0.25f * (x.at(0, 0, 0, 0) + x.at(0, 0, 0, 1) + x.at(0, 0, 1, 0) +
                                   x.at(0, 0, 1, 1))));

    // adjoint identity: <pool(x), u> == <x, pool^T(u)>
    Tensor u = random_like(y, rng);
    Tensor xt = avgpool2_backward(u, 4, 4);
    CHECK(dot(y, u) == doctest::Approx(dot(x, xt)).epsilon(1e-4));

    Tensor up = upsample2(y);
    REQUIRE(up.shape() == x.shape());
    Tensor v = random_like(up, rng);
    Tensor yt = upsample2_backward(v);
    CHECK(dot(up, v) == doctest::Approx(dot(y, yt)).epsilon(1e-4));

    Tensor g = global_avgpool(x);
    REQUIRE(g.shape() == std::vector<int>({1, 2}));
    Tensor w = random_like(g, rng);
    Tensor gt = global_avgpool_backward(w, 4, 4);
    CHECK(dot(g, w) == doctest::Approx(dot(x, gt)).epsilon(1e-4));
}

TEST_CASE("concat/split channels round trip") {
    Rng rng(7);
    Tensor a = random_like(Tensor({2, 3, 2, 2}), rng);
    Tensor b = random_like(Tensor({2, 1, 2, 2}), rng);
    Tensor y = concat_channels(a, b);
    REQUIRE(y.shape() == std::vector<int>({2, 4, 2, 2}));
    Tensor da({2, 3, 2, 2}), db({2, 1, 2, 2});
    split_channels(y, da, db);
    CHECK(max_abs_diff(da, a) == 0.0f);
    CHECK(max_abs_diff(db, b) == 0.0f);
}

TEST_CASE("adam reduces a quadratic") {
    Tensor w({4});
    Tensor g({4});
    for (int i = 0; i < 4; ++i) w.at(i) = 2.0f + i;
    ParamRegistry reg;
    reg.add("w", &w, &g);
    Adam opt(0.1);
    for (int it = 0; it < 300; ++it) {
        for (int i = 0; i < 4; ++i) g.at(i) = w.at(i);  // d/dw (w^2/2)
        opt.step(reg);
        reg.zero_grads();
    }
    for (int i = 0; i < 4; ++i) CHECK(std::abs(w.at(i)) < 0.05f);
}

TEST_CASE("sinusoidal embedding is bounded and distinct") {
    Tensor e1 = sinusoidal_embedding(1, 32);
    Tensor e2 = sinusoidal_embedding(900, 32);
    CHECK(e1.numel() == 32);
    for (size_t i = 0; i < e1.numel(); ++i) {
        CHECK(std::abs(e1[i]) <= 1.0f);
    }
    CHECK(max_abs_diff(e1, e2) > 0.1f);
}
