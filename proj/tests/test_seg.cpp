#include "doctest.h"

#include <cmath>

#include "stedm/data.hpp"
#include "stedm/seg.hpp"

using namespace stedm;
using namespace stedm::seg;

TEST_CASE("seg_forward shape and per-pixel normalization") {
    SegUNet net(5);
    Rng rng(1);
    Tensor img = Tensor::randn({3, 64, 64}, rng);
    Tensor p = seg_forward(net, img);
    REQUIRE(p.shape() == std::vector<int>({2, 64, 64}));
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            CHECK(p.at(0, y, x) + p.at(1, y, x) == doctest::Approx(1.0).epsilon(1e-5));

    Tensor p2 = seg_forward(net, img);
    CHECK(max_abs_diff(p, p2) == 0.0f);  // deterministic in eval mode

    Tensor bad = Tensor::randn({3, 20, 20}, rng);
    CHECK_THROWS_AS(seg_forward(net, bad), shape_error);
}

TEST_CASE("seg_loss on canonical cases") {
    const int H = 8, W = 8;
    Tensor gt({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) gt.at(y, x) = x < W / 2 ? 1.0f : 0.0f;

    // perfect one-hot prediction
    Tensor perfect({2, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            perfect.at(gt.at(y, x) > 0.5f ? 1 : 0, y, x) = 1.0f;
            // leave the off class at 0
        }
    CHECK(seg_loss(perfect, gt) <= 1e-3);

    // uniform 0.5 on a half-foreground mask
    Tensor uniform({2, H, W});
    uniform.fill(0.5f);
    // scalar oracle: CE = ln 2; dice = 1 - (2*0.5*32 + eps)/(0.5*64 + 32 + eps)
    double inter = 0.5 * 32, psum = 0.5 * 64, gsum = 32;
    double dice = 1.0 - (2 * inter + kDiceEps) / (psum + gsum + kDiceEps);
    double expected = 0.1 * std::log(2.0) + 0.9 * dice;
    CHECK(seg_loss(uniform, gt) == doctest::Approx(expected).epsilon(1e-6));

    // all-background prediction and mask: epsilon smoothing, no blowup
    Tensor bg_gt({H, W});
    Tensor bg_pred({2, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) bg_pred.at(0, y, x) = 1.0f;
    double l = seg_loss(bg_pred, bg_gt);
    CHECK(std::isfinite(l));
    CHECK(l <= 1e-3);
}

TEST_CASE("seg_loss equals scalar-loop oracle on random probabilities") {
    Rng rng(2);
    const int H = 16, W = 16;
    Tensor gt({H, W});
    for (size_t i = 0; i < gt.numel(); ++i) gt[i] = rng.bernoulli(0.4) ? 1.0f : 0.0f;
    Tensor probs({2, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double p = rng.uniform(0.01, 0.99);
            probs.at(0, y, x) = float(1 - p);
            probs.at(1, y, x) = float(p);
        }

    double ce = 0, inter = 0, psum = 0, gsum = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int cls = gt.at(y, x) > 0.5f ? 1 : 0;
            ce -= std::log(double(probs.at(cls, y, x)));
            inter += double(probs.at(1, y, x)) * (cls == 1 ? 1 : 0);
            psum += probs.at(1, y, x);
            gsum += cls;
        }
    ce /= H * W;
    double oracle =
        0.1 * ce + 0.9 * (1.0 - (2 * inter + kDiceEps) / (psum + gsum + kDiceEps));
    double got = seg_loss(probs, gt);
    CHECK(got >= 0.0);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("seg_loss_backward matches finite differences") {
    Rng rng(3);
    const int H = 6, W = 6;
    Tensor gt({H, W});
    for (size_t i = 0; i < gt.numel(); ++i) gt[i] = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    Tensor probs({2, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double p = rng.uniform(0.1, 0.9);
            probs.at(0, y, x) = float(1 - p);
            probs.at(1, y, x) = float(p);
        }
    Tensor d = seg_loss_backward(probs, gt);
    Rng pick(4);
    for (int trial = 0; trial < 10; ++trial) {
        size_t i = pick.uniform_int(probs.numel());
        float orig = probs[i];
        double h = 1e-4;
        probs[i] = float(orig + h);
        double lp = seg_loss(probs, gt);
        probs[i] = float(orig - h);
        double lm = seg_loss(probs, gt);
        probs[i] = orig;
        double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(fd - d[i]) < 1e-3 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("seg net gradients match finite differences through the loss") {
    SegUNet net(7, 3, 8);  // narrow net keeps the FD loop fast
    Rng rng(5);
    Tensor img = Tensor::randn({1, 3, 16, 16}, rng);
    Tensor gt({16, 16});
    for (size_t i = 0; i < gt.numel(); ++i) gt[i] = rng.bernoulli(0.5) ? 1.0f : 0.0f;

    auto loss = [&] {
        Tensor p = net.forward(img, nullptr);
        Tensor single({2, 16, 16});
        std::copy(p.data(), p.data() + p.numel(), single.data());
        return seg_loss(single, gt);
    };

    SegUNet::Cache cache;
    Tensor p = net.forward(img, &cache);
    Tensor single({2, 16, 16});
    std::copy(p.data(), p.data() + p.numel(), single.data());
    Tensor dsingle = seg_loss_backward(single, gt);
    Tensor dp({1, 2, 16, 16});
    std::copy(dsingle.data(), dsingle.data() + dsingle.numel(), dp.data());

    nn::ParamRegistry reg;
    net.register_params(reg);
    reg.zero_grads();
    net.backward(dp, cache);

    Rng pick(6);
    int checked = 0, guard = 0;
    while (checked < 10 && guard++ < 400) {
        auto& ref = reg.refs()[pick.uniform_int(reg.refs().size())];
        size_t i = pick.uniform_int(ref.w->numel());
        double g = (*ref.g)[i];
        if (std::abs(g) < 2e-3) continue;
        float orig = (*ref.w)[i];
        double h = 6e-3 * std::max(1.0, std::abs(double(orig)));
        (*ref.w)[i] = float(orig + h);
        double lp = loss();
        (*ref.w)[i] = float(orig - h);
        double lm = loss();
        (*ref.w)[i] = orig;
        double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(fd - g) / std::max(std::abs(fd), std::abs(g)) < 1e-3);
        ++checked;
    }
    CHECK(checked == 10);
}

TEST_CASE("capacity: memorizes 50 pristine examples to IoU >= 90%") {
    auto ds = data::gen_shapes_dataset(50, 200.0, 300.0, 77,
                                       [] { data::ShapesOptions o; o.size = 32; return o; }());
    SegUNet net(11);
    nn::ParamRegistry reg;
    net.register_params(reg);
    nn::Adam opt(3e-4);
    Rng rng(8);

    auto eval_iou = [&] {
        double acc = 0;
        for (const auto& it : ds.items) {
            Tensor p = seg_forward(net, it.image);
            int inter = 0, uni = 0;
            for (int y = 0; y < 32; ++y)
                for (int x = 0; x < 32; ++x) {
                    bool pred = p.at(1, y, x) > 0.5f;
                    bool gt = it.mask.at(y, x) > 0.5f;
                    inter += (pred && gt) ? 1 : 0;
                    uni += (pred || gt) ? 1 : 0;
                }
            acc += uni == 0 ? 1.0 : double(inter) / uni;
        }
        return acc / double(ds.items.size());
    };

    const int batch = 10;
    double iou = 0.0;
    for (int epoch = 0; epoch < 20; ++epoch) {
        for (int step = 0; step < 5; ++step) {
            Tensor x({batch, 3, 32, 32});
            std::vector<const Tensor*> gts;
            for (int b = 0; b < batch; ++b) {
                const auto& it = ds.items[rng.uniform_int(ds.items.size())];
                std::copy(it.image.data(), it.image.data() + it.image.numel(),
                          x.data() + size_t(b) * it.image.numel());
                gts.push_back(&it.mask);
            }
            SegUNet::Cache cache;
            Tensor probs = net.forward(x, &cache);
            Tensor dprobs(probs.shape());
            for (int b = 0; b < batch; ++b) {
                Tensor single({2, 32, 32});
                std::copy(probs.data() + size_t(b) * single.numel(),
                          probs.data() + size_t(b + 1) * single.numel(), single.data());
                Tensor d = seg_loss_backward(single, *gts[b]);
                for (size_t i = 0; i < d.numel(); ++i)
                    dprobs[size_t(b) * d.numel() + i] = d[i] / float(batch);
            }
            reg.zero_grads();
            net.backward(dprobs, cache);
            opt.step(reg);
        }
        iou = eval_iou();
        if (iou >= 0.9) break;
    }
    CHECK(iou >= 0.9);
}
