#include "doctest.h"

#include <cmath>

#include "stedm/style.hpp"

using namespace stedm;
using namespace stedm::style;

TEST_CASE("extract_style is deterministic with the right length") {
    StyleEncoderConfig cfg;
    cfg.style_dim = 128;
    Rng rng(1);
    StyleEncoder enc(cfg, rng);

    Tensor img = Tensor::randn({3, 64, 64}, rng);
    Tensor v1 = extract_style(img, enc);
    Tensor v2 = extract_style(img, enc);
    CHECK(v1.numel() == 128);
    CHECK(max_abs_diff(v1, v2) == 0.0f);

    Tensor other = Tensor::randn({3, 64, 64}, rng);
    CHECK(max_abs_diff(extract_style(other, enc), v1) > 0.0f);
}

TEST_CASE("aggregate: duplicates behave like n=1 and order does not matter") {
    Rng rng(2);
    Aggregator agg(16, rng);

    Tensor v = Tensor::randn({16}, rng);
    Tensor single = aggregate({v}, agg);
    Tensor triple = aggregate({v, v, v}, agg);
    CHECK(max_abs_diff(single, triple) < 1e-6f);

    std::vector<Tensor> vs;
    for (int i = 0; i < 5; ++i) vs.push_back(Tensor::randn({16}, rng));
    Tensor a = aggregate(vs, agg);
    std::vector<Tensor> permuted{vs[3], vs[0], vs[4], vs[2], vs[1]};
    Tensor b = aggregate(permuted, agg);
    CHECK(max_abs_diff(a, b) == 0.0f);  // bitwise: mean is order-independent here
}

TEST_CASE("aggregate matches mean-pool-then-mlp scalar-loop oracle") {
    Rng rng(3);
    const int d = 24, n = 10;
    Aggregator agg(d, rng);
    nn::ParamRegistry reg;
    agg.register_params(reg);
    // pull out the weights by name
    const Tensor *w1 = nullptr, *b1 = nullptr, *w2 = nullptr, *b2 = nullptr;
    for (auto& r : reg.refs()) {
        if (r.name == "l1.w") w1 = r.w;
        if (r.name == "l1.b") b1 = r.w;
        if (r.name == "l2.w") w2 = r.w;
        if (r.name == "l2.b") b2 = r.w;
    }
    REQUIRE(w1 != nullptr);

    std::vector<Tensor> vs;
    for (int i = 0; i < n; ++i) vs.push_back(Tensor::randn({d}, rng));

    // independent scalar loop: mean -> linear -> relu -> linear
    std::vector<double> mean(d, 0.0);
    for (const auto& v : vs)
        for (int j = 0; j < d; ++j) mean[size_t(j)] += v.at(j);
    for (auto& m : mean) m /= n;
    std::vector<double> h(d, 0.0);
    for (int o = 0; o < d; ++o) {
        double acc = b1->at(o);
        for (int j = 0; j < d; ++j) acc += double(w1->at(o, j)) * mean[size_t(j)];
        h[size_t(o)] = acc > 0 ? acc : 0.0;
    }
    std::vector<double> out(d, 0.0);
    for (int o = 0; o < d; ++o) {
        double acc = b2->at(o);
        for (int j = 0; j < d; ++j) acc += double(w2->at(o, j)) * h[size_t(j)];
        out[size_t(o)] = acc;
    }

    Tensor got = aggregate(vs, agg);
    for (int j = 0; j < d; ++j) CHECK(got.at(j) == doctest::Approx(out[size_t(j)]).epsilon(1e-6));
}

TEST_CASE("aggregate rejects mixed lengths") {
    Rng rng(4);
    Aggregator agg(8, rng);
    CHECK_THROWS_AS(aggregate({Tensor::randn({8}, rng), Tensor::randn({6}, rng)}, agg),
                    shape_error);
    CHECK_THROWS_AS(aggregate({}, agg), shape_error);
}

TEST_CASE("apply_style_drop extremes and statistics") {
    Rng rng(5);
    auto make_batch = [&](int n) {
        std::vector<StyleQuerySet> batch(static_cast<size_t>(n));
        for (auto& q : batch) q.images.push_back(Tensor::randn({3, 4, 4}, rng));
        return batch;
    };

    for (auto& q : apply_style_drop(make_batch(50), 0.0, 1)) CHECK(!q.dropped);
    for (auto& q : apply_style_drop(make_batch(50), 1.0, 1)) CHECK(q.dropped);

    // p=0.25 over 10,000 elements: binomial 3-SE band
    auto dropped = apply_style_drop(make_batch(10000), 0.25, 7);
    int count = 0;
    for (auto& q : dropped) count += q.dropped ? 1 : 0;
    double frac = count / 10000.0;
    double se = std::sqrt(0.25 * 0.75 / 10000.0);
    CHECK(std::abs(frac - 0.25) < 3 * se);

    // deterministic given seed
    auto again = apply_style_drop(make_batch(10000), 0.25, 7);
    for (size_t i = 0; i < again.size(); ++i) CHECK(again[i].dropped == dropped[i].dropped);

    CHECK_THROWS_AS(apply_style_drop(make_batch(1), 1.5, 0), param_error);
}

TEST_CASE("style encoder gradient check") {
    StyleEncoderConfig cfg;
    cfg.style_dim = 6;
    cfg.width = 4;
    cfg.stages = 2;
    Rng rng(6);
    StyleEncoder enc(cfg, rng);

    Tensor imgs = Tensor::randn({2, 3, 8, 8}, rng);
    Tensor proj = Tensor::randn({2, 6}, rng);

    auto loss = [&] {
        Tensor v = enc.forward(imgs, nullptr);
        double s = 0;
        for (size_t i = 0; i < v.numel(); ++i) s += double(v[i]) * double(proj[i]);
        return s;
    };

    StyleEncoder::Cache cache;
    enc.forward(imgs, &cache);
    nn::ParamRegistry reg;
    enc.register_params(reg);
    reg.zero_grads();
    enc.backward(proj, cache);

    Rng pick(7);
    int checked = 0, guard = 0;
    while (checked < 8 && guard++ < 200) {
        auto& ref = reg.refs()[pick.uniform_int(reg.refs().size())];
        size_t i = pick.uniform_int(ref.w->numel());
        double g = (*ref.g)[i];
        if (std::abs(g) < 1e-3) continue;
        float orig = (*ref.w)[i];
        double h = 1e-2 * std::max(0.5, std::abs(double(orig)));
        (*ref.w)[i] = float(orig + h);
        double lp = loss();
        (*ref.w)[i] = float(orig - h);
        double lm = loss();
        (*ref.w)[i] = orig;
        double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-3}) < 2e-2);
        ++checked;
    }
    CHECK(checked == 8);
}

TEST_CASE("aggregator gradient distributes over inputs") {
    Rng rng(8);
    const int d = 10;
    Aggregator agg(d, rng);
    Tensor vs = Tensor::randn({4, d}, rng);
    Tensor proj = Tensor::randn({1, d}, rng);

    auto loss = [&] {
        Tensor y = agg.forward(vs, nullptr);
        double s = 0;
        for (size_t i = 0; i < y.numel(); ++i) s += double(y[i]) * double(proj[i]);
        return s;
    };

    Aggregator::Cache cache;
    agg.forward(vs, &cache);
    nn::ParamRegistry reg;
    agg.register_params(reg);
    reg.zero_grads();
    Tensor dvs = agg.backward(proj, cache);

    Rng pick(9);
    for (int p = 0; p < 6; ++p) {
        size_t i = pick.uniform_int(vs.numel());
        float orig = vs[i];
        double h = 1e-2;
        vs[i] = float(orig + h);
        double lp = loss();
        vs[i] = float(orig - h);
        double lm = loss();
        vs[i] = orig;
        double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(fd - dvs[i]) < 2e-2 * std::max(1.0, std::abs(fd)));
    }
}
