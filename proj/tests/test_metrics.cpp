#include "doctest.h"

#include <cmath>

#include "stedm/data.hpp"
#include "stedm/metrics.hpp"

using namespace stedm;
using namespace stedm::metrics;

TEST_CASE("fid is zero on identical sets and symmetric") {
    Rng rng(1);
    std::vector<Tensor> a;
    for (int i = 0; i < 40; ++i) a.push_back(Tensor::randn({6}, rng));
    CHECK(std::abs(fid(a, a)) < 1e-6);

    std::vector<Tensor> b;
    for (int i = 0; i < 40; ++i) b.push_back(Tensor::randn({6}, rng));
    double ab = fid(a, b);
    double ba = fid(b, a);
    CHECK(ab >= -1e-6);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-6));
}

TEST_CASE("fid reproduces the closed-form univariate case") {
    // sample stats match the population: mean 0/1, var 1 with /(n-1)
    std::vector<Tensor> real, gen;
    for (float v : {-1.0f, 0.0f, 1.0f}) {
        Tensor t({1});
        t[0] = v;
        real.push_back(t);
    }
    for (float v : {0.0f, 1.0f, 2.0f}) {
        Tensor t({1});
        t[0] = v;
        gen.push_back(t);
    }
    // (mu diff)^2 + (1 + 1 - 2*sqrt(1)) = 1
    CHECK(fid(real, gen) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("fid matches the diagonal-Gaussian closed form within 5%") {
    const int f = 4, n = 10000;
    double s1[f] = {1.0, 2.0, 0.5, 1.5};
    double s2[f] = {2.0, 1.0, 1.0, 0.5};
    double mu2[f] = {0.5, -0.3, 0.2, 0.0};
    Rng rng(7);
    std::vector<Tensor> real, gen;
    for (int i = 0; i < n; ++i) {
        Tensor a({f}), b({f});
        for (int j = 0; j < f; ++j) {
            a.at(j) = float(rng.gaussian() * std::sqrt(s1[j]));
            b.at(j) = float(mu2[j] + rng.gaussian() * std::sqrt(s2[j]));
        }
        real.push_back(a);
        gen.push_back(b);
    }
    // scalar closed form for diagonal covariances
    double expected = 0;
    for (int j = 0; j < f; ++j)
        expected += mu2[j] * mu2[j] + s1[j] + s2[j] - 2.0 * std::sqrt(s1[j] * s2[j]);
    double got = fid(real, gen);
    CHECK(std::abs(got - expected) / expected < 0.05);
}

TEST_CASE("fid input validation and regularization") {
    Rng rng(2);
    std::vector<Tensor> one{Tensor::randn({4}, rng)};
    std::vector<Tensor> two{Tensor::randn({4}, rng), Tensor::randn({4}, rng)};
    CHECK_THROWS_AS(fid(one, two), data_error);
    // fewer samples than f+1 exercises the +1e-6 I regularizer
    std::vector<Tensor> small_a, small_b;
    for (int i = 0; i < 3; ++i) {
        small_a.push_back(Tensor::randn({8}, rng));
        small_b.push_back(Tensor::randn({8}, rng));
    }
    CHECK(std::isfinite(fid(small_a, small_b)));
}

TEST_CASE("inception score canonical values") {
    const int K = 5;
    // uniform conditionals: KL = 0 -> IS = 1
    std::vector<Tensor> uniform;
    for (int i = 0; i < 50; ++i) {
        Tensor p({K});
        p.fill(1.0f / K);
        uniform.push_back(p);
    }
    CHECK(inception_score(uniform, 1) == doctest::Approx(1.0).epsilon(1e-6));

    // one-hot uniformly covering K classes -> IS = K
    std::vector<Tensor> onehot;
    for (int i = 0; i < 50; ++i) {
        Tensor p({K});
        p.at(i % K) = 1.0f;
        onehot.push_back(p);
    }
    CHECK(inception_score(onehot, 1) == doctest::Approx(double(K)).epsilon(1e-6));

    // single sample: conditional equals marginal -> 1
    std::vector<Tensor> single;
    Tensor p({K});
    p.at(2) = 0.6f;
    p.at(0) = 0.4f;
    single.push_back(p);
    CHECK(inception_score(single, 1) == doctest::Approx(1.0).epsilon(1e-6));

    // invalid distributions rejected
    Tensor bad({K});
    bad.fill(0.3f);
    CHECK_THROWS_AS(inception_score({bad}, 1), data_error);

    // IS stays within [1, K]
    Rng rng(3);
    std::vector<Tensor> rand_probs;
    for (int i = 0; i < 64; ++i) {
        Tensor q({K});
        double s = 0;
        for (int k = 0; k < K; ++k) {
            q.at(k) = float(rng.uniform(0.01, 1.0));
            s += q.at(k);
        }
        for (int k = 0; k < K; ++k) q.at(k) = float(q.at(k) / s);
        rand_probs.push_back(q);
    }
    double is = inception_score(rand_probs, 4);
    CHECK(is >= 1.0 - 1e-9);
    CHECK(is <= double(K) + 1e-9);
}

TEST_CASE("iou_stats canonical and oracle cases") {
    Rng rng(4);
    std::vector<Tensor> preds, gts;
    for (int i = 0; i < 6; ++i) {
        Tensor m({8, 8});
        for (size_t j = 0; j < m.numel(); ++j) m[j] = rng.bernoulli(0.5) ? 1.0f : 0.0f;
        preds.push_back(m);
        gts.push_back(m);
    }
    auto same = iou_stats(preds, gts);
    CHECK(same.mean_percent == doctest::Approx(100.0));
    CHECK(same.variance == doctest::Approx(0.0));

    // complement prediction on a half-full mask: IoU 0
    Tensor gt({4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 2; ++x) gt.at(y, x) = 1.0f;
    Tensor inv({4, 4});
    for (size_t j = 0; j < inv.numel(); ++j) inv[j] = gt[j] > 0.5f ? 0.0f : 1.0f;
    auto zero = iou_stats({inv}, {gt});
    CHECK(zero.mean_percent == doctest::Approx(0.0));

    // both empty -> 1 by convention
    Tensor e({4, 4});
    auto empty = iou_stats({e}, {e});
    CHECK(empty.mean_percent == doctest::Approx(100.0));

    // counting oracle on random pairs, exact match
    std::vector<Tensor> p2, g2;
    for (int i = 0; i < 10; ++i) {
        Tensor a({16, 16}), b({16, 16});
        for (size_t j = 0; j < a.numel(); ++j) {
            a[j] = rng.bernoulli(0.3) ? 1.0f : 0.0f;
            b[j] = rng.bernoulli(0.4) ? 1.0f : 0.0f;
        }
        p2.push_back(a);
        g2.push_back(b);
    }
    auto stats = iou_stats(p2, g2);
    for (size_t i = 0; i < p2.size(); ++i) {
        long inter = 0, uni = 0;
        for (size_t j = 0; j < p2[i].numel(); ++j) {
            inter += (p2[i][j] > 0.5f && g2[i][j] > 0.5f) ? 1 : 0;
            uni += (p2[i][j] > 0.5f || g2[i][j] > 0.5f) ? 1 : 0;
        }
        double oracle = uni == 0 ? 1.0 : double(inter) / uni;
        CHECK(std::abs(stats.per_sample[i] - oracle) < 1e-9);
    }

    Tensor wrong({3, 3});
    CHECK_THROWS_AS(iou_stats({wrong}, {gt}), shape_error);
}

TEST_CASE("style fidelity on pristine renders and degenerate tolerances") {
    auto ds = data::gen_shapes_dataset(60, 200.0, 300.0, 5);
    std::vector<Tensor> images, masks;
    std::vector<double> hues;
    for (const auto& it : ds.items) {
        images.push_back(it.image);
        masks.push_back(it.mask);
        hues.push_back(it.style.hue_deg);
    }
    auto ideal = style_fidelity(images, hues, masks, 30.0);
    CHECK(ideal.fraction == doctest::Approx(1.0));
    CHECK(ideal.skipped == 0);

    // zero tolerance on continuous hues: essentially never hits
    auto strict = style_fidelity(images, hues, masks, 0.0);
    CHECK(strict.fraction < 0.05);

    // empty-foreground masks are skipped and tallied
    std::vector<Tensor> empty_masks;
    for (const auto& m : masks) empty_masks.push_back(Tensor(m.shape()));
    auto skipped = style_fidelity(images, hues, empty_masks, 30.0);
    CHECK(skipped.evaluated == 0);
    CHECK(skipped.skipped == static_cast<int>(images.size()));
}

TEST_CASE("layout adherence: pristine, noise, and shuffled controls") {
    auto ds = data::gen_shapes_dataset(40, 200.0, 300.0, 9);
    std::vector<Tensor> images, masks;
    for (const auto& it : ds.items) {
        images.push_back(it.image);
        masks.push_back(it.mask);
    }
    CHECK(layout_adherence(images, masks) >= 0.99);

    Rng rng(6);
    std::vector<Tensor> noise;
    for (size_t i = 0; i < images.size(); ++i) noise.push_back(Tensor::randn({3, 32, 32}, rng));
    CHECK(layout_adherence(noise, masks) < 0.3);

    // shuffled pairing strictly lower than matched pairing
    std::vector<Tensor> shuffled(masks.rbegin(), masks.rend());
    CHECK(layout_adherence(images, shuffled) < layout_adherence(images, masks));
}

TEST_CASE("feature model trains to usable class probabilities") {
    auto ds = data::gen_shapes_dataset(160, 200.0, 300.0, 21);
    std::vector<const Tensor*> images;
    std::vector<int> labels;
    for (const auto& it : ds.items) {
        images.push_back(&it.image);
        labels.push_back(it.shape_class);
    }
    FeatureNet net = train_feature_model(images, labels, 4, 30, 3);

    // probabilities sum to 1
    Tensor batch({4, 3, 32, 32});
    for (int b = 0; b < 4; ++b)
        std::copy(images[size_t(b)]->data(), images[size_t(b)]->data() + images[size_t(b)]->numel(),
                  batch.data() + size_t(b) * images[size_t(b)]->numel());
    Tensor probs = net.class_probs(batch, nullptr);
    for (int b = 0; b < 4; ++b) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += probs.at(b, k);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }

    // accuracy well above chance after training
    int correct = 0, total = 0;
    for (size_t i = 0; i < images.size(); ++i) {
        Tensor one({1, 3, 32, 32});
        std::copy(images[i]->data(), images[i]->data() + images[i]->numel(), one.data());
        Tensor p = net.class_probs(one, nullptr);
        int arg = 0;
        for (int k = 1; k < 4; ++k)
            if (p.at(0, k) > p.at(0, arg)) arg = k;
        correct += arg == labels[i] ? 1 : 0;
        ++total;
    }
    CHECK(double(correct) / total > 0.6);

    // features have the documented dimension
    Tensor f = net.features(batch, nullptr);
    CHECK(f.shape() == std::vector<int>({4, FeatureNet::kFeatureDim}));
}
