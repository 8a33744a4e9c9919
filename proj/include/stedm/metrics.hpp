#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "stedm/errors.hpp"
#include "stedm/image.hpp"
#include "stedm/nn.hpp"
#include "stedm/rng.hpp"
#include "stedm/tensor.hpp"

namespace stedm::metrics {

// ---------------------------------------------------------------------------
// Frechet distance between feature sets
// ---------------------------------------------------------------------------

namespace detail {

using EMatD = Eigen::MatrixXd;
using EVecD = Eigen::VectorXd;

inline EMatD sqrtm_psd(const EMatD& m) {
    Eigen::SelfAdjointEigenSolver<EMatD> es(m);
    EVecD vals = es.eigenvalues();
    for (int i = 0; i < vals.size(); ++i) vals[i] = vals[i] > 0 ? std::sqrt(vals[i]) : 0.0;
    return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

inline void moments(const std::vector<Tensor>& feats, EVecD& mu, EMatD& sigma) {
    int n = static_cast<int>(feats.size());
    int f = feats.front().dim(0);
    mu = EVecD::Zero(f);
    for (const auto& v : feats)
        for (int i = 0; i < f; ++i) mu[i] += v.at(i);
    mu /= double(n);
    sigma = EMatD::Zero(f, f);
    for (const auto& v : feats) {
        EVecD d(f);
        for (int i = 0; i < f; ++i) d[i] = double(v.at(i)) - mu[i];
        sigma.noalias() += d * d.transpose();
    }
    sigma /= double(n - 1);
    if (n < f + 1) sigma += 1e-6 * EMatD::Identity(f, f);  // rank-deficient sample
}

}  // namespace detail

/// Frechet distance ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).
/// The cross term uses Tr((A S2 A)^{1/2}) with A = S1^{1/2}, eigenvalues
/// clipped at zero.
inline double fid(const std::vector<Tensor>& real_feats, const std::vector<Tensor>& gen_feats) {
    if (real_feats.size() < 2 || gen_feats.size() < 2)
        throw data_error("fid: need at least two feature vectors per set");
    int f = real_feats.front().dim(0);
    for (const auto& v : real_feats)
        if (v.ndim() != 1 || v.dim(0) != f) throw shape_error("fid: inconsistent feature dims");
    for (const auto& v : gen_feats)
        if (v.ndim() != 1 || v.dim(0) != f) throw shape_error("fid: inconsistent feature dims");

    detail::EVecD mu1, mu2;
    detail::EMatD s1, s2;
    detail::moments(real_feats, mu1, s1);
    detail::moments(gen_feats, mu2, s2);

    detail::EMatD a = detail::sqrtm_psd(s1);
    detail::EMatD inner = a * s2 * a;
    // symmetrize against roundoff before the second eigendecomposition
    inner = 0.5 * (inner + inner.transpose().eval());
    Eigen::SelfAdjointEigenSolver<detail::EMatD> es(inner);
    double tr_sqrt = 0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        double v = es.eigenvalues()[i];
        tr_sqrt += v > 0 ? std::sqrt(v) : 0.0;
    }
    return (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
}

// ---------------------------------------------------------------------------
// Inception-style score over a probability list
// ---------------------------------------------------------------------------

inline double inception_score(const std::vector<Tensor>& probs, int splits = 1) {
    if (probs.empty()) throw data_error("inception_score: empty input");
    if (splits < 1 || splits > static_cast<int>(probs.size()))
        throw param_error("inception_score: bad split count");
    int K = probs.front().dim(0);
    for (const auto& p : probs) {
        if (p.ndim() != 1 || p.dim(0) != K) throw data_error("inception_score: inconsistent dims");
        double s = 0;
        for (int k = 0; k < K; ++k) {
            if (p.at(k) < -1e-7) throw data_error("inception_score: negative probability");
            s += p.at(k);
        }
        if (std::abs(s - 1.0) > 1e-5) throw data_error("inception_score: probabilities must sum to 1");
    }
    size_t n = probs.size();
    double acc = 0;
    for (int s = 0; s < splits; ++s) {
        size_t lo = n * size_t(s) / size_t(splits);
        size_t hi = n * size_t(s + 1) / size_t(splits);
        std::vector<double> marginal(static_cast<size_t>(K), 0.0);
        for (size_t i = lo; i < hi; ++i)
            for (int k = 0; k < K; ++k) marginal[size_t(k)] += probs[i].at(k);
        for (auto& m : marginal) m /= double(hi - lo);
        double mean_kl = 0;
        for (size_t i = lo; i < hi; ++i) {
            double kl = 0;
            for (int k = 0; k < K; ++k) {
                double p = probs[i].at(k);
                if (p > 1e-12) kl += p * (std::log(p) - std::log(std::max(marginal[size_t(k)], 1e-12)));
            }
            mean_kl += kl;
        }
        mean_kl /= double(hi - lo);
        acc += std::exp(mean_kl);
    }
    return acc / splits;
}

// ---------------------------------------------------------------------------
// Segmentation IoU statistics
// ---------------------------------------------------------------------------

struct IouStats {
    double mean_percent = 0.0;
    double variance = 0.0;               // across samples, percent^2
    std::vector<double> per_sample;      // raw [0,1] scores
};

/// Foreground IoU per pair; a both-empty pair scores 1 by convention.
inline IouStats iou_stats(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
    if (preds.size() != gts.size()) throw shape_error("iou_stats: list lengths differ");
    if (preds.empty()) throw data_error("iou_stats: empty lists");
    IouStats out;
    for (size_t i = 0; i < preds.size(); ++i) {
        preds[i].require_same_shape(gts[i], "iou_stats");
        long inter = 0, uni = 0;
        for (size_t j = 0; j < preds[i].numel(); ++j) {
            bool p = preds[i][j] > 0.5f;
            bool g = gts[i][j] > 0.5f;
            inter += (p && g) ? 1 : 0;
            uni += (p || g) ? 1 : 0;
        }
        out.per_sample.push_back(uni == 0 ? 1.0 : double(inter) / double(uni));
    }
    double mean = 0;
    for (double v : out.per_sample) mean += v;
    mean /= double(out.per_sample.size());
    out.mean_percent = mean * 100.0;
    double var = 0;
    for (double v : out.per_sample) var += (v * 100.0 - out.mean_percent) * (v * 100.0 - out.mean_percent);
    out.variance = out.per_sample.size() > 1 ? var / double(out.per_sample.size() - 1) : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic-ground-truth oracles
// ---------------------------------------------------------------------------

/// Foreground decision used by the oracle segmenter: the generators paint
/// foreground saturated and background pastel, for any hue.
constexpr double kOracleSaturationThreshold = 0.45;

inline Tensor oracle_segment(const Tensor& image) {
    Tensor mask({image.dim(1), image.dim(2)});
    for (int y = 0; y < image.dim(1); ++y)
        for (int x = 0; x < image.dim(2); ++x)
            mask.at(y, x) = pixel_saturation(image, y, x) >= kOracleSaturationThreshold ? 1.0f : 0.0f;
    return mask;
}

struct StyleFidelityResult {
    double fraction = 0.0;
    int evaluated = 0;
    int skipped = 0;  // empty-foreground samples
};

/// Fraction of generations whose foreground circular-mean hue lands within
/// tolerance of the requested hue. Masks are the generation inputs.
inline StyleFidelityResult style_fidelity(const std::vector<Tensor>& generated,
                                          const std::vector<double>& requested_hues,
                                          const std::vector<Tensor>& masks,
                                          double tolerance_deg) {
    if (generated.size() != requested_hues.size() || generated.size() != masks.size())
        throw shape_error("style_fidelity: list lengths differ");
    StyleFidelityResult r;
    for (size_t i = 0; i < generated.size(); ++i) {
        std::vector<double> hues;
        for (int y = 0; y < masks[i].dim(0); ++y)
            for (int x = 0; x < masks[i].dim(1); ++x)
                if (masks[i].at(y, x) > 0.5f) hues.push_back(pixel_hue(generated[i], y, x));
        if (hues.empty()) {
            ++r.skipped;
            continue;
        }
        ++r.evaluated;
        if (hue_distance(circular_mean_hue(hues), requested_hues[i]) <= tolerance_deg)
            r.fraction += 1.0;
    }
    if (r.evaluated > 0) r.fraction /= r.evaluated;
    return r;
}

/// Median IoU between the requested masks and the oracle segmentation of the
/// generated images.
inline double layout_adherence(const std::vector<Tensor>& generated,
                               const std::vector<Tensor>& requested_masks) {
    if (generated.size() != requested_masks.size())
        throw shape_error("layout_adherence: list lengths differ");
    if (generated.empty()) throw data_error("layout_adherence: empty lists");
    std::vector<double> ious;
    for (size_t i = 0; i < generated.size(); ++i) {
        Tensor pred = oracle_segment(generated[i]);
        long inter = 0, uni = 0;
        for (size_t j = 0; j < pred.numel(); ++j) {
            bool p = pred[j] > 0.5f;
            bool g = requested_masks[i][j] > 0.5f;
            inter += (p && g) ? 1 : 0;
            uni += (p || g) ? 1 : 0;
        }
        ious.push_back(uni == 0 ? 1.0 : double(inter) / double(uni));
    }
    std::sort(ious.begin(), ious.end());
    size_t n = ious.size();
    return n % 2 ? ious[n / 2] : 0.5 * (ious[n / 2 - 1] + ious[n / 2]);
}

// ---------------------------------------------------------------------------
// Feature model: a small classifier whose penultimate activations provide
// FID features and whose head provides IS probabilities. Trained per dataset
// seed; scores are comparable across runs of one cohort only.
// ---------------------------------------------------------------------------

class FeatureNet {
public:
    static constexpr int kFeatureDim = 64;

    FeatureNet() = default;

    FeatureNet(int classes, uint64_t seed) : classes_(classes) {
        Rng rng(seed);
        conv1_ = nn::Conv2d(3, 16, 3);
        conv1_.init(rng);
        gn1_ = nn::GroupNorm(16, 8);
        conv2_ = nn::Conv2d(16, 32, 3);
        conv2_.init(rng);
        gn2_ = nn::GroupNorm(32, 8);
        conv3_ = nn::Conv2d(32, kFeatureDim, 3);
        conv3_.init(rng);
        head_ = nn::Linear(kFeatureDim, classes);
        head_.init(rng);
    }

    int classes() const { return classes_; }

    void register_params(nn::ParamRegistry& reg) {
        reg.scoped("conv1.", [&] { conv1_.register_params(reg); });
        reg.scoped("gn1.", [&] { gn1_.register_params(reg); });
        reg.scoped("conv2.", [&] { conv2_.register_params(reg); });
        reg.scoped("gn2.", [&] { gn2_.register_params(reg); });
        reg.scoped("conv3.", [&] { conv3_.register_params(reg); });
        reg.scoped("head.", [&] { head_.register_params(reg); });
    }

    struct Cache {
        nn::Conv2d::Cache c1, c2, c3;
        nn::GroupNorm::Cache g1, g2;
        nn::SiLU::Cache a1, a2, a3;
        std::vector<int> hw;
        int last_h = 0, last_w = 0;
        nn::Linear::Cache head;
    };

    /// images {N,3,H,W} -> features {N,64}
    Tensor features(const Tensor& x, Cache* c) const {
        nn::SiLU silu;
        if (c) c->hw.clear();
        Tensor h = conv1_.forward(x, c ? &c->c1 : nullptr);
        h = gn1_.forward(h, c ? &c->g1 : nullptr);
        h = silu.forward(h, c ? &c->a1 : nullptr);
        if (c) c->hw.push_back(h.dim(2));
        h = nn::avgpool2(h);
        h = conv2_.forward(h, c ? &c->c2 : nullptr);
        h = gn2_.forward(h, c ? &c->g2 : nullptr);
        h = silu.forward(h, c ? &c->a2 : nullptr);
        if (c) c->hw.push_back(h.dim(2));
        h = nn::avgpool2(h);
        h = conv3_.forward(h, c ? &c->c3 : nullptr);
        h = silu.forward(h, c ? &c->a3 : nullptr);
        if (c) {
            c->last_h = h.dim(2);
            c->last_w = h.dim(3);
        }
        return nn::global_avgpool(h);
    }

    /// images {N,3,H,W} -> class probabilities {N,K}
    Tensor class_probs(const Tensor& x, Cache* c) const {
        Tensor f = features(x, c);
        Tensor logits = head_.forward(f, c ? &c->head : nullptr);
        Tensor p(logits.shape());
        for (int n = 0; n < logits.dim(0); ++n) {
            float mx = logits.at(n, 0);
            for (int k = 1; k < classes_; ++k) mx = std::max(mx, logits.at(n, k));
            double denom = 0;
            for (int k = 0; k < classes_; ++k) denom += std::exp(double(logits.at(n, k)) - mx);
            for (int k = 0; k < classes_; ++k)
                p.at(n, k) = static_cast<float>(std::exp(double(logits.at(n, k)) - mx) / denom);
        }
        return p;
    }

    /// dlogits {N,K} -> parameter grads
    void backward(const Tensor& dlogits, Cache& c) {
        nn::SiLU silu;
        Tensor d = head_.backward(dlogits, c.head);
        d = nn::global_avgpool_backward(d, c.last_h, c.last_w);
        d = silu.backward(d, c.a3);
        d = conv3_.backward(d, c.c3);
        d = nn::avgpool2_backward(d, c.hw[1], c.hw[1]);
        d = silu.backward(d, c.a2);
        d = gn2_.backward(d, c.g2);
        d = conv2_.backward(d, c.c2);
        d = nn::avgpool2_backward(d, c.hw[0], c.hw[0]);
        d = silu.backward(d, c.a1);
        d = gn1_.backward(d, c.g1);
        conv1_.backward(d, c.c1);
    }

private:
    int classes_ = 4;
    nn::Conv2d conv1_, conv2_, conv3_;
    nn::GroupNorm gn1_, gn2_;
    nn::Linear head_;
};

/// Trains the feature model as a classifier over (image, label) pairs.
inline FeatureNet train_feature_model(const std::vector<const Tensor*>& images,
                                      const std::vector<int>& labels, int classes, int epochs,
                                      uint64_t seed, double lr = 1e-3, int batch_size = 16) {
    if (images.empty() || images.size() != labels.size())
        throw data_error("train_feature_model: bad inputs");
    FeatureNet net(classes, seed);
    nn::ParamRegistry reg;
    net.register_params(reg);
    nn::Adam opt(lr);
    Rng rng(seed ^ 0xfeafULL);
    int C = images.front()->dim(0), H = images.front()->dim(1), W = images.front()->dim(2);
    for (int e = 0; e < epochs; ++e) {
        size_t steps = (images.size() + size_t(batch_size) - 1) / size_t(batch_size);
        for (size_t s = 0; s < steps; ++s) {
            int nb = static_cast<int>(std::min<size_t>(size_t(batch_size), images.size()));
            Tensor x({nb, C, H, W});
            std::vector<int> ys(static_cast<size_t>(nb));
            for (int b = 0; b < nb; ++b) {
                size_t idx = rng.uniform_int(images.size());
                std::copy(images[idx]->data(), images[idx]->data() + images[idx]->numel(),
                          x.data() + size_t(b) * images[idx]->numel());
                ys[static_cast<size_t>(b)] = labels[idx];
            }
            FeatureNet::Cache cache;
            Tensor p = net.class_probs(x, &cache);
            // CE grad wrt logits: p - onehot
            Tensor dlogits(p.shape());
            for (int b = 0; b < nb; ++b)
                for (int k = 0; k < classes; ++k)
                    dlogits.at(b, k) =
                        (p.at(b, k) - (k == ys[size_t(b)] ? 1.0f : 0.0f)) / float(nb);
            reg.zero_grads();
            net.backward(dlogits, cache);
            opt.step(reg);
        }
    }
    return net;
}

struct MetricReport {
    double fid = 0.0;
    double is_score = 0.0;
    double iou_mean = 0.0;
    double iou_variance = 0.0;
    double style_fidelity = 0.0;
    double layout_adherence_iou = 0.0;
};

}  // namespace stedm::metrics
