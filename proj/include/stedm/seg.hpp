#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stedm/errors.hpp"
#include "stedm/nn.hpp"
#include "stedm/rng.hpp"
#include "stedm/tensor.hpp"

namespace stedm::seg {

/// Binary segmentation U-Net: 4 stages, base 32 channels, softmax head.
/// Input sides must be divisible by 8 (three poolings).
class SegUNet {
public:
    static constexpr int kStages = 4;

    SegUNet() = default;

    explicit SegUNet(uint64_t seed, int in_channels = 3, int base = 32, int classes = 2)
        : in_c_(in_channels), base_(base), classes_(classes) {
        Rng rng(seed);
        int c = in_channels;
        for (int s = 0; s < kStages; ++s) {
            int w = base << s;
            enc1_.emplace_back(c, w, 3);
            enc1_.back().init(rng);
            enc_n1_.emplace_back(w, groups(w));
            enc2_.emplace_back(w, w, 3);
            enc2_.back().init(rng);
            enc_n2_.emplace_back(w, groups(w));
            c = w;
        }
        for (int s = kStages - 2; s >= 0; --s) {
            int w = base << s;
            int cin = (base << (s + 1)) + w;  // upsampled + skip
            dec1_.emplace_back(cin, w, 3);
            dec1_.back().init(rng);
            dec_n1_.emplace_back(w, groups(w));
            dec2_.emplace_back(w, w, 3);
            dec2_.back().init(rng);
            dec_n2_.emplace_back(w, groups(w));
        }
        head_ = nn::Conv2d(base, classes, 1);
        head_.init(rng);
    }

    int downsample_total() const { return 1 << (kStages - 1); }

    void register_params(nn::ParamRegistry& reg) {
        for (int s = 0; s < kStages; ++s) {
            auto tag = std::to_string(s);
            reg.scoped("enc" + tag + "a.", [&] { enc1_[size_t(s)].register_params(reg); });
            reg.scoped("enc" + tag + "an.", [&] { enc_n1_[size_t(s)].register_params(reg); });
            reg.scoped("enc" + tag + "b.", [&] { enc2_[size_t(s)].register_params(reg); });
            reg.scoped("enc" + tag + "bn.", [&] { enc_n2_[size_t(s)].register_params(reg); });
        }
        for (size_t s = 0; s < dec1_.size(); ++s) {
            auto tag = std::to_string(s);
            reg.scoped("dec" + tag + "a.", [&] { dec1_[s].register_params(reg); });
            reg.scoped("dec" + tag + "an.", [&] { dec_n1_[s].register_params(reg); });
            reg.scoped("dec" + tag + "b.", [&] { dec2_[s].register_params(reg); });
            reg.scoped("dec" + tag + "bn.", [&] { dec_n2_[s].register_params(reg); });
        }
        reg.scoped("head.", [&] { head_.register_params(reg); });
    }

    struct Cache {
        std::vector<nn::Conv2d::Cache> e1, e2, d1, d2;
        std::vector<nn::GroupNorm::Cache> en1, en2, dn1, dn2;
        std::vector<nn::SiLU::Cache> ea1, ea2, da1, da2;
        std::vector<Tensor> skips;
        std::vector<int> pool_hw;
        nn::Conv2d::Cache head;
        Tensor probs;
    };

    /// images {N,C,H,W} -> per-pixel class probabilities {N,classes,H,W}
    Tensor forward(const Tensor& x, Cache* c) const {
        if (x.ndim() != 4 || x.dim(1) != in_c_) throw shape_error("SegUNet: bad input " + x.shape_str());
        if (x.dim(2) % downsample_total() || x.dim(3) % downsample_total())
            throw shape_error("SegUNet: input sides must be divisible by " +
                              std::to_string(downsample_total()));
        nn::SiLU silu;
        if (c) {
            c->e1.resize(kStages); c->e2.resize(kStages);
            c->en1.resize(kStages); c->en2.resize(kStages);
            c->ea1.resize(kStages); c->ea2.resize(kStages);
            size_t nd = dec1_.size();
            c->d1.resize(nd); c->d2.resize(nd);
            c->dn1.resize(nd); c->dn2.resize(nd);
            c->da1.resize(nd); c->da2.resize(nd);
            c->skips.clear();
            c->pool_hw.clear();
        }
        Tensor h = x;
        std::vector<Tensor> skips;
        for (int s = 0; s < kStages; ++s) {
            h = enc1_[size_t(s)].forward(h, c ? &c->e1[size_t(s)] : nullptr);
            h = enc_n1_[size_t(s)].forward(h, c ? &c->en1[size_t(s)] : nullptr);
            h = silu.forward(h, c ? &c->ea1[size_t(s)] : nullptr);
            h = enc2_[size_t(s)].forward(h, c ? &c->e2[size_t(s)] : nullptr);
            h = enc_n2_[size_t(s)].forward(h, c ? &c->en2[size_t(s)] : nullptr);
            h = silu.forward(h, c ? &c->ea2[size_t(s)] : nullptr);
            if (s + 1 < kStages) {
                skips.push_back(h);
                if (c) c->pool_hw.push_back(h.dim(2));
                h = nn::avgpool2(h);
            }
        }
        for (size_t s = 0; s < dec1_.size(); ++s) {
            h = nn::upsample2(h);
            h = nn::concat_channels(h, skips[skips.size() - 1 - s]);
            h = dec1_[s].forward(h, c ? &c->d1[s] : nullptr);
            h = dec_n1_[s].forward(h, c ? &c->dn1[s] : nullptr);
            h = silu.forward(h, c ? &c->da1[s] : nullptr);
            h = dec2_[s].forward(h, c ? &c->d2[s] : nullptr);
            h = dec_n2_[s].forward(h, c ? &c->dn2[s] : nullptr);
            h = silu.forward(h, c ? &c->da2[s] : nullptr);
        }
        if (c) c->skips = std::move(skips);
        Tensor logits = head_.forward(h, c ? &c->head : nullptr);
        Tensor probs = softmax_channels(logits);
        if (c) c->probs = probs;
        return probs;
    }

    /// dprobs -> parameter grads (softmax jacobian applied internally).
    void backward(const Tensor& dprobs, Cache& c) {
        nn::SiLU silu;
        int N = dprobs.dim(0), H = dprobs.dim(2), W = dprobs.dim(3);
        Tensor dlogits(dprobs.shape());
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double dot = 0;
                    for (int k = 0; k < classes_; ++k)
                        dot += double(dprobs.at(n, k, y, x)) * double(c.probs.at(n, k, y, x));
                    for (int k = 0; k < classes_; ++k)
                        dlogits.at(n, k, y, x) = static_cast<float>(
                            double(c.probs.at(n, k, y, x)) *
                            (double(dprobs.at(n, k, y, x)) - dot));
                }
        Tensor d = head_.backward(dlogits, c.head);
        std::vector<Tensor> skip_grads(c.skips.size());
        for (int s = static_cast<int>(dec1_.size()) - 1; s >= 0; --s) {
            d = silu.backward(d, c.da2[size_t(s)]);
            d = dec_n2_[size_t(s)].backward(d, c.dn2[size_t(s)]);
            d = dec2_[size_t(s)].backward(d, c.d2[size_t(s)]);
            d = silu.backward(d, c.da1[size_t(s)]);
            d = dec_n1_[size_t(s)].backward(d, c.dn1[size_t(s)]);
            d = dec1_[size_t(s)].backward(d, c.d1[size_t(s)]);
            size_t skip_idx = c.skips.size() - 1 - size_t(s);
            const Tensor& skip = c.skips[skip_idx];
            Tensor dup({N, d.dim(1) - skip.dim(1), d.dim(2), d.dim(3)});
            Tensor dskip(skip.shape());
            nn::split_channels(d, dup, dskip);
            skip_grads[skip_idx] = std::move(dskip);
            d = nn::upsample2_backward(dup);
        }
        for (int s = kStages - 1; s >= 0; --s) {
            if (s + 1 < kStages) {
                int hw = c.pool_hw[size_t(s)];
                d = nn::avgpool2_backward(d, hw, hw);
                d.add_(skip_grads[size_t(s)]);
            }
            d = silu.backward(d, c.ea2[size_t(s)]);
            d = enc_n2_[size_t(s)].backward(d, c.en2[size_t(s)]);
            d = enc2_[size_t(s)].backward(d, c.e2[size_t(s)]);
            d = silu.backward(d, c.ea1[size_t(s)]);
            d = enc_n1_[size_t(s)].backward(d, c.en1[size_t(s)]);
            d = enc1_[size_t(s)].backward(d, c.e1[size_t(s)]);
        }
    }

    static Tensor softmax_channels(const Tensor& logits) {
        int N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
        Tensor p(logits.shape());
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    float mx = logits.at(n, 0, y, x);
                    for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at(n, k, y, x));
                    double denom = 0;
                    for (int k = 0; k < K; ++k) denom += std::exp(double(logits.at(n, k, y, x)) - mx);
                    for (int k = 0; k < K; ++k)
                        p.at(n, k, y, x) = static_cast<float>(
                            std::exp(double(logits.at(n, k, y, x)) - mx) / denom);
                }
        return p;
    }

private:
    static int groups(int c) {
        for (int g : {8, 4, 2, 1})
            if (c % g == 0) return g;
        return 1;
    }

    int in_c_ = 3, base_ = 32, classes_ = 2;
    std::vector<nn::Conv2d> enc1_, enc2_, dec1_, dec2_;
    std::vector<nn::GroupNorm> enc_n1_, enc_n2_, dec_n1_, dec_n2_;
    nn::Conv2d head_;
};

/// Eval-mode forward for a single image: CHW -> {classes,H,W} probabilities.
inline Tensor seg_forward(const SegUNet& model, const Tensor& image) {
    if (image.ndim() != 3) throw shape_error("seg_forward: want CHW image");
    Tensor b({1, image.dim(0), image.dim(1), image.dim(2)});
    std::copy(image.data(), image.data() + image.numel(), b.data());
    Tensor p = model.forward(b, nullptr);
    Tensor out({p.dim(1), p.dim(2), p.dim(3)});
    std::copy(p.data(), p.data() + p.numel(), out.data());
    return out;
}

constexpr double kDiceEps = 1e-6;

/// Weighted CE + soft-Dice loss on foreground probabilities.
/// probs {2,H,W} (rows sum to 1), gt {H,W} in {0,1}.
inline double seg_loss(const Tensor& probs, const Tensor& gt, double w_ce = 0.1,
                       double w_dice = 0.9) {
    if (probs.ndim() != 3 || probs.dim(0) != 2) throw shape_error("seg_loss: want {2,H,W} probs");
    if (gt.ndim() != 2 || gt.dim(0) != probs.dim(1) || gt.dim(1) != probs.dim(2))
        throw shape_error("seg_loss: mask shape mismatch");
    int H = gt.dim(0), W = gt.dim(1);
    double ce = 0, inter = 0, psum = 0, gsum = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int cls = gt.at(y, x) > 0.5f ? 1 : 0;
            double p = std::max(double(probs.at(cls, y, x)), 1e-12);
            ce -= std::log(p);
            double pf = probs.at(1, y, x);
            inter += pf * (cls == 1 ? 1.0 : 0.0);
            psum += pf;
            gsum += cls == 1 ? 1.0 : 0.0;
        }
    ce /= double(H) * W;
    double dice = 1.0 - (2.0 * inter + kDiceEps) / (psum + gsum + kDiceEps);
    return w_ce * ce + w_dice * dice;
}

/// Analytic gradient of seg_loss wrt probs (for the training loop).
inline Tensor seg_loss_backward(const Tensor& probs, const Tensor& gt, double w_ce = 0.1,
                                double w_dice = 0.9) {
    int H = gt.dim(0), W = gt.dim(1);
    double npix = double(H) * W;
    double inter = 0, psum = 0, gsum = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int cls = gt.at(y, x) > 0.5f ? 1 : 0;
            double pf = probs.at(1, y, x);
            inter += pf * (cls == 1 ? 1.0 : 0.0);
            psum += pf;
            gsum += cls == 1 ? 1.0 : 0.0;
        }
    double denom = psum + gsum + kDiceEps;
    double num = 2.0 * inter + kDiceEps;
    Tensor d(probs.shape());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int cls = gt.at(y, x) > 0.5f ? 1 : 0;
            double p = std::max(double(probs.at(cls, y, x)), 1e-12);
            d.at(cls, y, x) += static_cast<float>(w_ce * (-1.0 / p) / npix);
            // dice touches the foreground prob only
            double ddice = -(2.0 * (cls == 1 ? 1.0 : 0.0) * denom - num) / (denom * denom);
            d.at(1, y, x) += static_cast<float>(w_dice * ddice);
        }
    return d;
}

}  // namespace stedm::seg
