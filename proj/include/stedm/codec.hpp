#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stedm/errors.hpp"
#include "stedm/nn.hpp"
#include "stedm/rng.hpp"
#include "stedm/tensor.hpp"

namespace stedm::codec {

/// Encoder/decoder pair mapping images to the diffusion latent space.
class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    virtual Tensor encode(const Tensor& image) const = 0;
    virtual Tensor decode(const Tensor& latent) const = 0;
    virtual int factor() const = 0;
    virtual int latent_channels(int image_channels) const = 0;
};

/// Pixel-space fallback: f=1, encode and decode are identity maps.
class IdentityCodec final : public LatentCodec {
public:
    Tensor encode(const Tensor& image) const override { return image; }
    Tensor decode(const Tensor& latent) const override { return latent; }
    int factor() const override { return 1; }
    int latent_channels(int image_channels) const override { return image_channels; }
};

inline std::unique_ptr<LatentCodec> identity_codec() { return std::make_unique<IdentityCodec>(); }

// ---------------------------------------------------------------------------
// Small convolutional autoencoder (continuous latents, no quantization)
// ---------------------------------------------------------------------------

class ConvAutoencoder final : public LatentCodec {
public:
    ConvAutoencoder() = default;

    ConvAutoencoder(int f, int image_channels, int latent_channels, uint64_t seed, int width = 32)
        : f_(f), in_c_(image_channels), z_c_(latent_channels), width_(width) {
        if (f != 2 && f != 4) throw param_error("ConvAutoencoder: factor must be 2 or 4");
        Rng rng(seed);
        int stages = f == 2 ? 1 : 2;
        int c = in_c_;
        for (int s = 0; s < stages; ++s) {
            int w = width_ << s;
            enc_convs_.emplace_back(c, w, 3);
            enc_convs_.back().init(rng);
            enc_norms_.emplace_back(w, groups(w));
            c = w;
        }
        enc_out_ = nn::Conv2d(c, z_c_, 3);
        enc_out_.init(rng);
        dec_in_ = nn::Conv2d(z_c_, c, 3);
        dec_in_.init(rng);
        for (int s = stages - 1; s >= 0; --s) {
            int w = width_ << s;
            int wout = s == 0 ? width_ : width_ << (s - 1);
            dec_convs_.emplace_back(w, wout, 3);
            dec_convs_.back().init(rng);
            dec_norms_.emplace_back(wout, groups(wout));
        }
        dec_out_ = nn::Conv2d(width_, in_c_, 3);
        dec_out_.init(rng);
    }

    int factor() const override { return f_; }
    int latent_channels(int) const override { return z_c_; }

    Tensor encode(const Tensor& image) const override {
        Tensor b = batch_of_one(image);
        Tensor z = encode_batch(b, nullptr);
        return unbatch(z);
    }

    Tensor decode(const Tensor& latent) const override {
        Tensor b = batch_of_one(latent);
        Tensor x = decode_batch(b, nullptr);
        return unbatch(x);
    }

    void register_params(nn::ParamRegistry& reg) {
        for (size_t s = 0; s < enc_convs_.size(); ++s) {
            reg.scoped("enc" + std::to_string(s) + ".", [&] { enc_convs_[s].register_params(reg); });
            reg.scoped("encn" + std::to_string(s) + ".", [&] { enc_norms_[s].register_params(reg); });
        }
        reg.scoped("enc_out.", [&] { enc_out_.register_params(reg); });
        reg.scoped("dec_in.", [&] { dec_in_.register_params(reg); });
        for (size_t s = 0; s < dec_convs_.size(); ++s) {
            reg.scoped("dec" + std::to_string(s) + ".", [&] { dec_convs_[s].register_params(reg); });
            reg.scoped("decn" + std::to_string(s) + ".", [&] { dec_norms_[s].register_params(reg); });
        }
        reg.scoped("dec_out.", [&] { dec_out_.register_params(reg); });
    }

    struct Cache {
        std::vector<nn::Conv2d::Cache> enc_conv, dec_conv;
        std::vector<nn::GroupNorm::Cache> enc_norm, dec_norm;
        std::vector<nn::SiLU::Cache> enc_act, dec_act;
        std::vector<int> enc_hw;
        nn::Conv2d::Cache enc_out, dec_in, dec_out;
    };

    Tensor encode_batch(const Tensor& x, Cache* c) const {
        if (x.ndim() != 4 || x.dim(1) != in_c_)
            throw shape_error("ConvAutoencoder: bad input " + x.shape_str());
        if (x.dim(2) % f_ || x.dim(3) % f_)
            throw shape_error("ConvAutoencoder: image sides must be divisible by f");
        if (c) {
            c->enc_conv.resize(enc_convs_.size());
            c->enc_norm.resize(enc_convs_.size());
            c->enc_act.resize(enc_convs_.size());
            c->enc_hw.clear();
        }
        nn::SiLU silu;
        Tensor h = x;
        for (size_t s = 0; s < enc_convs_.size(); ++s) {
            h = enc_convs_[s].forward(h, c ? &c->enc_conv[s] : nullptr);
            h = enc_norms_[s].forward(h, c ? &c->enc_norm[s] : nullptr);
            h = silu.forward(h, c ? &c->enc_act[s] : nullptr);
            if (c) c->enc_hw.push_back(h.dim(2));
            h = nn::avgpool2(h);
        }
        return enc_out_.forward(h, c ? &c->enc_out : nullptr);
    }

    Tensor decode_batch(const Tensor& z, Cache* c) const {
        if (z.ndim() != 4 || z.dim(1) != z_c_)
            throw shape_error("ConvAutoencoder: bad latent " + z.shape_str());
        if (c) {
            c->dec_conv.resize(dec_convs_.size());
            c->dec_norm.resize(dec_convs_.size());
            c->dec_act.resize(dec_convs_.size());
        }
        nn::SiLU silu;
        Tensor h = dec_in_.forward(z, c ? &c->dec_in : nullptr);
        for (size_t s = 0; s < dec_convs_.size(); ++s) {
            h = nn::upsample2(h);
            h = dec_convs_[s].forward(h, c ? &c->dec_conv[s] : nullptr);
            h = dec_norms_[s].forward(h, c ? &c->dec_norm[s] : nullptr);
            h = silu.forward(h, c ? &c->dec_act[s] : nullptr);
        }
        return dec_out_.forward(h, c ? &c->dec_out : nullptr);
    }

    /// Backward of decode_batch then encode_batch (reconstruction training).
    void backward(const Tensor& drecon, Cache& c) {
        nn::SiLU silu;
        Tensor d = dec_out_.backward(drecon, c.dec_out);
        for (int s = static_cast<int>(dec_convs_.size()) - 1; s >= 0; --s) {
            d = silu.backward(d, c.dec_act[static_cast<size_t>(s)]);
            d = dec_norms_[static_cast<size_t>(s)].backward(d, c.dec_norm[static_cast<size_t>(s)]);
            d = dec_convs_[static_cast<size_t>(s)].backward(d, c.dec_conv[static_cast<size_t>(s)]);
            d = nn::upsample2_backward(d);
        }
        d = dec_in_.backward(d, c.dec_in);
        d = enc_out_.backward(d, c.enc_out);
        for (int s = static_cast<int>(enc_convs_.size()) - 1; s >= 0; --s) {
            int hw = c.enc_hw[static_cast<size_t>(s)];
            d = nn::avgpool2_backward(d, hw, hw);
            d = silu.backward(d, c.enc_act[static_cast<size_t>(s)]);
            d = enc_norms_[static_cast<size_t>(s)].backward(d, c.enc_norm[static_cast<size_t>(s)]);
            d = enc_convs_[static_cast<size_t>(s)].backward(d, c.enc_conv[static_cast<size_t>(s)]);
        }
    }

private:
    static int groups(int c) {
        for (int g : {8, 4, 2, 1})
            if (c % g == 0) return g;
        return 1;
    }

    static Tensor batch_of_one(const Tensor& t) {
        if (t.ndim() != 3) throw shape_error("ConvAutoencoder: want CHW tensor");
        Tensor b({1, t.dim(0), t.dim(1), t.dim(2)});
        std::copy(t.data(), t.data() + t.numel(), b.data());
        return b;
    }

    static Tensor unbatch(const Tensor& b) {
        Tensor t({b.dim(1), b.dim(2), b.dim(3)});
        std::copy(b.data(), b.data() + b.numel(), t.data());
        return t;
    }

    int f_ = 4, in_c_ = 3, z_c_ = 4, width_ = 32;
    std::vector<nn::Conv2d> enc_convs_, dec_convs_;
    std::vector<nn::GroupNorm> enc_norms_, dec_norms_;
    nn::Conv2d enc_out_, dec_in_, dec_out_;
};

struct AeTrainReport {
    double initial_val_mse = 0.0;
    std::vector<double> val_mse;  // per epoch
};

/// Trains the convolutional codec on reconstruction MSE. A 10% held-out
/// split (at least one image) tracks validation loss.
inline std::pair<std::unique_ptr<ConvAutoencoder>, AeTrainReport> train_autoencoder(
    const std::vector<Tensor>& images, int f, int epochs, uint64_t seed,
    int latent_channels = 4, double lr = 1e-3, int batch_size = 16) {
    if (images.empty()) throw data_error("train_autoencoder: empty dataset");
    if (f != 2 && f != 4) throw param_error("train_autoencoder: factor must be 2 or 4");
    int C = images.front().dim(0);
    for (const auto& im : images) {
        if (im.ndim() != 3 || !im.same_shape(images.front()))
            throw shape_error("train_autoencoder: images must share dimensions");
        if (im.dim(1) % f || im.dim(2) % f)
            throw shape_error("train_autoencoder: image sides must be divisible by f");
    }

    auto ae = std::make_unique<ConvAutoencoder>(f, C, latent_channels, seed);
    nn::ParamRegistry reg;
    ae->register_params(reg);
    nn::Adam opt(lr);
    Rng rng(seed ^ 0x5eedULL);

    size_t n_val = std::max<size_t>(1, images.size() / 10);
    size_t n_train = images.size() - n_val;
    if (n_train == 0) {
        n_train = images.size();
        n_val = 0;
    }

    auto eval_val = [&]() {
        if (n_val == 0) return 0.0;
        double acc = 0;
        size_t count = 0;
        for (size_t i = n_train; i < images.size(); ++i) {
            Tensor z = ae->encode(images[i]);
            Tensor r = ae->decode(z);
            for (size_t j = 0; j < r.numel(); ++j) {
                double d = double(r[j]) - double(images[i][j]);
                acc += d * d;
            }
            count += r.numel();
        }
        return acc / double(count);
    };

    AeTrainReport report;
    report.initial_val_mse = eval_val();

    int H = images.front().dim(1), W = images.front().dim(2);
    for (int e = 0; e < epochs; ++e) {
        size_t steps = (n_train + size_t(batch_size) - 1) / size_t(batch_size);
        for (size_t s = 0; s < steps; ++s) {
            int nb = static_cast<int>(std::min<size_t>(size_t(batch_size), n_train));
            Tensor x({nb, C, H, W});
            for (int b = 0; b < nb; ++b) {
                size_t idx = rng.uniform_int(n_train);
                const Tensor& im = images[idx];
                std::copy(im.data(), im.data() + im.numel(), x.data() + size_t(b) * im.numel());
            }
            ConvAutoencoder::Cache cache;
            Tensor z = ae->encode_batch(x, &cache);
            Tensor r = ae->decode_batch(z, &cache);
            Tensor dr(r.shape());
            for (size_t j = 0; j < r.numel(); ++j)
                dr[j] = 2.0f * (r[j] - x[j]) / float(r.numel());
            reg.zero_grads();
            ae->backward(dr, cache);
            opt.step(reg);
        }
        report.val_mse.push_back(eval_val());
    }
    return {std::move(ae), report};
}

// ---------------------------------------------------------------------------
// Layout downsampling to the latent grid
// ---------------------------------------------------------------------------

/// Majority vote per f x f block; ties go to the lowest class index.
/// mask: {H,W} with integer labels in [0,K).
inline Tensor downsample_layout(const Tensor& mask, int f, int K) {
    if (mask.ndim() != 2) throw shape_error("downsample_layout: want HxW mask");
    if (f < 1 || K < 1) throw param_error("downsample_layout: bad f or K");
    int H = mask.dim(0), W = mask.dim(1);
    if (H % f || W % f) throw shape_error("downsample_layout: sides must be divisible by f");
    int h = H / f, w = W / f;
    Tensor out({K, h, w});
    std::vector<int> hist(static_cast<size_t>(K));
    for (int by = 0; by < h; ++by)
        for (int bx = 0; bx < w; ++bx) {
            std::fill(hist.begin(), hist.end(), 0);
            for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx) {
                    float v = mask.at(by * f + dy, bx * f + dx);
                    int cls = static_cast<int>(std::lround(v));
                    if (cls < 0 || cls >= K || std::abs(v - float(cls)) > 1e-3f)
                        throw data_error("downsample_layout: mask value outside 0.." +
                                         std::to_string(K - 1));
                    hist[static_cast<size_t>(cls)]++;
                }
            int best = 0;
            for (int kk = 1; kk < K; ++kk)
                if (hist[static_cast<size_t>(kk)] > hist[static_cast<size_t>(best)]) best = kk;
            out.at(best, by, bx) = 1.0f;
        }
    return out;
}

}  // namespace stedm::codec
