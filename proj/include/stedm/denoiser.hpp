#pragma once

#include <string>
#include <vector>

#include "stedm/diffusion.hpp"
#include "stedm/errors.hpp"
#include "stedm/nn.hpp"
#include "stedm/rng.hpp"
#include "stedm/tensor.hpp"

namespace stedm::denoiser {

struct DenoiserConfig {
    int latent_channels = 3;
    int layout_classes = 2;
    int base_channels = 32;
    int depth = 2;             // downsampling stages; bottleneck at 1/2^depth
    int time_embed_dim = 128;
    int style_dim = 128;
    int max_timestep = 1000;

    void validate() const {
        if (depth < 1) throw param_error("DenoiserConfig: depth must be >= 1");
        if (latent_channels < 1 || layout_classes < 1 || base_channels < 1 ||
            time_embed_dim < 1 || style_dim < 1)
            throw param_error("DenoiserConfig: all dims must be positive");
    }
};

namespace detail {

inline int gn_groups(int c) {
    for (int g : {8, 4, 2, 1})
        if (c % g == 0) return g;
    return 1;
}

/// GN -> SiLU -> conv -> (+ time bias) -> GN -> SiLU -> conv, residual skip.
struct ResBlock {
    int cin = 0, cout = 0;
    nn::GroupNorm gn1, gn2;
    nn::Conv2d conv1, conv2, skip;
    nn::Linear temb_lin;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(int cin_, int cout_, int tdim, Rng& rng)
        : cin(cin_), cout(cout_),
          gn1(cin_, gn_groups(cin_)), gn2(cout_, gn_groups(cout_)),
          conv1(cin_, cout_, 3), conv2(cout_, cout_, 3),
          temb_lin(tdim, cout_), has_skip(cin_ != cout_) {
        conv1.init(rng);
        conv2.init(rng);
        temb_lin.init(rng);
        if (has_skip) {
            skip = nn::Conv2d(cin_, cout_, 1);
            skip.init(rng);
        }
    }

    void register_params(nn::ParamRegistry& reg) {
        reg.scoped("gn1.", [&] { gn1.register_params(reg); });
        reg.scoped("conv1.", [&] { conv1.register_params(reg); });
        reg.scoped("temb.", [&] { temb_lin.register_params(reg); });
        reg.scoped("gn2.", [&] { gn2.register_params(reg); });
        reg.scoped("conv2.", [&] { conv2.register_params(reg); });
        if (has_skip) reg.scoped("skip.", [&] { skip.register_params(reg); });
    }

    struct Cache {
        nn::GroupNorm::Cache gn1, gn2;
        nn::SiLU::Cache act1, act2;
        nn::Conv2d::Cache conv1, conv2, skip;
        nn::Linear::Cache temb;
    };

    Tensor forward(const Tensor& x, const Tensor& temb_act, Cache* c) const {
        nn::SiLU silu;
        Tensor h = gn1.forward(x, c ? &c->gn1 : nullptr);
        h = silu.forward(h, c ? &c->act1 : nullptr);
        h = conv1.forward(h, c ? &c->conv1 : nullptr);
        Tensor tb = temb_lin.forward(temb_act, c ? &c->temb : nullptr);
        nn::add_channel_bias(h, tb);
        h = gn2.forward(h, c ? &c->gn2 : nullptr);
        h = silu.forward(h, c ? &c->act2 : nullptr);
        h = conv2.forward(h, c ? &c->conv2 : nullptr);
        Tensor s = has_skip ? skip.forward(x, c ? &c->skip : nullptr) : x;
        h.add_(s);
        return h;
    }

    /// Returns dx; adds the time-embedding contribution into dtemb_acc.
    Tensor backward(const Tensor& dy, Cache& c, Tensor& dtemb_acc) {
        nn::SiLU silu;
        Tensor d = conv2.backward(dy, c.conv2);
        d = silu.backward(d, c.act2);
        d = gn2.backward(d, c.gn2);
        Tensor dtb = nn::channel_bias_backward(d);
        dtemb_acc.add_(temb_lin.backward(dtb, c.temb));
        d = conv1.backward(d, c.conv1);
        d = silu.backward(d, c.act1);
        Tensor dx = gn1.backward(d, c.gn1);
        if (has_skip)
            dx.add_(skip.backward(dy, c.skip));
        else
            dx.add_(dy);
        return dx;
    }
};

}  // namespace detail

/// Noise estimator eps_theta(z_t, t, layout, style): U-Net with the layout
/// one-hot concatenated to the input latent and the style vector passed
/// through a 2-layer MLP and broadcast-added at the bottleneck. An absent
/// style uses a dedicated learned null embedding (the CFG unconditional
/// branch), never a zero sentinel.
class StyleUNet {
public:
    StyleUNet() = default;

    StyleUNet(const DenoiserConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng rng(seed);
        int tdim = cfg.time_embed_dim;
        temb_l1_ = nn::Linear(tdim, tdim);
        temb_l1_.init(rng);
        temb_l2_ = nn::Linear(tdim, tdim);
        temb_l2_.init(rng);

        stem_ = nn::Conv2d(cfg.latent_channels + cfg.layout_classes, cfg.base_channels, 3);
        stem_.init(rng);

        int c = cfg.base_channels;
        for (int i = 0; i < cfg.depth; ++i) {
            int cout = cfg.base_channels << i;
            down_.emplace_back(c, cout, tdim, rng);
            c = cout;
        }
        int cmid = cfg.base_channels << cfg.depth;
        mid1_ = detail::ResBlock(c, cmid, tdim, rng);
        mid2_ = detail::ResBlock(cmid, cmid, tdim, rng);

        style_l1_ = nn::Linear(cfg.style_dim, tdim);
        style_l1_.init(rng);
        style_l2_ = nn::Linear(tdim, cmid);
        style_l2_.init(rng);
        null_style_ = Tensor({cfg.style_dim});
        for (size_t i = 0; i < null_style_.numel(); ++i)
            null_style_[i] = static_cast<float>(rng.gaussian() * 0.5);
        g_null_style_ = Tensor({cfg.style_dim});

        int cabove = cmid;
        for (int i = cfg.depth - 1; i >= 0; --i) {
            int cskip = cfg.base_channels << i;
            up_.emplace_back(cabove + cskip, cskip, tdim, rng);
            cabove = cskip;
        }
        out_gn_ = nn::GroupNorm(cfg.base_channels, detail::gn_groups(cfg.base_channels));
        out_conv_ = nn::Conv2d(cfg.base_channels, cfg.latent_channels, 3);
        out_conv_.init(rng, 0.05);  // small head keeps the first predictions near zero
    }

    const DenoiserConfig& config() const { return cfg_; }
    size_t param_count() {
        nn::ParamRegistry reg;
        register_params(reg);
        return reg.param_count();
    }
    const Tensor& null_style() const { return null_style_; }

    struct Cache {
        Tensor temb_in;                      // {N,tdim} sinusoidal
        nn::Linear::Cache temb_l1, temb_l2;
        nn::SiLU::Cache temb_act_mid, temb_act_out;
        Tensor temb_act;                     // {N,tdim} after activation
        nn::Conv2d::Cache stem;
        std::vector<detail::ResBlock::Cache> down;
        std::vector<int> down_hw;
        detail::ResBlock::Cache mid1, mid2;
        nn::Linear::Cache style_l1, style_l2;
        nn::SiLU::Cache style_act;
        std::vector<bool> has_style;
        std::vector<detail::ResBlock::Cache> up;
        std::vector<Tensor> skips;
        nn::GroupNorm::Cache out_gn;
        nn::SiLU::Cache out_act;
        nn::Conv2d::Cache out_conv;
        int zc = 0;
    };

    /// Batched forward. styles is {N,d}; has_style[n]==false replaces row n
    /// by the learned null embedding. timesteps are 1-based schedule steps.
    Tensor forward(const Tensor& z, const std::vector<int>& timesteps, const Tensor& layout,
                   const Tensor& styles, const std::vector<bool>& has_style, Cache* c) const {
        check_inputs(z, timesteps, layout, styles, has_style);
        int N = z.dim(0);
        int tdim = cfg_.time_embed_dim;

        // time embedding: sinusoidal -> linear -> silu -> linear -> silu
        nn::SiLU silu;
        Tensor te({N, tdim});
        for (int n = 0; n < N; ++n) {
            Tensor e = nn::sinusoidal_embedding(timesteps[static_cast<size_t>(n)], tdim);
            std::copy(e.data(), e.data() + tdim, te.data() + size_t(n) * tdim);
        }
        if (c) c->temb_in = te;
        Tensor ta = temb_l1_.forward(te, c ? &c->temb_l1 : nullptr);
        ta = silu.forward(ta, c ? &c->temb_act_mid : nullptr);
        ta = temb_l2_.forward(ta, c ? &c->temb_l2 : nullptr);
        ta = silu.forward(ta, c ? &c->temb_act_out : nullptr);
        if (c) c->temb_act = ta;

        // style embedding rows (null rows swapped in before the MLP)
        Tensor sv = styles;
        for (int n = 0; n < N; ++n)
            if (!has_style[static_cast<size_t>(n)])
                std::copy(null_style_.data(), null_style_.data() + cfg_.style_dim,
                          sv.data() + size_t(n) * cfg_.style_dim);
        if (c) c->has_style = has_style;
        Tensor se = style_l1_.forward(sv, c ? &c->style_l1 : nullptr);
        se = silu.forward(se, c ? &c->style_act : nullptr);
        se = style_l2_.forward(se, c ? &c->style_l2 : nullptr);  // {N,cmid}

        // backbone
        Tensor h = nn::concat_channels(z, layout);
        h = stem_.forward(h, c ? &c->stem : nullptr);
        if (c) {
            c->down.resize(down_.size());
            c->up.resize(up_.size());
            c->skips.clear();
            c->down_hw.clear();
            c->zc = cfg_.latent_channels;
        }
        std::vector<Tensor> skips;
        for (size_t i = 0; i < down_.size(); ++i) {
            h = down_[i].forward(h, ta, c ? &c->down[i] : nullptr);
            skips.push_back(h);
            if (h.dim(2) % 2 || h.dim(3) % 2)
                throw shape_error("StyleUNet: latent dims not divisible by 2^depth");
            if (c) c->down_hw.push_back(h.dim(2));
            h = nn::avgpool2(h);
        }
        h = mid1_.forward(h, ta, c ? &c->mid1 : nullptr);
        nn::add_channel_bias(h, se);
        h = mid2_.forward(h, ta, c ? &c->mid2 : nullptr);
        for (size_t i = 0; i < up_.size(); ++i) {
            h = nn::upsample2(h);
            const Tensor& skip = skips[skips.size() - 1 - i];
            h = nn::concat_channels(h, skip);
            h = up_[i].forward(h, ta, c ? &c->up[i] : nullptr);
        }
        if (c) c->skips = std::move(skips);
        h = out_gn_.forward(h, c ? &c->out_gn : nullptr);
        h = silu.forward(h, c ? &c->out_act : nullptr);
        return out_conv_.forward(h, c ? &c->out_conv : nullptr);
    }

    /// Backward from d(eps); accumulates parameter grads and returns the
    /// gradient wrt the (pre-null-swap) style rows. Rows that used the null
    /// embedding accumulate into the null-style grad and return zeros.
    Tensor backward(const Tensor& deps, Cache& c) {
        nn::SiLU silu;
        int N = deps.dim(0);
        int tdim = cfg_.time_embed_dim;
        Tensor dtemb({N, tdim});
        std::vector<Tensor> skip_grads;  // [k] pairs with c.skips[k]

        Tensor d = out_conv_.backward(deps, c.out_conv);
        d = silu.backward(d, c.out_act);
        d = out_gn_.backward(d, c.out_gn);

        for (int i = static_cast<int>(up_.size()) - 1; i >= 0; --i) {
            d = up_[static_cast<size_t>(i)].backward(d, c.up[static_cast<size_t>(i)], dtemb);
            const Tensor& skip = c.skips[c.skips.size() - 1 - static_cast<size_t>(i)];
            Tensor dup({N, d.dim(1) - skip.dim(1), d.dim(2), d.dim(3)});
            Tensor dskip(skip.shape());
            nn::split_channels(d, dup, dskip);
            skip_grads.push_back(std::move(dskip));
            d = nn::upsample2_backward(dup);
        }

        Tensor dse = Tensor({N, mid2_.cin});
        {
            Tensor dmid = mid2_.backward(d, c.mid2, dtemb);
            dse = nn::channel_bias_backward(dmid);
            d = mid1_.backward(dmid, c.mid1, dtemb);
        }

        for (int i = static_cast<int>(down_.size()) - 1; i >= 0; --i) {
            int hw = c.down_hw[static_cast<size_t>(i)];
            d = nn::avgpool2_backward(d, hw, hw);
            d.add_(skip_grads[static_cast<size_t>(i)]);
            d = down_[static_cast<size_t>(i)].backward(d, c.down[static_cast<size_t>(i)], dtemb);
        }

        d = stem_.backward(d, c.stem);
        // gradient into z / layout is discarded (both are inputs)

        // style MLP
        Tensor ds = style_l2_.backward(dse, c.style_l2);
        ds = silu.backward(ds, c.style_act);
        ds = style_l1_.backward(ds, c.style_l1);
        for (int n = 0; n < N; ++n)
            if (!c.has_style[static_cast<size_t>(n)]) {
                for (int j = 0; j < cfg_.style_dim; ++j)
                    g_null_style_.at(j) += ds.at(n, j);
                for (int j = 0; j < cfg_.style_dim; ++j) ds.at(n, j) = 0.0f;
            }

        // time MLP
        Tensor dt = silu.backward(dtemb, c.temb_act_out);
        dt = temb_l2_.backward(dt, c.temb_l2);
        dt = silu.backward(dt, c.temb_act_mid);
        temb_l1_.backward(dt, c.temb_l1);
        return ds;
    }

    /// Single-sample eval-mode contract used by the DDIM sampler.
    Tensor predict_noise(const Tensor& z, int t, const diffusion::ConditionBundle& cond) const {
        if (z.ndim() != 3 || z.dim(0) != cfg_.latent_channels)
            throw shape_error("predict_noise: bad latent " + z.shape_str());
        if (cond.layout.ndim() != 3 || cond.layout.dim(0) != cfg_.layout_classes ||
            cond.layout.dim(1) != z.dim(1) || cond.layout.dim(2) != z.dim(2))
            throw shape_error("predict_noise: layout grid " + cond.layout.shape_str() +
                              " does not match latent " + z.shape_str());
        Tensor zb({1, z.dim(0), z.dim(1), z.dim(2)});
        std::copy(z.data(), z.data() + z.numel(), zb.data());
        Tensor lb({1, cond.layout.dim(0), cond.layout.dim(1), cond.layout.dim(2)});
        std::copy(cond.layout.data(), cond.layout.data() + cond.layout.numel(), lb.data());
        Tensor sb({1, cfg_.style_dim});
        std::vector<bool> has{false};
        if (cond.style) {
            if (cond.style->ndim() != 1 || cond.style->dim(0) != cfg_.style_dim)
                throw shape_error("predict_noise: style dim mismatch");
            std::copy(cond.style->data(), cond.style->data() + cfg_.style_dim, sb.data());
            has[0] = true;
        }
        Tensor out = forward(zb, {t}, lb, sb, has, nullptr);
        Tensor flat({z.dim(0), z.dim(1), z.dim(2)});
        std::copy(out.data(), out.data() + out.numel(), flat.data());
        return flat;
    }

    diffusion::Denoiser as_denoiser() const {
        return [this](const Tensor& z, int t, const diffusion::ConditionBundle& cond) {
            return predict_noise(z, t, cond);
        };
    }

private:
    void check_inputs(const Tensor& z, const std::vector<int>& timesteps, const Tensor& layout,
                      const Tensor& styles, const std::vector<bool>& has_style) const {
        if (z.ndim() != 4 || z.dim(1) != cfg_.latent_channels)
            throw shape_error("StyleUNet: bad latent batch " + z.shape_str());
        int N = z.dim(0);
        if (layout.ndim() != 4 || layout.dim(0) != N || layout.dim(1) != cfg_.layout_classes ||
            layout.dim(2) != z.dim(2) || layout.dim(3) != z.dim(3))
            throw shape_error("StyleUNet: layout batch " + layout.shape_str() +
                              " does not match latents " + z.shape_str());
        if (static_cast<int>(timesteps.size()) != N || static_cast<int>(has_style.size()) != N)
            throw shape_error("StyleUNet: timestep/style flag count mismatch");
        if (styles.ndim() != 2 || styles.dim(0) != N || styles.dim(1) != cfg_.style_dim)
            throw shape_error("StyleUNet: styles batch " + styles.shape_str());
        for (int t : timesteps)
            if (t < 1 || t > cfg_.max_timestep)
                throw index_error("StyleUNet: timestep out of range");
    }

public:
    void register_params(nn::ParamRegistry& reg) {
        reg.scoped("temb1.", [&] { temb_l1_.register_params(reg); });
        reg.scoped("temb2.", [&] { temb_l2_.register_params(reg); });
        reg.scoped("stem.", [&] { stem_.register_params(reg); });
        for (size_t i = 0; i < down_.size(); ++i)
            reg.scoped("down" + std::to_string(i) + ".", [&] { down_[i].register_params(reg); });
        reg.scoped("mid1.", [&] { mid1_.register_params(reg); });
        reg.scoped("mid2.", [&] { mid2_.register_params(reg); });
        reg.scoped("style1.", [&] { style_l1_.register_params(reg); });
        reg.scoped("style2.", [&] { style_l2_.register_params(reg); });
        reg.add("null_style", &null_style_, &g_null_style_);
        for (size_t i = 0; i < up_.size(); ++i)
            reg.scoped("up" + std::to_string(i) + ".", [&] { up_[i].register_params(reg); });
        reg.scoped("out_gn.", [&] { out_gn_.register_params(reg); });
        reg.scoped("out_conv.", [&] { out_conv_.register_params(reg); });
    }

private:
    DenoiserConfig cfg_;
    nn::Linear temb_l1_, temb_l2_;
    nn::Conv2d stem_;
    std::vector<detail::ResBlock> down_, up_;
    detail::ResBlock mid1_, mid2_;
    nn::Linear style_l1_, style_l2_;
    Tensor null_style_, g_null_style_;
    nn::GroupNorm out_gn_;
    nn::Conv2d out_conv_;
};

/// Builds a seeded denoiser and reports its size.
inline StyleUNet init_denoiser(const DenoiserConfig& cfg, uint64_t seed) {
    return StyleUNet(cfg, seed);
}

}  // namespace stedm::denoiser
