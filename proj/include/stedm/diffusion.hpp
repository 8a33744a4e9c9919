#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stedm/errors.hpp"
#include "stedm/rng.hpp"
#include "stedm/schedule.hpp"
#include "stedm/tensor.hpp"

namespace stedm::diffusion {

/// Conditioning fed to the noise estimator: a one-hot layout on the latent
/// grid ({K,h,w}) and an optional style vector ({d}). An absent style is the
/// distinguished unconditional branch, not a zero vector.
struct ConditionBundle {
    Tensor layout;
    std::optional<Tensor> style;

    ConditionBundle without_style() const { return ConditionBundle{layout, std::nullopt}; }

    void validate() const {
        if (layout.ndim() != 3) throw shape_error("ConditionBundle: layout must be {K,h,w}");
        int K = layout.dim(0), h = layout.dim(1), w = layout.dim(2);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                float s = 0;
                for (int k = 0; k < K; ++k) s += layout.at(k, y, x);
                if (std::abs(s - 1.0f) > 1e-5f)
                    throw data_error("ConditionBundle: layout column does not sum to 1");
            }
        if (style && style->ndim() != 1) throw shape_error("ConditionBundle: style must be {d}");
    }
};

/// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
inline Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps,
                              const NoiseSchedule& sched) {
    x0.require_same_shape(eps, "forward_diffuse");
    sched.check_step(t);
    double ab = sched.alpha_bar(t);
    double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out(x0.shape());
    for (size_t i = 0; i < x0.numel(); ++i)
        out[i] = static_cast<float>(a * x0[i] + b * eps[i]);
    return out;
}

/// Mean squared error between predicted and true noise.
inline double diffusion_loss(const Tensor& pred_eps, const Tensor& true_eps) {
    pred_eps.require_same_shape(true_eps, "diffusion_loss");
    if (pred_eps.numel() == 0) throw shape_error("diffusion_loss: empty tensors");
    double acc = 0.0;
    for (size_t i = 0; i < pred_eps.numel(); ++i) {
        double d = double(pred_eps[i]) - double(true_eps[i]);
        acc += d * d;
    }
    return acc / double(pred_eps.numel());
}

/// Classifier-free guidance: eps_u + scale * (eps_c - eps_u).
/// scale 0 and 1 return the inputs exactly.
inline Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double scale) {
    eps_uncond.require_same_shape(eps_cond, "cfg_combine");
    if (scale < 0) throw param_error("cfg_combine: scale must be >= 0");
    if (scale == 0.0) return eps_uncond;
    if (scale == 1.0) return eps_cond;
    Tensor out(eps_uncond.shape());
    for (size_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<float>(double(eps_uncond[i]) +
                                    scale * (double(eps_cond[i]) - double(eps_uncond[i])));
    return out;
}

/// One deterministic DDIM update (eta = 0) from step t to t_prev < t.
/// t_prev = 0 returns the predicted x0 (alpha_bar(0) == 1).
inline Tensor ddim_step(const Tensor& x_t, const Tensor& pred_eps, int t, int t_prev,
                        const NoiseSchedule& sched) {
    x_t.require_same_shape(pred_eps, "ddim_step");
    sched.check_step(t);
    if (t_prev < 0 || t_prev >= t)
        throw index_error("ddim_step: need 0 <= t_prev < t, got t_prev=" + std::to_string(t_prev) +
                          " t=" + std::to_string(t));
    double ab_t = sched.alpha_bar(t);
    double ab_p = sched.alpha_bar(t_prev);
    double sq_ab_t = std::sqrt(ab_t), sq_1m_t = std::sqrt(1.0 - ab_t);
    double sq_ab_p = std::sqrt(ab_p), sq_1m_p = std::sqrt(1.0 - ab_p);
    Tensor out(x_t.shape());
    for (size_t i = 0; i < out.numel(); ++i) {
        double e = pred_eps[i];
        double x0_hat = (double(x_t[i]) - sq_1m_t * e) / sq_ab_t;
        out[i] = static_cast<float>(sq_ab_p * x0_hat + sq_1m_p * e);
    }
    return out;
}

/// Noise estimator contract: (latent, step, condition) -> predicted noise.
using Denoiser = std::function<Tensor(const Tensor&, int, const ConditionBundle&)>;

/// Evenly spaced step subsequence from T down to 0, endpoints included.
inline std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1 || steps > T)
        throw param_error("ddim_timesteps: need 1 <= steps <= T, got steps=" +
                          std::to_string(steps));
    std::vector<int> ts(static_cast<size_t>(steps) + 1);
    for (int i = 0; i <= steps; ++i)
        ts[static_cast<size_t>(i)] = int(std::lround(double(T) * double(i) / double(steps)));
    return ts;  // ts[0] == 0, ts[steps] == T, strictly increasing
}

/// Full DDIM sampler with classifier-free guidance. The denoiser is invoked
/// twice per step: once with the given condition and once with the style
/// stripped. Deterministic given the seed.
inline Tensor ddim_generate(const Denoiser& denoiser, const ConditionBundle& cond,
                            const std::vector<int>& latent_shape, int steps, double scale,
                            uint64_t seed, const NoiseSchedule& sched) {
    auto ts = ddim_timesteps(sched.T, steps);
    Rng rng(seed);
    Tensor x = Tensor::randn(latent_shape, rng);
    ConditionBundle uncond = cond.without_style();
    for (int i = steps; i >= 1; --i) {
        int t = ts[static_cast<size_t>(i)];
        int t_prev = ts[static_cast<size_t>(i - 1)];
        Tensor eps;
        if (cond.style) {
            Tensor eps_c = denoiser(x, t, cond);
            Tensor eps_u = denoiser(x, t, uncond);
            eps = cfg_combine(eps_u, eps_c, scale);
        } else {
            // both branches coincide when the style is already absent
            eps = denoiser(x, t, uncond);
        }
        x = ddim_step(x, eps, t, t_prev, sched);
    }
    return x;
}

}  // namespace stedm::diffusion
