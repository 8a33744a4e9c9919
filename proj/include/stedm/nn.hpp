#pragma once

#include <Eigen/Core>

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stedm/errors.hpp"
#include "stedm/rng.hpp"
#include "stedm/serialize.hpp"
#include "stedm/tensor.hpp"

namespace stedm::nn {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

// ---------------------------------------------------------------------------
// Parameter registry: stable names for the optimizer and checkpoints
// ---------------------------------------------------------------------------

struct ParamRef {
    std::string name;
    Tensor* w;
    Tensor* g;
};

class ParamRegistry {
public:
    void add(const std::string& name, Tensor* w, Tensor* g) {
        refs_.push_back({prefix_ + name, w, g});
    }

    /// Scoped registration: reg.scope("block1.", [&]{ ... });
    template <typename Fn>
    void scoped(const std::string& prefix, Fn&& fn) {
        std::string old = prefix_;
        prefix_ += prefix;
        fn();
        prefix_ = old;
    }

    std::vector<ParamRef>& refs() { return refs_; }
    const std::vector<ParamRef>& refs() const { return refs_; }

    size_t param_count() const {
        size_t n = 0;
        for (const auto& r : refs_) n += r.w->numel();
        return n;
    }

    void zero_grads() {
        for (auto& r : refs_) r.g->fill(0.0f);
    }

    void save(const std::string& path) const {
        std::vector<std::pair<std::string, const Tensor*>> arrays;
        arrays.reserve(refs_.size());
        for (const auto& r : refs_) arrays.emplace_back(r.name, r.w);
        save_arrays(path, arrays);
    }

    void load(const std::string& path) {
        auto arrays = load_arrays(path);
        for (auto& r : refs_) {
            auto it = arrays.find(r.name);
            if (it == arrays.end())
                throw data_error("checkpoint: missing array '" + r.name + "' in " + path);
            if (it->second.shape() != r.w->shape())
                throw data_error("checkpoint: shape mismatch for '" + r.name + "' in " + path);
            *r.w = it->second;
        }
    }

private:
    std::string prefix_;
    std::vector<ParamRef> refs_;
};

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

inline void he_init(Tensor& w, int fan_in, Rng& rng, double scale = 1.0) {
    double std = scale * std::sqrt(2.0 / double(fan_in));
    for (size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<float>(rng.gaussian() * std);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

struct Linear {
    int in = 0, out = 0;
    Tensor w, b, gw, gb;

    Linear() = default;
    Linear(int in_, int out_) : in(in_), out(out_), w({out_, in_}), b({out_}),
                                gw({out_, in_}), gb({out_}) {}

    void init(Rng& rng, double scale = 1.0) { he_init(w, in, rng, scale); b.fill(0.0f); }

    void register_params(ParamRegistry& reg) {
        reg.add("w", &w, &gw);
        reg.add("b", &b, &gb);
    }

    struct Cache {
        Tensor x;
    };

    /// x {N,in} -> {N,out}
    Tensor forward(const Tensor& x, Cache* cache) const {
        if (x.ndim() != 2 || x.dim(1) != in) throw shape_error("Linear: bad input " + x.shape_str());
        int N = x.dim(0);
        Tensor y({N, out});
        ECMap xm(x.data(), N, in);
        ECMap wm(w.data(), out, in);
        EMap ym(y.data(), N, out);
        ym.noalias() = xm * wm.transpose();
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < out; ++o) y.at(n, o) += b.at(o);
        if (cache) cache->x = x;
        return y;
    }

    Tensor backward(const Tensor& dy, const Cache& cache) {
        int N = dy.dim(0);
        ECMap dym(dy.data(), N, out);
        ECMap xm(cache.x.data(), N, in);
        EMap gwm(gw.data(), out, in);
        gwm.noalias() += dym.transpose() * xm;
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < out; ++o) gb.at(o) += dy.at(n, o);
        Tensor dx({N, in});
        EMap dxm(dx.data(), N, in);
        ECMap wm(w.data(), out, in);
        dxm.noalias() = dym * wm;
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Conv2d (stride 1, same padding, square kernel) via im2col + GEMM
// ---------------------------------------------------------------------------

struct Conv2d {
    int cin = 0, cout = 0, k = 3, pad = 1;
    Tensor w, b, gw, gb;  // w {cout, cin*k*k}

    Conv2d() = default;
    Conv2d(int cin_, int cout_, int k_ = 3)
        : cin(cin_), cout(cout_), k(k_), pad(k_ / 2),
          w({cout_, cin_ * k_ * k_}), b({cout_}),
          gw({cout_, cin_ * k_ * k_}), gb({cout_}) {}

    void init(Rng& rng, double scale = 1.0) { he_init(w, cin * k * k, rng, scale); b.fill(0.0f); }

    void register_params(ParamRegistry& reg) {
        reg.add("w", &w, &gw);
        reg.add("b", &b, &gb);
    }

    struct Cache {
        Tensor x;
    };

    void im2col(const float* x, int H, int W, float* cols) const {
        // cols: {cin*k*k, H*W}
        int HW = H * W;
        for (int c = 0; c < cin; ++c) {
            const float* xc = x + size_t(c) * HW;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    float* row = cols + size_t((c * k + ky) * k + kx) * HW;
                    int sy = ky - pad, sx = kx - pad;
                    for (int y = 0; y < H; ++y) {
                        int yy = y + sy;
                        float* out = row + size_t(y) * W;
                        if (yy < 0 || yy >= H) {
                            std::fill(out, out + W, 0.0f);
                            continue;
                        }
                        const float* src = xc + size_t(yy) * W;
                        int x0 = std::max(0, -sx);
                        int x1 = std::min(W, W - sx);
                        if (x0 > 0) std::fill(out, out + x0, 0.0f);
                        if (x1 > x0) std::copy(src + x0 + sx, src + x1 + sx, out + x0);
                        if (x1 < W) std::fill(out + x1, out + W, 0.0f);
                    }
                }
        }
    }

    void col2im_add(const float* cols, int H, int W, float* dx) const {
        int HW = H * W;
        for (int c = 0; c < cin; ++c) {
            float* xc = dx + size_t(c) * HW;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const float* row = cols + size_t((c * k + ky) * k + kx) * HW;
                    int sy = ky - pad, sx = kx - pad;
                    for (int y = 0; y < H; ++y) {
                        int yy = y + sy;
                        if (yy < 0 || yy >= H) continue;
                        float* dst = xc + size_t(yy) * W;
                        const float* src = row + size_t(y) * W;
                        int x0 = std::max(0, -sx);
                        int x1 = std::min(W, W - sx);
                        for (int x = x0; x < x1; ++x) dst[x + sx] += src[x];
                    }
                }
        }
    }

    /// x {N,cin,H,W} -> {N,cout,H,W}
    Tensor forward(const Tensor& x, Cache* cache) const {
        if (x.ndim() != 4 || x.dim(1) != cin) throw shape_error("Conv2d: bad input " + x.shape_str());
        int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        int HW = H * W, ck = cin * k * k;
        Tensor y({N, cout, H, W});
        std::vector<float> cols(size_t(ck) * HW);
        ECMap wm(w.data(), cout, ck);
        for (int n = 0; n < N; ++n) {
            im2col(x.data() + size_t(n) * cin * HW, H, W, cols.data());
            ECMap cm(cols.data(), ck, HW);
            EMap ym(y.data() + size_t(n) * cout * HW, cout, HW);
            ym.noalias() = wm * cm;
            for (int o = 0; o < cout; ++o)
                ym.row(o).array() += b.at(o);
        }
        if (cache) cache->x = x;
        return y;
    }

    Tensor backward(const Tensor& dy, const Cache& cache) {
        const Tensor& x = cache.x;
        int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        int HW = H * W, ck = cin * k * k;
        Tensor dx({N, cin, H, W});
        std::vector<float> cols(size_t(ck) * HW);
        std::vector<float> dcols(size_t(ck) * HW);
        ECMap wm(w.data(), cout, ck);
        EMap gwm(gw.data(), cout, ck);
        for (int n = 0; n < N; ++n) {
            ECMap dym(dy.data() + size_t(n) * cout * HW, cout, HW);
            // weight/bias grads (im2col recomputed to save memory)
            im2col(x.data() + size_t(n) * cin * HW, H, W, cols.data());
            ECMap cm(cols.data(), ck, HW);
            gwm.noalias() += dym * cm.transpose();
            for (int o = 0; o < cout; ++o) gb.at(o) += dym.row(o).sum();
            // input grad
            EMap dcm(dcols.data(), ck, HW);
            dcm.noalias() = wm.transpose() * dym;
            col2im_add(dcols.data(), H, W, dx.data() + size_t(n) * cin * HW);
        }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// GroupNorm
// ---------------------------------------------------------------------------

struct GroupNorm {
    int C = 0, G = 1;
    float eps = 1e-5f;
    Tensor gamma, beta, ggamma, gbeta;

    GroupNorm() = default;
    GroupNorm(int C_, int G_) : C(C_), G(G_), gamma({C_}), beta({C_}),
                                ggamma({C_}), gbeta({C_}) {
        if (C_ % G_ != 0) throw param_error("GroupNorm: C must be divisible by G");
        gamma.fill(1.0f);
    }

    void register_params(ParamRegistry& reg) {
        reg.add("gamma", &gamma, &ggamma);
        reg.add("beta", &beta, &gbeta);
    }

    struct Cache {
        Tensor xhat;            // {N,C,H,W}
        std::vector<float> invstd;  // N*G
    };

    Tensor forward(const Tensor& x, Cache* cache) const {
        if (x.ndim() != 4 || x.dim(1) != C) throw shape_error("GroupNorm: bad input " + x.shape_str());
        int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        int cg = C / G, m = cg * H * W;
        Tensor y(x.shape());
        Tensor xhat_local;
        Tensor* xhat = cache ? &cache->xhat : &xhat_local;
        *xhat = Tensor(x.shape());
        if (cache) cache->invstd.assign(size_t(N) * G, 0.0f);
        for (int n = 0; n < N; ++n)
            for (int g = 0; g < G; ++g) {
                const float* xp = x.data() + (size_t(n) * C + size_t(g) * cg) * H * W;
                double mean = 0;
                for (int i = 0; i < m; ++i) mean += xp[i];
                mean /= m;
                double var = 0;
                for (int i = 0; i < m; ++i) {
                    double d = xp[i] - mean;
                    var += d * d;
                }
                var /= m;
                float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
                if (cache) cache->invstd[size_t(n) * G + g] = inv;
                float* xh = xhat->data() + (size_t(n) * C + size_t(g) * cg) * H * W;
                float* yp = y.data() + (size_t(n) * C + size_t(g) * cg) * H * W;
                for (int c = 0; c < cg; ++c) {
                    float ga = gamma.at(g * cg + c), be = beta.at(g * cg + c);
                    for (int i = 0; i < H * W; ++i) {
                        size_t idx = size_t(c) * H * W + i;
                        float h = static_cast<float>((xp[idx] - mean) * inv);
                        xh[idx] = h;
                        yp[idx] = ga * h + be;
                    }
                }
            }
        return y;
    }

    Tensor backward(const Tensor& dy, const Cache& cache) {
        int N = dy.dim(0), H = dy.dim(2), W = dy.dim(3);
        int cg = C / G, m = cg * H * W;
        Tensor dx(dy.shape());
        for (int n = 0; n < N; ++n)
            for (int g = 0; g < G; ++g) {
                const float* dyp = dy.data() + (size_t(n) * C + size_t(g) * cg) * H * W;
                const float* xh = cache.xhat.data() + (size_t(n) * C + size_t(g) * cg) * H * W;
                float inv = cache.invstd[size_t(n) * G + g];
                // accumulate per-channel param grads + group sums
                double sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (int c = 0; c < cg; ++c) {
                    float ga = gamma.at(g * cg + c);
                    double s_dy = 0, s_dy_xh = 0;
                    for (int i = 0; i < H * W; ++i) {
                        size_t idx = size_t(c) * H * W + i;
                        double d = dyp[idx];
                        s_dy += d;
                        s_dy_xh += d * xh[idx];
                        double dxh = d * ga;
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh[idx];
                    }
                    gbeta.at(g * cg + c) += static_cast<float>(s_dy);
                    ggamma.at(g * cg + c) += static_cast<float>(s_dy_xh);
                }
                float* dxp = dx.data() + (size_t(n) * C + size_t(g) * cg) * H * W;
                double k1 = sum_dxhat / m, k2 = sum_dxhat_xhat / m;
                for (int c = 0; c < cg; ++c) {
                    float ga = gamma.at(g * cg + c);
                    for (int i = 0; i < H * W; ++i) {
                        size_t idx = size_t(c) * H * W + i;
                        double dxh = double(dyp[idx]) * ga;
                        dxp[idx] = static_cast<float>(inv * (dxh - k1 - double(xh[idx]) * k2));
                    }
                }
            }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Activations and resampling
// ---------------------------------------------------------------------------

struct SiLU {
    struct Cache {
        Tensor x;
    };

    Tensor forward(const Tensor& x, Cache* cache) const {
        Tensor y(x.shape());
        for (size_t i = 0; i < x.numel(); ++i) {
            float s = 1.0f / (1.0f + std::exp(-x[i]));
            y[i] = x[i] * s;
        }
        if (cache) cache->x = x;
        return y;
    }

    Tensor backward(const Tensor& dy, const Cache& cache) const {
        Tensor dx(dy.shape());
        for (size_t i = 0; i < dy.numel(); ++i) {
            float s = 1.0f / (1.0f + std::exp(-cache.x[i]));
            dx[i] = dy[i] * s * (1.0f + cache.x[i] * (1.0f - s));
        }
        return dx;
    }
};

struct ReLU {
    struct Cache {
        Tensor x;
    };

    Tensor forward(const Tensor& x, Cache* cache) const {
        Tensor y(x.shape());
        for (size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0 ? x[i] : 0.0f;
        if (cache) cache->x = x;
        return y;
    }

    Tensor backward(const Tensor& dy, const Cache& cache) const {
        Tensor dx(dy.shape());
        for (size_t i = 0; i < dy.numel(); ++i) dx[i] = cache.x[i] > 0 ? dy[i] : 0.0f;
        return dx;
    }
};

/// 2x2 average pooling. {N,C,H,W} -> {N,C,H/2,W/2}
inline Tensor avgpool2(const Tensor& x) {
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 || W % 2) throw shape_error("avgpool2: odd spatial dims " + x.shape_str());
    Tensor y({N, C, H / 2, W / 2});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int yy = 0; yy < H / 2; ++yy)
                for (int xx = 0; xx < W / 2; ++xx)
                    y.at(n, c, yy, xx) = 0.25f * (x.at(n, c, 2 * yy, 2 * xx) +
                                                  x.at(n, c, 2 * yy, 2 * xx + 1) +
                                                  x.at(n, c, 2 * yy + 1, 2 * xx) +
                                                  x.at(n, c, 2 * yy + 1, 2 * xx + 1));
    return y;
}

inline Tensor avgpool2_backward(const Tensor& dy, int H, int W) {
    int N = dy.dim(0), C = dy.dim(1);
    Tensor dx({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int yy = 0; yy < H / 2; ++yy)
                for (int xx = 0; xx < W / 2; ++xx) {
                    float v = 0.25f * dy.at(n, c, yy, xx);
                    dx.at(n, c, 2 * yy, 2 * xx) = v;
                    dx.at(n, c, 2 * yy, 2 * xx + 1) = v;
                    dx.at(n, c, 2 * yy + 1, 2 * xx) = v;
                    dx.at(n, c, 2 * yy + 1, 2 * xx + 1) = v;
                }
    return dx;
}

/// Nearest-neighbor 2x upsampling.
inline Tensor upsample2(const Tensor& x) {
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y({N, C, H * 2, W * 2});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int yy = 0; yy < 2 * H; ++yy)
                for (int xx = 0; xx < 2 * W; ++xx)
                    y.at(n, c, yy, xx) = x.at(n, c, yy / 2, xx / 2);
    return y;
}

inline Tensor upsample2_backward(const Tensor& dy) {
    int N = dy.dim(0), C = dy.dim(1), H = dy.dim(2) / 2, W = dy.dim(3) / 2;
    Tensor dx({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int yy = 0; yy < 2 * H; ++yy)
                for (int xx = 0; xx < 2 * W; ++xx)
                    dx.at(n, c, yy / 2, xx / 2) += dy.at(n, c, yy, xx);
    return dx;
}

/// Global average pooling. {N,C,H,W} -> {N,C}
inline Tensor global_avgpool(const Tensor& x) {
    int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor y({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* p = x.data() + (size_t(n) * C + c) * HW;
            double s = 0;
            for (int i = 0; i < HW; ++i) s += p[i];
            y.at(n, c) = static_cast<float>(s / HW);
        }
    return y;
}

inline Tensor global_avgpool_backward(const Tensor& dy, int H, int W) {
    int N = dy.dim(0), C = dy.dim(1);
    Tensor dx({N, C, H, W});
    float inv = 1.0f / float(H * W);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            float v = dy.at(n, c) * inv;
            float* p = dx.data() + (size_t(n) * C + c) * size_t(H) * W;
            for (int i = 0; i < H * W; ++i) p[i] = v;
        }
    return dx;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw shape_error("concat_channels: " + a.shape_str() + " vs " + b.shape_str());
    int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    Tensor y({N, Ca + Cb, H, W});
    size_t hw = size_t(H) * W;
    for (int n = 0; n < N; ++n) {
        std::copy(a.data() + size_t(n) * Ca * hw, a.data() + size_t(n + 1) * Ca * hw,
                  y.data() + size_t(n) * (Ca + Cb) * hw);
        std::copy(b.data() + size_t(n) * Cb * hw, b.data() + size_t(n + 1) * Cb * hw,
                  y.data() + (size_t(n) * (Ca + Cb) + Ca) * hw);
    }
    return y;
}

inline void split_channels(const Tensor& dy, Tensor& da, Tensor& db) {
    int N = dy.dim(0), Ca = da.dim(1), Cb = db.dim(1), H = dy.dim(2), W = dy.dim(3);
    size_t hw = size_t(H) * W;
    for (int n = 0; n < N; ++n) {
        std::copy(dy.data() + size_t(n) * (Ca + Cb) * hw,
                  dy.data() + (size_t(n) * (Ca + Cb) + Ca) * hw, da.data() + size_t(n) * Ca * hw);
        std::copy(dy.data() + (size_t(n) * (Ca + Cb) + Ca) * hw,
                  dy.data() + size_t(n + 1) * (Ca + Cb) * hw, db.data() + size_t(n) * Cb * hw);
    }
}

/// Adds a per-channel bias vector {N,C} onto a {N,C,H,W} map.
inline void add_channel_bias(Tensor& x, const Tensor& bias) {
    int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            float v = bias.at(n, c);
            float* p = x.data() + (size_t(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) p[i] += v;
        }
}

inline Tensor channel_bias_backward(const Tensor& dy) {
    int N = dy.dim(0), C = dy.dim(1), HW = dy.dim(2) * dy.dim(3);
    Tensor g({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* p = dy.data() + (size_t(n) * C + c) * HW;
            double s = 0;
            for (int i = 0; i < HW; ++i) s += p[i];
            g.at(n, c) = static_cast<float>(s);
        }
    return g;
}

// ---------------------------------------------------------------------------
// Timestep embedding
// ---------------------------------------------------------------------------

/// Sinusoidal embedding of an integer timestep, DDPM convention.
inline Tensor sinusoidal_embedding(int t, int dim) {
    Tensor e({dim});
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        e.at(i) = static_cast<float>(std::sin(t * freq));
        e.at(half + i) = static_cast<float>(std::cos(t * freq));
    }
    return e;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

class Adam {
public:
    explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(ParamRegistry& reg) {
        if (m_.empty()) {
            for (auto& r : reg.refs()) {
                m_.emplace_back(r.w->shape());
                v_.emplace_back(r.w->shape());
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(b1_, t_);
        double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t p = 0; p < reg.refs().size(); ++p) {
            auto& r = reg.refs()[p];
            Tensor& m = m_[p];
            Tensor& v = v_[p];
            for (size_t i = 0; i < r.w->numel(); ++i) {
                double g = (*r.g)[i];
                double mi = b1_ * m[i] + (1.0 - b1_) * g;
                double vi = b2_ * v[i] + (1.0 - b2_) * g * g;
                m[i] = static_cast<float>(mi);
                v[i] = static_cast<float>(vi);
                (*r.w)[i] -= static_cast<float>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
            }
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace stedm::nn
