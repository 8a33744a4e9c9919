#pragma once

#include <algorithm>

#include <string>
#include <vector>

#include "stedm/errors.hpp"
#include "stedm/nn.hpp"
#include "stedm/rng.hpp"
#include "stedm/tensor.hpp"

namespace stedm::style {

/// 1..n style query images plus the classifier-free-guidance drop flag.
struct StyleQuerySet {
    std::vector<Tensor> images;  // CHW, shared dims
    bool dropped = false;

    void validate() const {
        if (dropped) return;
        if (images.empty()) throw data_error("StyleQuerySet: empty but not dropped");
        for (const auto& im : images)
            if (!im.same_shape(images.front()))
                throw shape_error("StyleQuerySet: images must share dimensions");
    }
};

/// Marks each element of a batch as dropped with probability p_drop.
/// Dropped sets produce the ABSENT style downstream.
inline std::vector<StyleQuerySet> apply_style_drop(std::vector<StyleQuerySet> batch,
                                                   double p_drop, uint64_t seed) {
    if (p_drop < 0.0 || p_drop > 1.0) throw param_error("apply_style_drop: p_drop outside [0,1]");
    Rng rng(seed);
    for (auto& q : batch) q.dropped = rng.bernoulli(p_drop);
    return batch;
}

// ---------------------------------------------------------------------------
// Style encoder: small conv net, global average pooling to a d-vector.
// Consumes pixels only; no layout input exists on this path.
// ---------------------------------------------------------------------------

struct StyleEncoderConfig {
    int in_channels = 3;
    int image_size = 32;   // encoder is size-checked at use
    int width = 16;        // first conv width; doubles per stage
    int stages = 3;        // conv stages, pooling between
    int style_dim = 128;
};

class StyleEncoder {
public:
    StyleEncoder() = default;

    StyleEncoder(const StyleEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        int c = cfg.in_channels;
        for (int s = 0; s < cfg.stages; ++s) {
            int w = cfg.width << s;
            convs_.emplace_back(c, w, 3);
            convs_.back().init(rng);
            norms_.emplace_back(w, gn_groups(w));
            c = w;
        }
        proj_ = nn::Linear(c, cfg.style_dim);
        proj_.init(rng);
    }

    const StyleEncoderConfig& config() const { return cfg_; }

    void register_params(nn::ParamRegistry& reg) {
        for (size_t s = 0; s < convs_.size(); ++s) {
            reg.scoped("conv" + std::to_string(s) + ".", [&] { convs_[s].register_params(reg); });
            reg.scoped("norm" + std::to_string(s) + ".", [&] { norms_[s].register_params(reg); });
        }
        reg.scoped("proj.", [&] { proj_.register_params(reg); });
    }

    struct Cache {
        std::vector<nn::Conv2d::Cache> conv;
        std::vector<nn::GroupNorm::Cache> norm;
        std::vector<nn::SiLU::Cache> act;
        std::vector<int> hw;  // spatial size entering each pool
        nn::Linear::Cache proj;
        int last_h = 0, last_w = 0;
    };

    /// images {N,C,H,W} -> style vectors {N,d}
    Tensor forward(const Tensor& images, Cache* cache) const {
        if (images.ndim() != 4 || images.dim(1) != cfg_.in_channels)
            throw shape_error("StyleEncoder: bad input " + images.shape_str());
        if (cache) {
            cache->conv.resize(convs_.size());
            cache->norm.resize(convs_.size());
            cache->act.resize(convs_.size());
            cache->hw.clear();
        }
        Tensor h = images;
        for (size_t s = 0; s < convs_.size(); ++s) {
            h = convs_[s].forward(h, cache ? &cache->conv[s] : nullptr);
            h = norms_[s].forward(h, cache ? &cache->norm[s] : nullptr);
            h = act_.forward(h, cache ? &cache->act[s] : nullptr);
            if (s + 1 < convs_.size()) {
                if (h.dim(2) % 2 || h.dim(3) % 2)
                    throw shape_error("StyleEncoder: input dims not divisible for pooling");
                if (cache) cache->hw.push_back(h.dim(2));
                h = nn::avgpool2(h);
            }
        }
        if (cache) {
            cache->last_h = h.dim(2);
            cache->last_w = h.dim(3);
        }
        Tensor pooled = nn::global_avgpool(h);
        return proj_.forward(pooled, cache ? &cache->proj : nullptr);
    }

    /// Accumulates parameter grads; image grads are not needed (leaves).
    void backward(const Tensor& dstyle, Cache& cache) {
        Tensor d = proj_.backward(dstyle, cache.proj);
        Tensor dh = nn::global_avgpool_backward(d, cache.last_h, cache.last_w);
        for (int s = static_cast<int>(convs_.size()) - 1; s >= 0; --s) {
            if (s + 1 < static_cast<int>(convs_.size())) {
                int hw = cache.hw[static_cast<size_t>(s)];
                dh = nn::avgpool2_backward(dh, hw, hw);
            }
            dh = act_.backward(dh, cache.act[static_cast<size_t>(s)]);
            dh = norms_[static_cast<size_t>(s)].backward(dh, cache.norm[static_cast<size_t>(s)]);
            dh = convs_[static_cast<size_t>(s)].backward(dh, cache.conv[static_cast<size_t>(s)]);
        }
    }

    static int gn_groups(int c) {
        for (int g : {8, 4, 2, 1})
            if (c % g == 0) return g;
        return 1;
    }

private:
    StyleEncoderConfig cfg_;
    std::vector<nn::Conv2d> convs_;
    std::vector<nn::GroupNorm> norms_;
    nn::SiLU act_;
    nn::Linear proj_;
};

/// Extracts the style vector of a single image (eval mode, deterministic).
inline Tensor extract_style(const Tensor& image, const StyleEncoder& enc) {
    if (image.ndim() != 3) throw shape_error("extract_style: want CHW image");
    Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
    std::copy(image.data(), image.data() + image.numel(), batch.data());
    Tensor v = enc.forward(batch, nullptr);
    Tensor out({v.dim(1)});
    std::copy(v.data(), v.data() + v.numel(), out.data());
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation block: two linear layers with a ReLU, over the mean of the
// per-image style vectors (mean first keeps exact permutation invariance).
// ---------------------------------------------------------------------------

enum class AggOrder { mean_then_mlp, mlp_then_mean };

inline AggOrder agg_order_from_string(const std::string& s) {
    if (s == "mean_then_mlp") return AggOrder::mean_then_mlp;
    if (s == "mlp_then_mean") return AggOrder::mlp_then_mean;
    throw param_error("unknown agg_order: " + s);
}

class Aggregator {
public:
    Aggregator() = default;

    Aggregator(int style_dim, Rng& rng, AggOrder order = AggOrder::mean_then_mlp)
        : d_(style_dim), order_(order), l1_(style_dim, style_dim), l2_(style_dim, style_dim) {
        l1_.init(rng);
        l2_.init(rng);
    }

    int style_dim() const { return d_; }
    AggOrder order() const { return order_; }

    void register_params(nn::ParamRegistry& reg) {
        reg.scoped("l1.", [&] { l1_.register_params(reg); });
        reg.scoped("l2.", [&] { l2_.register_params(reg); });
    }

    struct Cache {
        int n = 0;
        nn::Linear::Cache l1;
        nn::ReLU::Cache relu;
        nn::Linear::Cache l2;
    };

    /// vectors {n,d} -> {1,d}
    Tensor forward(const Tensor& vectors, Cache* cache) const {
        if (vectors.ndim() != 2 || vectors.dim(1) != d_)
            throw shape_error("Aggregator: want {n,d} vectors, got " + vectors.shape_str());
        int n = vectors.dim(0);
        if (n < 1) throw shape_error("Aggregator: need at least one vector");
        if (cache) cache->n = n;
        if (order_ == AggOrder::mean_then_mlp) {
            return mlp(column_mean(vectors), cache);
        }
        Tensor per = mlp(vectors, cache);
        return column_mean(per);
    }

    /// dout {1,d} -> gradient for each input vector {n,d}
    Tensor backward(const Tensor& dout, Cache& cache) {
        int n = cache.n;
        if (order_ == AggOrder::mean_then_mlp) {
            Tensor dmean = mlp_backward(dout, cache);
            Tensor dvec({n, d_});
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d_; ++j) dvec.at(i, j) = dmean.at(0, j) / float(n);
            return dvec;
        }
        Tensor dper({n, d_});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d_; ++j) dper.at(i, j) = dout.at(0, j) / float(n);
        return mlp_backward(dper, cache);
    }

private:
    /// Mean over rows with per-column sorted summation, so the result is
    /// bitwise independent of the input order.
    Tensor column_mean(const Tensor& rows) const {
        int n = rows.dim(0);
        Tensor mean({1, d_});
        std::vector<float> col(static_cast<size_t>(n));
        for (int j = 0; j < d_; ++j) {
            for (int i = 0; i < n; ++i) col[static_cast<size_t>(i)] = rows.at(i, j);
            std::sort(col.begin(), col.end());
            double acc = 0.0;
            for (float v : col) acc += v;
            mean.at(0, j) = static_cast<float>(acc / n);
        }
        return mean;
    }

    Tensor mlp(const Tensor& x, Cache* cache) const {
        Tensor h = l1_.forward(x, cache ? &cache->l1 : nullptr);
        h = relu_.forward(h, cache ? &cache->relu : nullptr);
        return l2_.forward(h, cache ? &cache->l2 : nullptr);
    }

    Tensor mlp_backward(const Tensor& dy, Cache& cache) {
        Tensor d = l2_.backward(dy, cache.l2);
        d = relu_.backward(d, cache.relu);
        return l1_.backward(d, cache.l1);
    }

    int d_ = 0;
    AggOrder order_ = AggOrder::mean_then_mlp;
    nn::Linear l1_, l2_;
    nn::ReLU relu_;
};

/// Aggregates a list of per-image style vectors into one (eval mode).
inline Tensor aggregate(const std::vector<Tensor>& vectors, const Aggregator& agg) {
    if (vectors.empty()) throw shape_error("aggregate: need at least one vector");
    int d = vectors.front().dim(0);
    for (const auto& v : vectors)
        if (v.ndim() != 1 || v.dim(0) != d) throw shape_error("aggregate: mixed vector lengths");
    Tensor stack({static_cast<int>(vectors.size()), d});
    for (size_t i = 0; i < vectors.size(); ++i)
        std::copy(vectors[i].data(), vectors[i].data() + d, stack.data() + i * size_t(d));
    Tensor out = agg.forward(stack, nullptr);
    Tensor flat({d});
    std::copy(out.data(), out.data() + d, flat.data());
    return flat;
}

}  // namespace stedm::style
