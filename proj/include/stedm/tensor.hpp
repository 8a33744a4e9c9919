#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "stedm/errors.hpp"
#include "stedm/rng.hpp"

namespace stedm {

/// Dense float32 tensor, row-major, up to 4 dims. Plain value type:
/// copyable, no views, no lazy evaluation. Layout convention for images and
/// latents is {C, H, W}; batches prepend N.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        v_.assign(count(shape_), 0.0f);
    }
    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, float value) {
        Tensor t(std::move(shape));
        std::fill(t.v_.begin(), t.v_.end(), value);
        return t;
    }

    static Tensor randn(std::vector<int> shape, Rng& rng) {
        Tensor t(std::move(shape));
        for (auto& x : t.v_) x = static_cast<float>(rng.gaussian());
        return t;
    }

    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    size_t numel() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    float* data() { return v_.data(); }
    const float* data() const { return v_.data(); }

    float& operator[](size_t i) { return v_[i]; }
    float operator[](size_t i) const { return v_[i]; }

    float& at(int a) { return v_[static_cast<size_t>(a)]; }
    float at(int a) const { return v_[static_cast<size_t>(a)]; }
    float& at(int a, int b) { return v_[static_cast<size_t>(a) * shape_[1] + b]; }
    float at(int a, int b) const { return v_[static_cast<size_t>(a) * shape_[1] + b]; }
    float& at(int a, int b, int c) {
        return v_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    float at(int a, int b, int c) const {
        return v_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    float& at(int a, int b, int c, int d) {
        return v_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    float at(int a, int b, int c, int d) const {
        return v_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(float value) { std::fill(v_.begin(), v_.end(), value); }

    void add_(const Tensor& o, float scale = 1.0f) {
        require_same_shape(o, "Tensor::add_");
        for (size_t i = 0; i < v_.size(); ++i) v_[i] += scale * o.v_[i];
    }

    void scale_(float s) {
        for (auto& x : v_) x *= s;
    }

    double sum() const {
        double acc = 0.0;
        for (float x : v_) acc += x;
        return acc;
    }

    float max_abs() const {
        float m = 0.0f;
        for (float x : v_) m = std::max(m, std::abs(x));
        return m;
    }

    void require_same_shape(const Tensor& o, const char* where) const {
        if (!same_shape(o))
            throw shape_error(std::string(where) + ": shape mismatch " + shape_str() +
                              " vs " + o.shape_str());
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
        os << "]";
        return os.str();
    }

private:
    static size_t count(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw shape_error("Tensor: negative dimension");
            n *= static_cast<size_t>(d);
        }
        return shape.empty() ? 0 : n;
    }

    std::vector<int> shape_;
    std::vector<float> v_;
};

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    a.require_same_shape(b, "max_abs_diff");
    float m = 0.0f;
    for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace stedm
