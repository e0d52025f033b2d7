#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gcaru/error.hpp"

namespace gcaru {

// Dense row-major tensor, rank 1..4. Feature maps are (B, C, H, W), conv
// weights (OC, IC/groups, KH, KW), per-channel vectors (C).
template <typename T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int> dims, T fill = T(0)) : dims_(std::move(dims)) {
        GCARU_CHECK(!dims_.empty() && dims_.size() <= 4);
        std::size_t n = 1;
        for (int d : dims_) {
            GCARU_CHECK(d >= 1);
            n *= static_cast<std::size_t>(d);
        }
        data_.assign(n, fill);
    }

    static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims), T(0)); }
    static Tensor full(std::vector<int> dims, T v) { return Tensor(std::move(dims), v); }

    bool empty() const { return data_.empty(); }
    int ndim() const { return static_cast<int>(dims_.size()); }
    int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& dims() const { return dims_; }
    std::size_t numel() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Rank-4 accessor (the hot one); callers on inner loops use raw pointers.
    T& operator()(int b, int c, int h, int w) {
        return data_[idx4(b, c, h, w)];
    }
    const T& operator()(int b, int c, int h, int w) const {
        return data_[idx4(b, c, h, w)];
    }

    std::size_t idx4(int b, int c, int h, int w) const {
        return ((static_cast<std::size_t>(b) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
    }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    // Reinterprets the flat buffer under new dims; element count must match.
    Tensor reshaped(std::vector<int> dims) const {
        Tensor out = *this;
        std::size_t n = 1;
        for (int d : dims) n *= static_cast<std::size_t>(d);
        GCARU_CHECK(n == data_.size());
        out.dims_ = std::move(dims);
        return out;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void add_(const Tensor& o) {
        GCARU_CHECK(same_shape(o));
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    }

    void scale_(T s) {
        for (T& v : data_) v *= s;
    }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(dims_[i]);
        }
        return s + ")";
    }

  private:
    std::vector<int> dims_;
    std::vector<T> data_;
};

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> out = a;
    out.add_(b);
    return out;
}

// Copy [c0, c1) channel slice of a (B, C, H, W) tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
    GCARU_CHECK(x.ndim() == 4 && 0 <= c0 && c0 < c1 && c1 <= x.dim(1));
    const int b_n = x.dim(0), h = x.dim(2), w = x.dim(3);
    Tensor<T> out({b_n, c1 - c0, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int b = 0; b < b_n; ++b) {
        const T* src = x.data() + x.idx4(b, c0, 0, 0);
        T* dst = out.data() + out.idx4(b, 0, 0, 0);
        std::copy(src, src + static_cast<std::size_t>(c1 - c0) * plane, dst);
    }
    return out;
}

template <typename T>
void write_channels(Tensor<T>& dst, const Tensor<T>& src, int c0) {
    GCARU_CHECK(dst.ndim() == 4 && src.ndim() == 4);
    GCARU_CHECK(dst.dim(0) == src.dim(0) && dst.dim(2) == src.dim(2) && dst.dim(3) == src.dim(3));
    GCARU_CHECK(c0 + src.dim(1) <= dst.dim(1));
    const std::size_t plane = static_cast<std::size_t>(src.dim(2)) * src.dim(3);
    for (int b = 0; b < src.dim(0); ++b) {
        const T* s = src.data() + src.idx4(b, 0, 0, 0);
        std::copy(s, s + static_cast<std::size_t>(src.dim(1)) * plane,
                  dst.data() + dst.idx4(b, c0, 0, 0));
    }
}

template <typename T>
void accumulate_channels(Tensor<T>& dst, const Tensor<T>& src, int c0) {
    GCARU_CHECK(c0 + src.dim(1) <= dst.dim(1));
    const std::size_t plane = static_cast<std::size_t>(src.dim(2)) * src.dim(3);
    for (int b = 0; b < src.dim(0); ++b) {
        const T* s = src.data() + src.idx4(b, 0, 0, 0);
        T* d = dst.data() + dst.idx4(b, c0, 0, 0);
        for (std::size_t i = 0; i < static_cast<std::size_t>(src.dim(1)) * plane; ++i)
            d[i] += s[i];
    }
}

}  // namespace gcaru
