#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "gcaru/error.hpp"
#include "gcaru/tensor.hpp"

// Primitive differentiable layers. Every forward here has a matching
// *_backward; tests compare both against naive loop oracles and central
// finite differences.
namespace gcaru {

enum class Mode { kTrain, kEval };

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding, grouped)
// ---------------------------------------------------------------------------

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kh = 1, kw = 1;
    int stride = 1;
    int padding = 0;
    int groups = 1;
    bool bias_enabled = false;

    int out_h(int h) const { return (h + 2 * padding - kh) / stride + 1; }
    int out_w(int w) const { return (w + 2 * padding - kw) / stride + 1; }

    void validate() const {
        if (stride < 1 || padding < 0 || kh < 1 || kw < 1 || groups < 1 ||
            in_channels % groups != 0 || out_channels % groups != 0)
            throw ShapeError("conv2d: invalid spec (stride/padding/kernel/group mismatch)");
    }
};

inline ConvSpec conv_spec(int in_ch, int out_ch, int k, int stride, int padding,
                          bool bias = false, int groups = 1) {
    return ConvSpec{in_ch, out_ch, k, k, stride, padding, groups, bias};
}

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

// Unpacks the receptive fields of one sample / one group into a
// (ICg*kh*kw) x (OH*OW) matrix, zero-filling out-of-bounds taps.
template <typename T>
void im2col(const Tensor<T>& x, int b, int c0, int c_n, const ConvSpec& s,
            int oh_n, int ow_n, T* col) {
    const int h = x.dim(2), w = x.dim(3);
    const std::size_t p_n = static_cast<std::size_t>(oh_n) * ow_n;
    for (int c = 0; c < c_n; ++c) {
        const T* plane = x.data() + x.idx4(b, c0 + c, 0, 0);
        for (int ki = 0; ki < s.kh; ++ki) {
            for (int kj = 0; kj < s.kw; ++kj) {
                T* row = col + (static_cast<std::size_t>(c) * s.kh * s.kw + ki * s.kw + kj) * p_n;
                for (int oh = 0; oh < oh_n; ++oh) {
                    const int ih = oh * s.stride - s.padding + ki;
                    T* out = row + static_cast<std::size_t>(oh) * ow_n;
                    if (ih < 0 || ih >= h) {
                        std::fill(out, out + ow_n, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(ih) * w;
                    for (int ow = 0; ow < ow_n; ++ow) {
                        const int iw = ow * s.stride - s.padding + kj;
                        out[ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add transpose of im2col.
template <typename T>
void col2im(const T* col, int b, int c0, int c_n, const ConvSpec& s,
            int oh_n, int ow_n, Tensor<T>& gx) {
    const int h = gx.dim(2), w = gx.dim(3);
    const std::size_t p_n = static_cast<std::size_t>(oh_n) * ow_n;
    for (int c = 0; c < c_n; ++c) {
        T* plane = gx.data() + gx.idx4(b, c0 + c, 0, 0);
        for (int ki = 0; ki < s.kh; ++ki) {
            for (int kj = 0; kj < s.kw; ++kj) {
                const T* row = col + (static_cast<std::size_t>(c) * s.kh * s.kw + ki * s.kw + kj) * p_n;
                for (int oh = 0; oh < oh_n; ++oh) {
                    const int ih = oh * s.stride - s.padding + ki;
                    if (ih < 0 || ih >= h) continue;
                    T* dst = plane + static_cast<std::size_t>(ih) * w;
                    const T* src = row + static_cast<std::size_t>(oh) * ow_n;
                    for (int ow = 0; ow < ow_n; ++ow) {
                        const int iw = ow * s.stride - s.padding + kj;
                        if (iw >= 0 && iw < w) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>* bias = nullptr) {
    spec.validate();
    if (x.ndim() != 4 || x.dim(1) != spec.in_channels)
        throw ShapeError("conv2d: input channels " +
                         std::to_string(x.ndim() == 4 ? x.dim(1) : -1) +
                         " do not match spec " + std::to_string(spec.in_channels));
    const int icg = spec.in_channels / spec.groups;
    const int ocg = spec.out_channels / spec.groups;
    if (weight.ndim() != 4 || weight.dim(0) != spec.out_channels || weight.dim(1) != icg ||
        weight.dim(2) != spec.kh || weight.dim(3) != spec.kw)
        throw ShapeError("conv2d: weight shape " + weight.shape_str() + " inconsistent with spec");
    if (!weight.all_finite() || (bias && !bias->all_finite()))
        throw NumericError("conv2d: non-finite weights");
    if (spec.bias_enabled && (!bias || bias->numel() != static_cast<std::size_t>(spec.out_channels)))
        throw ShapeError("conv2d: bias missing or wrong length");

    const int b_n = x.dim(0), oh_n = spec.out_h(x.dim(2)), ow_n = spec.out_w(x.dim(3));
    if (oh_n < 1 || ow_n < 1)
        throw ShapeError("conv2d: kernel does not fit input " + x.shape_str());
    const int k_n = icg * spec.kh * spec.kw;
    const std::size_t p_n = static_cast<std::size_t>(oh_n) * ow_n;

    Tensor<T> y({b_n, spec.out_channels, oh_n, ow_n});
    std::vector<T> col(static_cast<std::size_t>(k_n) * p_n);
    for (int b = 0; b < b_n; ++b) {
        for (int g = 0; g < spec.groups; ++g) {
            detail::im2col(x, b, g * icg, icg, spec, oh_n, ow_n, col.data());
            detail::CMapRM<T> wm(weight.data() + static_cast<std::size_t>(g) * ocg * k_n, ocg, k_n);
            detail::CMapRM<T> cm(col.data(), k_n, static_cast<Eigen::Index>(p_n));
            detail::MapRM<T> ym(y.data() + y.idx4(b, g * ocg, 0, 0), ocg, static_cast<Eigen::Index>(p_n));
            ym.noalias() = wm * cm;
        }
        if (spec.bias_enabled) {
            for (int oc = 0; oc < spec.out_channels; ++oc) {
                T* plane = y.data() + y.idx4(b, oc, 0, 0);
                const T bv = (*bias)[static_cast<std::size_t>(oc)];
                for (std::size_t i = 0; i < p_n; ++i) plane[i] += bv;
            }
        }
    }
    return y;
}

template <typename T>
struct ConvGrads {
    Tensor<T> gx, gw, gb;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weight,
                             const Tensor<T>& gy, bool need_gx = true) {
    const int b_n = x.dim(0), oh_n = gy.dim(2), ow_n = gy.dim(3);
    const int icg = spec.in_channels / spec.groups;
    const int ocg = spec.out_channels / spec.groups;
    const int k_n = icg * spec.kh * spec.kw;
    const std::size_t p_n = static_cast<std::size_t>(oh_n) * ow_n;
    GCARU_CHECK(gy.dim(0) == b_n && gy.dim(1) == spec.out_channels);

    ConvGrads<T> g;
    g.gw = Tensor<T>::zeros(weight.dims());
    if (need_gx) g.gx = Tensor<T>::zeros(x.dims());
    if (spec.bias_enabled) g.gb = Tensor<T>::zeros({spec.out_channels});

    std::vector<T> col(static_cast<std::size_t>(k_n) * p_n);
    std::vector<T> colgrad(need_gx ? col.size() : 0);
    for (int b = 0; b < b_n; ++b) {
        for (int grp = 0; grp < spec.groups; ++grp) {
            detail::im2col(x, b, grp * icg, icg, spec, oh_n, ow_n, col.data());
            detail::CMapRM<T> cm(col.data(), k_n, static_cast<Eigen::Index>(p_n));
            detail::CMapRM<T> gym(gy.data() + gy.idx4(b, grp * ocg, 0, 0), ocg,
                                  static_cast<Eigen::Index>(p_n));
            detail::MapRM<T> gwm(g.gw.data() + static_cast<std::size_t>(grp) * ocg * k_n, ocg, k_n);
            gwm.noalias() += gym * cm.transpose();
            if (need_gx) {
                detail::CMapRM<T> wm(weight.data() + static_cast<std::size_t>(grp) * ocg * k_n,
                                     ocg, k_n);
                detail::MapRM<T> cgm(colgrad.data(), k_n, static_cast<Eigen::Index>(p_n));
                cgm.noalias() = wm.transpose() * gym;
                detail::col2im(colgrad.data(), b, grp * icg, icg, spec, oh_n, ow_n, g.gx);
            }
        }
        if (spec.bias_enabled) {
            for (int oc = 0; oc < spec.out_channels; ++oc) {
                const T* plane = gy.data() + gy.idx4(b, oc, 0, 0);
                T acc = T(0);
                for (std::size_t i = 0; i < p_n; ++i) acc += plane[i];
                g.gb[static_cast<std::size_t>(oc)] += acc;
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
    Tensor<T> gamma, beta, running_mean, running_var;
    T momentum = T(0.1);
    T epsilon = T(1e-5);
    bool stats_initialized = false;

    explicit BatchNormState(int channels = 1)
        : gamma({channels}, T(1)),
          beta({channels}, T(0)),
          running_mean({channels}, T(0)),
          running_var({channels}, T(1)) {}

    int channels() const { return gamma.dim(0); }

    void init_stats() {
        running_mean.fill(T(0));
        running_var.fill(T(1));
        stats_initialized = true;
    }
};

template <typename T>
struct BnCache {
    Tensor<T> x_hat;
    Tensor<T> inv_std;  // per channel
    Tensor<T> gamma;    // snapshot, so backward is self-contained
    Mode mode = Mode::kTrain;
};

// Core normalization with externally owned affine parameters and running
// statistics. Lets one (gamma, beta) pair serve several statistic contexts.
template <typename T>
Tensor<T> batch_norm_ctx(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                         T* run_mean, T* run_var, bool stats_initialized, T momentum, T epsilon,
                         Mode mode, BnCache<T>* cache = nullptr) {
    if (x.ndim() != 4 || gamma.dim(0) != x.dim(1))
        throw ShapeError("batch_norm: state channels " + std::to_string(gamma.dim(0)) +
                         " vs input " + x.shape_str());
    const int b_n = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t n = static_cast<std::size_t>(b_n) * plane;

    Tensor<T> mean({c_n}), inv_std({c_n});
    if (mode == Mode::kTrain) {
        for (int c = 0; c < c_n; ++c) {
            double sum = 0.0, sq = 0.0;
            for (int b = 0; b < b_n; ++b) {
                const T* p = x.data() + x.idx4(b, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    sum += p[i];
                    sq += static_cast<double>(p[i]) * p[i];
                }
            }
            const double m = sum / static_cast<double>(n);
            const double var = std::max(0.0, sq / static_cast<double>(n) - m * m);
            mean[c] = static_cast<T>(m);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
            // running_var tracks the biased batch variance (the quantity used
            // for normalization), so momentum=1 freezes eval to train exactly
            run_mean[c] = (T(1) - momentum) * run_mean[c] + momentum * static_cast<T>(m);
            run_var[c] = (T(1) - momentum) * run_var[c] + momentum * static_cast<T>(var);
        }
    } else {
        if (!stats_initialized)
            throw StateError("batch_norm: eval mode with uninitialized running stats");
        for (int c = 0; c < c_n; ++c) {
            mean[c] = run_mean[c];
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(run_var[c]) +
                                                        static_cast<double>(epsilon)));
        }
    }

    Tensor<T> y(x.dims());
    Tensor<T> x_hat(x.dims());
    for (int c = 0; c < c_n; ++c) {
        const T m = mean[c], is = inv_std[c], ga = gamma[c], be = beta[c];
        for (int b = 0; b < b_n; ++b) {
            const T* px = x.data() + x.idx4(b, c, 0, 0);
            T* ph = x_hat.data() + x_hat.idx4(b, c, 0, 0);
            T* py = y.data() + y.idx4(b, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                ph[i] = (px[i] - m) * is;
                py[i] = ga * ph[i] + be;
            }
        }
    }
    if (cache) {
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
        cache->gamma = gamma;
        cache->mode = mode;
    }
    return y;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& st, Mode mode,
                     BnCache<T>* cache = nullptr) {
    auto y = batch_norm_ctx(x, st.gamma, st.beta, st.running_mean.data(), st.running_var.data(),
                            st.stats_initialized, st.momentum, st.epsilon, mode, cache);
    if (mode == Mode::kTrain) st.stats_initialized = true;
    return y;
}

template <typename T>
struct BnGrads {
    Tensor<T> gx, ggamma, gbeta;
};

template <typename T>
BnGrads<T> batch_norm_backward(const BnCache<T>& cache, const Tensor<T>& gy) {
    const Tensor<T>& xh = cache.x_hat;
    GCARU_CHECK(gy.same_shape(xh));
    const int b_n = xh.dim(0), c_n = xh.dim(1);
    const std::size_t plane = static_cast<std::size_t>(xh.dim(2)) * xh.dim(3);
    const double n = static_cast<double>(b_n) * static_cast<double>(plane);

    BnGrads<T> g;
    g.gx = Tensor<T>(xh.dims());
    g.ggamma = Tensor<T>({c_n});
    g.gbeta = Tensor<T>({c_n});
    for (int c = 0; c < c_n; ++c) {
        double sum_gy = 0.0, sum_gy_xh = 0.0;
        for (int b = 0; b < b_n; ++b) {
            const T* pg = gy.data() + gy.idx4(b, c, 0, 0);
            const T* ph = xh.data() + xh.idx4(b, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                sum_gy += pg[i];
                sum_gy_xh += static_cast<double>(pg[i]) * ph[i];
            }
        }
        g.ggamma[c] = static_cast<T>(sum_gy_xh);
        g.gbeta[c] = static_cast<T>(sum_gy);
        const T k = cache.gamma[c] * cache.inv_std[c];
        if (cache.mode == Mode::kTrain) {
            const T mg = static_cast<T>(sum_gy / n);
            const T mgx = static_cast<T>(sum_gy_xh / n);
            for (int b = 0; b < b_n; ++b) {
                const T* pg = gy.data() + gy.idx4(b, c, 0, 0);
                const T* ph = xh.data() + xh.idx4(b, c, 0, 0);
                T* po = g.gx.data() + g.gx.idx4(b, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i)
                    po[i] = k * (pg[i] - mg - ph[i] * mgx);
            }
        } else {
            for (int b = 0; b < b_n; ++b) {
                const T* pg = gy.data() + gy.idx4(b, c, 0, 0);
                T* po = g.gx.data() + g.gx.idx4(b, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) po[i] = k * pg[i];
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Act { kRelu, kSigmoid };

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
    Tensor<T> y(x.dims());
    const std::size_t n = x.numel();
    if (kind == Act::kRelu) {
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const T v = x[i];
            y[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                             : std::exp(v) / (T(1) + std::exp(v));
        }
    }
    return y;
}

// Backward from the forward *output* (sufficient for both kinds; relu uses
// subgradient 0 at the kink).
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& y, const Tensor<T>& gy, Act kind) {
    GCARU_CHECK(y.same_shape(gy));
    Tensor<T> gx(y.dims());
    const std::size_t n = y.numel();
    if (kind == Act::kRelu) {
        for (std::size_t i = 0; i < n; ++i) gx[i] = y[i] > T(0) ? gy[i] : T(0);
    } else {
        for (std::size_t i = 0; i < n; ++i) gx[i] = gy[i] * y[i] * (T(1) - y[i]);
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Max pooling (square window, -inf padding semantics)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel = 3, int stride = 2, int padding = 1,
                     std::vector<int>* argmax = nullptr) {
    const int b_n = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh_n = (h + 2 * padding - kernel) / stride + 1;
    const int ow_n = (w + 2 * padding - kernel) / stride + 1;
    if (oh_n < 1 || ow_n < 1) throw ShapeError("max_pool2d: window does not fit " + x.shape_str());
    Tensor<T> y({b_n, c_n, oh_n, ow_n});
    if (argmax) argmax->assign(y.numel(), -1);
    std::size_t o = 0;
    for (int b = 0; b < b_n; ++b)
        for (int c = 0; c < c_n; ++c) {
            const T* plane = x.data() + x.idx4(b, c, 0, 0);
            for (int oh = 0; oh < oh_n; ++oh)
                for (int ow = 0; ow < ow_n; ++ow, ++o) {
                    T best = std::numeric_limits<T>::lowest();
                    int best_i = -1;
                    for (int ki = 0; ki < kernel; ++ki) {
                        const int ih = oh * stride - padding + ki;
                        if (ih < 0 || ih >= h) continue;
                        for (int kj = 0; kj < kernel; ++kj) {
                            const int iw = ow * stride - padding + kj;
                            if (iw < 0 || iw >= w) continue;
                            const T v = plane[static_cast<std::size_t>(ih) * w + iw];
                            if (v > best) {
                                best = v;
                                best_i = ih * w + iw;
                            }
                        }
                    }
                    GCARU_CHECK(best_i >= 0);
                    y[o] = best;
                    if (argmax) (*argmax)[o] = best_i;
                }
        }
    return y;
}

template <typename T>
Tensor<T> max_pool2d_backward(const std::vector<int>& argmax, const std::vector<int>& in_dims,
                              const Tensor<T>& gy) {
    Tensor<T> gx = Tensor<T>::zeros(in_dims);
    const int c_n = in_dims[1];
    const std::size_t plane = static_cast<std::size_t>(in_dims[2]) * in_dims[3];
    const std::size_t out_plane = static_cast<std::size_t>(gy.dim(2)) * gy.dim(3);
    std::size_t o = 0;
    for (int b = 0; b < gy.dim(0); ++b)
        for (int c = 0; c < c_n; ++c) {
            T* gp = gx.data() + (static_cast<std::size_t>(b) * c_n + c) * plane;
            for (std::size_t i = 0; i < out_plane; ++i, ++o) gp[argmax[o]] += gy[o];
        }
    return gx;
}

// ---------------------------------------------------------------------------
// Directional pooling (the descriptor primitives behind coordinate attention)
// ---------------------------------------------------------------------------

// kHorizontal collapses the width (output B x C x H x 1);
// kVertical collapses the height (output B x C x 1 x W).
enum class Axis { kHorizontal, kVertical };
enum class PoolMode { kAvg, kMax };

template <typename T>
Tensor<T> directional_pool(const Tensor<T>& x, Axis axis, PoolMode mode,
                           std::vector<int>* argmax = nullptr) {
    const int b_n = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
    const bool horiz = axis == Axis::kHorizontal;
    Tensor<T> y(horiz ? std::vector<int>{b_n, c_n, h, 1} : std::vector<int>{b_n, c_n, 1, w});
    if (argmax) argmax->assign(y.numel(), -1);
    std::size_t o = 0;
    for (int b = 0; b < b_n; ++b)
        for (int c = 0; c < c_n; ++c) {
            const T* plane = x.data() + x.idx4(b, c, 0, 0);
            if (horiz) {
                for (int i = 0; i < h; ++i, ++o) {
                    const T* row = plane + static_cast<std::size_t>(i) * w;
                    if (mode == PoolMode::kAvg) {
                        double acc = 0.0;
                        for (int j = 0; j < w; ++j) acc += row[j];
                        y[o] = static_cast<T>(acc / w);
                    } else {
                        int bi = 0;
                        for (int j = 1; j < w; ++j)
                            if (row[j] > row[bi]) bi = j;
                        y[o] = row[bi];
                        if (argmax) (*argmax)[o] = bi;
                    }
                }
            } else {
                for (int j = 0; j < w; ++j, ++o) {
                    if (mode == PoolMode::kAvg) {
                        double acc = 0.0;
                        for (int i = 0; i < h; ++i) acc += plane[static_cast<std::size_t>(i) * w + j];
                        y[o] = static_cast<T>(acc / h);
                    } else {
                        int bi = 0;
                        for (int i = 1; i < h; ++i)
                            if (plane[static_cast<std::size_t>(i) * w + j] >
                                plane[static_cast<std::size_t>(bi) * w + j])
                                bi = i;
                        y[o] = plane[static_cast<std::size_t>(bi) * w + j];
                        if (argmax) (*argmax)[o] = bi;
                    }
                }
            }
        }
    return y;
}

template <typename T>
Tensor<T> directional_pool_backward(const Tensor<T>& gy, const std::vector<int>& in_dims,
                                    Axis axis, PoolMode mode,
                                    const std::vector<int>* argmax = nullptr) {
    Tensor<T> gx = Tensor<T>::zeros(in_dims);
    const int c_n = in_dims[1], h = in_dims[2], w = in_dims[3];
    const bool horiz = axis == Axis::kHorizontal;
    std::size_t o = 0;
    for (int b = 0; b < gy.dim(0); ++b)
        for (int c = 0; c < c_n; ++c) {
            T* plane = gx.data() + gx.idx4(b, c, 0, 0);
            if (horiz) {
                for (int i = 0; i < h; ++i, ++o) {
                    T* row = plane + static_cast<std::size_t>(i) * w;
                    if (mode == PoolMode::kAvg) {
                        const T v = gy[o] / static_cast<T>(w);
                        for (int j = 0; j < w; ++j) row[j] += v;
                    } else {
                        row[(*argmax)[o]] += gy[o];
                    }
                }
            } else {
                for (int j = 0; j < w; ++j, ++o) {
                    if (mode == PoolMode::kAvg) {
                        const T v = gy[o] / static_cast<T>(h);
                        for (int i = 0; i < h; ++i) plane[static_cast<std::size_t>(i) * w + j] += v;
                    } else {
                        plane[static_cast<std::size_t>((*argmax)[o]) * w + j] += gy[o];
                    }
                }
            }
        }
    return gx;
}

// ---------------------------------------------------------------------------
// Corner-aligned bilinear upsampling (integer scale)
// ---------------------------------------------------------------------------

namespace detail {

struct LerpTap {
    int i0, i1;
    double w1;  // weight of i1; i0 gets 1 - w1
};

inline LerpTap lerp_tap(int out_i, int in_n, int out_n) {
    if (out_n == 1 || in_n == 1) return {0, 0, 0.0};
    const double u = static_cast<double>(out_i) * (in_n - 1) / (out_n - 1);
    int i0 = static_cast<int>(std::floor(u));
    if (i0 > in_n - 2) i0 = in_n - 2;
    return {i0, i0 + 1, u - i0};
}

}  // namespace detail

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int scale) {
    if (scale < 1) throw ShapeError("bilinear_upsample: scale must be >= 1");
    if (scale == 1) return x;
    const int b_n = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh_n = h * scale, ow_n = w * scale;
    Tensor<T> y({b_n, c_n, oh_n, ow_n});
    std::vector<detail::LerpTap> th(oh_n), tw(ow_n);
    for (int i = 0; i < oh_n; ++i) th[i] = detail::lerp_tap(i, h, oh_n);
    for (int j = 0; j < ow_n; ++j) tw[j] = detail::lerp_tap(j, w, ow_n);
    for (int b = 0; b < b_n; ++b)
        for (int c = 0; c < c_n; ++c) {
            const T* src = x.data() + x.idx4(b, c, 0, 0);
            T* dst = y.data() + y.idx4(b, c, 0, 0);
            for (int i = 0; i < oh_n; ++i) {
                const auto& a = th[i];
                const T* r0 = src + static_cast<std::size_t>(a.i0) * w;
                const T* r1 = src + static_cast<std::size_t>(a.i1) * w;
                for (int j = 0; j < ow_n; ++j) {
                    const auto& bb = tw[j];
                    const double v0 = (1.0 - bb.w1) * r0[bb.i0] + bb.w1 * r0[bb.i1];
                    const double v1 = (1.0 - bb.w1) * r1[bb.i0] + bb.w1 * r1[bb.i1];
                    dst[static_cast<std::size_t>(i) * ow_n + j] =
                        static_cast<T>((1.0 - a.w1) * v0 + a.w1 * v1);
                }
            }
        }
    return y;
}

template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& gy, int in_h, int in_w, int scale) {
    if (scale == 1) return gy;
    const int b_n = gy.dim(0), c_n = gy.dim(1), oh_n = gy.dim(2), ow_n = gy.dim(3);
    Tensor<T> gx = Tensor<T>::zeros({b_n, c_n, in_h, in_w});
    std::vector<detail::LerpTap> th(oh_n), tw(ow_n);
    for (int i = 0; i < oh_n; ++i) th[i] = detail::lerp_tap(i, in_h, oh_n);
    for (int j = 0; j < ow_n; ++j) tw[j] = detail::lerp_tap(j, in_w, ow_n);
    for (int b = 0; b < b_n; ++b)
        for (int c = 0; c < c_n; ++c) {
            T* dst = gx.data() + gx.idx4(b, c, 0, 0);
            const T* src = gy.data() + gy.idx4(b, c, 0, 0);
            for (int i = 0; i < oh_n; ++i) {
                const auto& a = th[i];
                for (int j = 0; j < ow_n; ++j) {
                    const auto& bb = tw[j];
                    const double g = src[static_cast<std::size_t>(i) * ow_n + j];
                    dst[static_cast<std::size_t>(a.i0) * in_w + bb.i0] +=
                        static_cast<T>((1.0 - a.w1) * (1.0 - bb.w1) * g);
                    dst[static_cast<std::size_t>(a.i0) * in_w + bb.i1] +=
                        static_cast<T>((1.0 - a.w1) * bb.w1 * g);
                    dst[static_cast<std::size_t>(a.i1) * in_w + bb.i0] +=
                        static_cast<T>(a.w1 * (1.0 - bb.w1) * g);
                    dst[static_cast<std::size_t>(a.i1) * in_w + bb.i1] +=
                        static_cast<T>(a.w1 * bb.w1 * g);
                }
            }
        }
    return gx;
}

// ---------------------------------------------------------------------------
// Broadcast multiply and channel concat (attention / decoder plumbing)
// ---------------------------------------------------------------------------

// Elementwise x * m where each dim of m equals the matching dim of x or 1.
template <typename T>
Tensor<T> mul_broadcast(const Tensor<T>& x, const Tensor<T>& m) {
    GCARU_CHECK(x.ndim() == 4 && m.ndim() == 4);
    for (int i = 0; i < 4; ++i) GCARU_CHECK(m.dim(i) == x.dim(i) || m.dim(i) == 1);
    Tensor<T> y(x.dims());
    const int mb = m.dim(0) == 1 ? 0 : 1, mc = m.dim(1) == 1 ? 0 : 1,
              mh = m.dim(2) == 1 ? 0 : 1, mw = m.dim(3) == 1 ? 0 : 1;
    for (int b = 0; b < x.dim(0); ++b)
        for (int c = 0; c < x.dim(1); ++c)
            for (int h = 0; h < x.dim(2); ++h) {
                const T* px = x.data() + x.idx4(b, c, h, 0);
                const T* pm = m.data() + m.idx4(b * mb, c * mc, h * mh, 0);
                T* py = y.data() + y.idx4(b, c, h, 0);
                if (mw)
                    for (int w = 0; w < x.dim(3); ++w) py[w] = px[w] * pm[w];
                else
                    for (int w = 0; w < x.dim(3); ++w) py[w] = px[w] * pm[0];
            }
    return y;
}

// Sums t over every axis where the target shape has extent 1 (the adjoint of
// broadcasting to t's shape).
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& t, const std::vector<int>& dims) {
    Tensor<T> out = Tensor<T>::zeros(dims);
    const int mb = dims[0] == 1 ? 0 : 1, mc = dims[1] == 1 ? 0 : 1,
              mh = dims[2] == 1 ? 0 : 1, mw = dims[3] == 1 ? 0 : 1;
    for (int b = 0; b < t.dim(0); ++b)
        for (int c = 0; c < t.dim(1); ++c)
            for (int h = 0; h < t.dim(2); ++h) {
                const T* p = t.data() + t.idx4(b, c, h, 0);
                T* q = out.data() + out.idx4(b * mb, c * mc, h * mh, 0);
                if (mw)
                    for (int w = 0; w < t.dim(3); ++w) q[w] += p[w];
                else
                    for (int w = 0; w < t.dim(3); ++w) q[0] += p[w];
            }
    return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    GCARU_CHECK(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3));
    Tensor<T> out({a.dim(0), a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
    write_channels(out, a, 0);
    write_channels(out, b, a.dim(1));
    return out;
}

// ---------------------------------------------------------------------------
// Global / cross-channel reductions (SE and CBAM descriptors)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    Tensor<T> y({x.dim(0), x.dim(1), 1, 1});
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    for (int b = 0; b < x.dim(0); ++b)
        for (int c = 0; c < x.dim(1); ++c) {
            const T* p = x.data() + x.idx4(b, c, 0, 0);
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            y(b, c, 0, 0) = static_cast<T>(acc / static_cast<double>(plane));
        }
    return y;
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x, std::vector<int>* argmax = nullptr) {
    Tensor<T> y({x.dim(0), x.dim(1), 1, 1});
    if (argmax) argmax->assign(y.numel(), 0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    std::size_t o = 0;
    for (int b = 0; b < x.dim(0); ++b)
        for (int c = 0; c < x.dim(1); ++c, ++o) {
            const T* p = x.data() + x.idx4(b, c, 0, 0);
            std::size_t bi = 0;
            for (std::size_t i = 1; i < plane; ++i)
                if (p[i] > p[bi]) bi = i;
            y[o] = p[bi];
            if (argmax) (*argmax)[o] = static_cast<int>(bi);
        }
    return y;
}

// Mean over the channel axis -> (B, 1, H, W).
template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
    Tensor<T> y({x.dim(0), 1, x.dim(2), x.dim(3)});
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    for (int b = 0; b < x.dim(0); ++b) {
        T* q = y.data() + y.idx4(b, 0, 0, 0);
        std::fill(q, q + plane, T(0));
        for (int c = 0; c < x.dim(1); ++c) {
            const T* p = x.data() + x.idx4(b, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) q[i] += p[i];
        }
        for (std::size_t i = 0; i < plane; ++i) q[i] /= static_cast<T>(x.dim(1));
    }
    return y;
}

// Max over the channel axis -> (B, 1, H, W); argmax holds winning channel.
template <typename T>
Tensor<T> channel_max(const Tensor<T>& x, std::vector<int>* argmax = nullptr) {
    Tensor<T> y({x.dim(0), 1, x.dim(2), x.dim(3)});
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    if (argmax) argmax->assign(y.numel(), 0);
    for (int b = 0; b < x.dim(0); ++b) {
        T* q = y.data() + y.idx4(b, 0, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
            int bc = 0;
            T best = x.data()[x.idx4(b, 0, 0, 0) + i];
            for (int c = 1; c < x.dim(1); ++c) {
                const T v = x.data()[x.idx4(b, c, 0, 0) + i];
                if (v > best) {
                    best = v;
                    bc = c;
                }
            }
            q[i] = best;
            if (argmax) (*argmax)[static_cast<std::size_t>(b) * plane + i] = bc;
        }
    }
    return y;
}

}  // namespace gcaru
