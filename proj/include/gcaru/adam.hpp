#pragma once

#include <cmath>
#include <vector>

#include "gcaru/error.hpp"
#include "gcaru/params.hpp"

namespace gcaru {

// Bias-corrected Adam over a parameter list. Moment buffers are aligned with
// the trainable entries of the list, which has a stable enumeration order.
template <typename T>
struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 0.0;  // global-norm clip; disabled at 0
    long long t = 0;
    std::vector<Tensor<T>> m, v;

    Adam() = default;
    explicit Adam(const ParamList<T>& ps, double lr_ = 1e-4) : lr(lr_) {
        for (const auto& p : ps)
            if (p.trainable) {
                m.push_back(Tensor<T>::zeros(p.value->dims()));
                v.push_back(Tensor<T>::zeros(p.value->dims()));
            }
    }

    void step(const ParamList<T>& ps) {
        ++t;
        double clip_scale = 1.0;
        if (grad_clip > 0.0) {
            double sq = 0.0;
            for (const auto& p : ps)
                if (p.trainable)
                    for (std::size_t i = 0; i < p.grad->numel(); ++i)
                        sq += static_cast<double>((*p.grad)[i]) * (*p.grad)[i];
            const double norm = std::sqrt(sq);
            if (norm > grad_clip) clip_scale = grad_clip / norm;
        }
        const T bc1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(t)));
        const T bc2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(t)));
        const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
        const T step_lr = static_cast<T>(lr), e = static_cast<T>(eps);
        std::size_t slot = 0;
        for (const auto& p : ps) {
            if (!p.trainable) continue;
            Tensor<T>& mm = m[slot];
            Tensor<T>& vv = v[slot];
            ++slot;
            for (std::size_t i = 0; i < p.value->numel(); ++i) {
                T g = (*p.grad)[i];
                if (!std::isfinite(static_cast<double>(g)))
                    throw NumericError("adam: non-finite gradient in " + p.name);
                g = static_cast<T>(g * clip_scale);
                mm[i] = b1 * mm[i] + (T(1) - b1) * g;
                vv[i] = b2 * vv[i] + (T(1) - b2) * g * g;
                const T m_hat = mm[i] / bc1;
                const T v_hat = vv[i] / bc2;
                (*p.value)[i] -= step_lr * m_hat / (std::sqrt(v_hat) + e);
            }
        }
    }
};

}  // namespace gcaru
