#pragma once

#include <cmath>
#include <vector>

#include "gcaru/config.hpp"
#include "gcaru/tensor.hpp"

// Dice + cross-entropy training objective and the hard-mask DSC metric.
// Losses run on softmax probabilities; the metric runs on argmax masks.
namespace gcaru {

using LabelMask = Tensor<int>;  // (B, H, W), values in [0, K)

template <typename T>
void check_labels(const Tensor<T>& logits, const LabelMask& target) {
    if (logits.ndim() != 4 || target.ndim() != 3 || logits.dim(0) != target.dim(0) ||
        logits.dim(2) != target.dim(1) || logits.dim(3) != target.dim(2))
        throw ShapeError("loss: logits " + logits.shape_str() + " vs target " +
                         target.shape_str());
    const int k = logits.dim(1);
    for (std::size_t i = 0; i < target.numel(); ++i)
        if (target[i] < 0 || target[i] >= k)
            throw InputError("loss: label " + std::to_string(target[i]) +
                             " out of range for " + std::to_string(k) + " classes");
}

// Channel softmax with log-sum-exp stabilization.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
    const int b_n = logits.dim(0), k = logits.dim(1);
    const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
    Tensor<T> p(logits.dims());
    for (int b = 0; b < b_n; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
            T mx = logits.data()[logits.idx4(b, 0, 0, 0) + i];
            for (int c = 1; c < k; ++c)
                mx = std::max(mx, logits.data()[logits.idx4(b, c, 0, 0) + i]);
            double denom = 0.0;
            for (int c = 0; c < k; ++c)
                denom += std::exp(static_cast<double>(logits.data()[logits.idx4(b, c, 0, 0) + i] - mx));
            for (int c = 0; c < k; ++c)
                p.data()[p.idx4(b, c, 0, 0) + i] = static_cast<T>(
                    std::exp(static_cast<double>(logits.data()[logits.idx4(b, c, 0, 0) + i] - mx)) /
                    denom);
        }
    return p;
}

// Mean over pixels of -log softmax(logits)[target].
template <typename T>
T ce_loss(const Tensor<T>& logits, const LabelMask& target) {
    check_labels(logits, target);
    const int b_n = logits.dim(0), k = logits.dim(1);
    const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
    double acc = 0.0;
    for (int b = 0; b < b_n; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
            T mx = logits.data()[logits.idx4(b, 0, 0, 0) + i];
            for (int c = 1; c < k; ++c)
                mx = std::max(mx, logits.data()[logits.idx4(b, c, 0, 0) + i]);
            double denom = 0.0;
            for (int c = 0; c < k; ++c)
                denom += std::exp(static_cast<double>(logits.data()[logits.idx4(b, c, 0, 0) + i] - mx));
            const int t = target[static_cast<std::size_t>(b) * plane + i];
            acc += std::log(denom) -
                   static_cast<double>(logits.data()[logits.idx4(b, t, 0, 0) + i] - mx);
        }
    return static_cast<T>(acc / (static_cast<double>(b_n) * plane));
}

// Soft Dice on softmax probabilities; sums run over the whole batch.
template <typename T>
T dice_loss(const Tensor<T>& logits, const LabelMask& target, const LossConfig& cfg) {
    check_labels(logits, target);
    auto p = softmax_channels(logits);
    const int b_n = logits.dim(0), k = logits.dim(1);
    const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
    const int c0 = cfg.include_background_in_loss ? 0 : 1;
    double mean_d = 0.0;
    for (int c = c0; c < k; ++c) {
        double inter = 0.0, psum = 0.0, gsum = 0.0;
        for (int b = 0; b < b_n; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
                const double pv = p.data()[p.idx4(b, c, 0, 0) + i];
                const double gv = target[static_cast<std::size_t>(b) * plane + i] == c ? 1.0 : 0.0;
                inter += pv * gv;
                psum += pv;
                gsum += gv;
            }
        mean_d += (2.0 * inter + cfg.epsilon) / (psum + gsum + cfg.epsilon);
    }
    mean_d /= static_cast<double>(k - c0);
    return static_cast<T>(1.0 - mean_d);
}

template <typename T>
T total_loss(const Tensor<T>& logits, const LabelMask& target, const LossConfig& cfg) {
    return static_cast<T>(cfg.dice_weight) * dice_loss(logits, target, cfg) +
           static_cast<T>(cfg.ce_weight) * ce_loss(logits, target);
}

template <typename T>
struct LossValue {
    T total = T(0), dice = T(0), ce = T(0);
    Tensor<T> grad;  // d total / d logits
};

// One fused pass producing the combined loss and its logits gradient.
template <typename T>
LossValue<T> total_loss_with_grad(const Tensor<T>& logits, const LabelMask& target,
                                  const LossConfig& cfg) {
    check_labels(logits, target);
    const int b_n = logits.dim(0), k = logits.dim(1);
    const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
    const double n_pix = static_cast<double>(b_n) * plane;
    auto p = softmax_channels(logits);

    LossValue<T> out;
    out.grad = Tensor<T>::zeros(logits.dims());

    // cross entropy value
    out.ce = ce_loss(logits, target);

    // dice value and d dice / d p
    const int c0 = cfg.include_background_in_loss ? 0 : 1;
    const int n_cls = k - c0;
    std::vector<double> inter(k, 0.0), psum(k, 0.0), gsum(k, 0.0);
    for (int c = c0; c < k; ++c)
        for (int b = 0; b < b_n; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
                const double pv = p.data()[p.idx4(b, c, 0, 0) + i];
                const double gv = target[static_cast<std::size_t>(b) * plane + i] == c ? 1.0 : 0.0;
                inter[c] += pv * gv;
                psum[c] += pv;
                gsum[c] += gv;
            }
    double mean_d = 0.0;
    for (int c = c0; c < k; ++c)
        mean_d += (2.0 * inter[c] + cfg.epsilon) / (psum[c] + gsum[c] + cfg.epsilon);
    out.dice = static_cast<T>(1.0 - mean_d / n_cls);
    out.total = static_cast<T>(cfg.dice_weight) * out.dice + static_cast<T>(cfg.ce_weight) * out.ce;

    // gradient: dice term through softmax, CE directly as (p - onehot)/N
    const double dw = cfg.dice_weight, cw = cfg.ce_weight;
    std::vector<double> dl_dp(k);
    for (int b = 0; b < b_n; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
            const int t = target[static_cast<std::size_t>(b) * plane + i];
            for (int c = 0; c < k; ++c) {
                if (c < c0) {
                    dl_dp[c] = 0.0;
                    continue;
                }
                const double u = psum[c] + gsum[c] + cfg.epsilon;
                const double gv = c == t ? 1.0 : 0.0;
                // d d_c / d p_c(x) = (2 g (u) - (2 I + eps)) / u^2
                dl_dp[c] = -(1.0 / n_cls) * (2.0 * gv * u - (2.0 * inter[c] + cfg.epsilon)) / (u * u);
            }
            double dot = 0.0;
            for (int c = 0; c < k; ++c)
                dot += dl_dp[c] * p.data()[p.idx4(b, c, 0, 0) + i];
            for (int c = 0; c < k; ++c) {
                const double pv = p.data()[p.idx4(b, c, 0, 0) + i];
                const double dice_g = pv * (dl_dp[c] - dot);
                const double ce_g = (pv - (c == t ? 1.0 : 0.0)) / n_pix;
                out.grad.data()[out.grad.idx4(b, c, 0, 0) + i] =
                    static_cast<T>(dw * dice_g + cw * ce_g);
            }
        }
    return out;
}

// Hard DSC per class; a class absent from both masks scores 1.0.
struct DscResult {
    std::vector<double> per_class;
    double mean = 0.0;  // over the configured class set
};

inline DscResult dsc_metric(const LabelMask& pred, const LabelMask& target, int num_classes,
                            bool include_background = false) {
    GCARU_CHECK(pred.dims() == target.dims());
    std::vector<long long> p_count(num_classes, 0), g_count(num_classes, 0),
        i_count(num_classes, 0);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        p_count[pred[i]]++;
        g_count[target[i]]++;
        if (pred[i] == target[i]) i_count[pred[i]]++;
    }
    DscResult r;
    r.per_class.resize(num_classes);
    const int c0 = include_background ? 0 : 1;
    double acc = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        const long long denom = p_count[c] + g_count[c];
        r.per_class[c] = denom == 0 ? 1.0 : 2.0 * i_count[c] / static_cast<double>(denom);
        if (c >= c0) acc += r.per_class[c];
    }
    r.mean = num_classes > c0 ? acc / (num_classes - c0) : 0.0;
    return r;
}

template <typename T>
LabelMask argmax_mask(const Tensor<T>& logits) {
    const int b_n = logits.dim(0), k = logits.dim(1);
    const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
    LabelMask m({b_n, logits.dim(2), logits.dim(3)});
    for (int b = 0; b < b_n; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
            int best = 0;
            T bv = logits.data()[logits.idx4(b, 0, 0, 0) + i];
            for (int c = 1; c < k; ++c) {
                const T v = logits.data()[logits.idx4(b, c, 0, 0) + i];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            m[static_cast<std::size_t>(b) * plane + i] = best;
        }
    return m;
}

}  // namespace gcaru
