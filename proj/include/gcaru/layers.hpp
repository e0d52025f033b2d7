#pragma once

#include <string>

#include "gcaru/attention.hpp"
#include "gcaru/ops.hpp"
#include "gcaru/params.hpp"
#include "gcaru/rng.hpp"

// Thin stateful wrappers over the functional primitives: they own weights,
// gradient accumulators, and the forward caches backward needs.
namespace gcaru {

template <typename T>
struct Conv2dLayer {
    ConvSpec spec;
    Tensor<T> weight, gweight;
    Tensor<T> bias, gbias;
    Tensor<T> x_cache;

    Conv2dLayer() = default;
    explicit Conv2dLayer(const ConvSpec& s)
        : spec(s),
          weight({s.out_channels, s.in_channels / s.groups, s.kh, s.kw}),
          gweight(weight.dims()) {
        if (s.bias_enabled) {
            bias = Tensor<T>({s.out_channels});
            gbias = Tensor<T>({s.out_channels});
        }
    }

    void init(Rng& rng) {
        detail::he_init(weight, rng);
        if (spec.bias_enabled) bias.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x, bool grad) {
        if (grad) x_cache = x;
        return conv2d(x, spec, weight, spec.bias_enabled ? &bias : nullptr);
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_gx = true) {
        auto g = conv2d_backward(x_cache, spec, weight, gy, need_gx);
        gweight.add_(g.gw);
        if (spec.bias_enabled) gbias.add_(g.gb);
        return std::move(g.gx);
    }

    void collect(ParamList<T>& ps, const std::string& prefix) {
        ps.push_back({prefix + ".weight", &weight, &gweight, true});
        if (spec.bias_enabled) ps.push_back({prefix + ".bias", &bias, &gbias, true});
    }
};

template <typename T>
struct BatchNormLayer {
    BatchNormState<T> st;
    Tensor<T> ggamma, gbeta;
    BnCache<T> cache;

    BatchNormLayer() : BatchNormLayer(1) {}
    explicit BatchNormLayer(int channels) : st(channels), ggamma({channels}), gbeta({channels}) {}

    void init(Rng&) {
        st.gamma.fill(T(1));
        st.beta.fill(T(0));
        st.init_stats();
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, bool grad) {
        return batch_norm(x, st, mode, grad ? &cache : nullptr);
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        auto g = batch_norm_backward(cache, gy);
        ggamma.add_(g.ggamma);
        gbeta.add_(g.gbeta);
        return std::move(g.gx);
    }

    void collect(ParamList<T>& ps, const std::string& prefix) {
        ps.push_back({prefix + ".gamma", &st.gamma, &ggamma, true});
        ps.push_back({prefix + ".beta", &st.beta, &gbeta, true});
        ps.push_back({prefix + ".running_mean", &st.running_mean, nullptr, false});
        ps.push_back({prefix + ".running_var", &st.running_var, nullptr, false});
    }
};

}  // namespace gcaru
