#pragma once

#include <array>
#include <optional>
#include <vector>

#include "gcaru/config.hpp"
#include "gcaru/layers.hpp"

// Modified ResNet50 encoder: 7x7 stem, max-pool, four bottleneck stages with
// attention inserted before the residual addition. No pooling head, no
// classifier; the network's only output is the five-level feature pyramid.
namespace gcaru {

template <typename T>
struct FeaturePyramid {
    Tensor<T> feat1, feat2, feat3, feat4, feat5;  // strides 2/4/8/16/32
};

template <typename T>
struct Bottleneck {
    static constexpr int kExpansion = 4;

    Conv2dLayer<T> conv1, conv2, conv3;
    BatchNormLayer<T> bn1, bn2, bn3;
    std::optional<Conv2dLayer<T>> proj_conv;  // W_s: 1x1 conv + BN when shape changes
    std::optional<BatchNormLayer<T>> proj_bn;
    Attention<T> attn;

    Tensor<T> relu1_cache, relu2_cache, out_cache;

    Bottleneck() = default;
    Bottleneck(int in_channels, int planes, int stride, AttnVariant variant,
               const AttnSettings& settings) {
        const int out = planes * kExpansion;
        conv1 = Conv2dLayer<T>(conv_spec(in_channels, planes, 1, 1, 0));
        bn1 = BatchNormLayer<T>(planes);
        // stride lives in the 3x3 conv (the "v1.5" placement)
        conv2 = Conv2dLayer<T>(conv_spec(planes, planes, 3, stride, 1));
        bn2 = BatchNormLayer<T>(planes);
        conv3 = Conv2dLayer<T>(conv_spec(planes, out, 1, 1, 0));
        bn3 = BatchNormLayer<T>(out);
        if (stride != 1 || in_channels != out) {
            proj_conv = Conv2dLayer<T>(conv_spec(in_channels, out, 1, stride, 0));
            proj_bn = BatchNormLayer<T>(out);
        }
        attn = Attention<T>::make(variant, out, settings);
    }

    int out_channels() const { return conv3.spec.out_channels; }

    void init(Rng& rng) {
        conv1.init(rng);
        bn1.init(rng);
        conv2.init(rng);
        bn2.init(rng);
        conv3.init(rng);
        bn3.init(rng);
        if (proj_conv) {
            proj_conv->init(rng);
            proj_bn->init(rng);
        }
        attn.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, bool grad) {
        auto t = conv1.forward(x, grad);
        t = activation(bn1.forward(t, mode, grad), Act::kRelu);
        if (grad) relu1_cache = t;
        t = conv2.forward(t, grad);
        t = activation(bn2.forward(t, mode, grad), Act::kRelu);
        if (grad) relu2_cache = t;
        t = bn3.forward(conv3.forward(t, grad), mode, grad);
        t = attn.forward(t, mode, grad);

        Tensor<T> shortcut =
            proj_conv ? proj_bn->forward(proj_conv->forward(x, grad), mode, grad) : x;
        GCARU_CHECK(t.same_shape(shortcut));
        t.add_(shortcut);
        auto y = activation(t, Act::kRelu);
        if (grad) out_cache = y;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        auto g = activation_backward(out_cache, gy, Act::kRelu);
        Tensor<T> gx_short =
            proj_conv ? proj_conv->backward(proj_bn->backward(g)) : g;

        auto gt = bn3.backward(attn.backward(g));
        gt = conv3.backward(gt);
        gt = activation_backward(relu2_cache, gt, Act::kRelu);
        gt = conv2.backward(bn2.backward(gt));
        gt = activation_backward(relu1_cache, gt, Act::kRelu);
        gt = conv1.backward(bn1.backward(gt));
        gt.add_(gx_short);
        return gt;
    }

    void collect(ParamList<T>& ps, const std::string& prefix) {
        conv1.collect(ps, prefix + ".conv1");
        bn1.collect(ps, prefix + ".bn1");
        conv2.collect(ps, prefix + ".conv2");
        bn2.collect(ps, prefix + ".bn2");
        conv3.collect(ps, prefix + ".conv3");
        bn3.collect(ps, prefix + ".bn3");
        attn.collect(ps, prefix + ".attn");
        if (proj_conv) {
            proj_conv->collect(ps, prefix + ".downsample.conv");
            proj_bn->collect(ps, prefix + ".downsample.bn");
        }
    }

    void set_force_identity(bool on) { attn.set_force_identity(on); }

    template <typename Fn>
    void for_each_bn(Fn&& fn) {
        fn(bn1.st);
        fn(bn2.st);
        fn(bn3.st);
        if (proj_bn) fn(proj_bn->st);
        attn.for_each_bn(fn);
    }

    void set_bn_momentum(T m) {
        for_each_bn([m](BatchNormState<T>& st) { st.momentum = m; });
        attn.set_bn_momentum(m);
    }
};

template <typename T>
struct Backbone {
    Conv2dLayer<T> stem;
    BatchNormLayer<T> stem_bn;
    std::array<std::vector<Bottleneck<T>>, 4> stages;

    Tensor<T> stem_relu_cache;
    std::vector<int> pool_arg;
    std::vector<int> pool_in_dims;

    Backbone() = default;
    explicit Backbone(const ModelConfig& cfg) {
        stem = Conv2dLayer<T>(conv_spec(3, cfg.stem_channels, 7, 2, 3));
        stem_bn = BatchNormLayer<T>(cfg.stem_channels);
        int in = cfg.stem_channels;
        for (int s = 0; s < 4; ++s) {
            const int planes = cfg.stage_planes[s];
            const int stride = s == 0 ? 1 : 2;  // stage 1 keeps the post-pool stride
            for (int b = 0; b < cfg.stage_depths[s]; ++b) {
                stages[s].emplace_back(in, planes, b == 0 ? stride : 1, cfg.attention, cfg.attn);
                in = planes * Bottleneck<T>::kExpansion;
            }
        }
    }

    void init(Rng& rng) {
        stem.init(rng);
        stem_bn.init(rng);
        for (auto& stage : stages)
            for (auto& block : stage) block.init(rng);
    }

    FeaturePyramid<T> forward(const Tensor<T>& x, Mode mode, bool grad) {
        if (x.ndim() != 4 || x.dim(1) != 3)
            throw InputError("backbone: expected a (B,3,H,W) input, got " + x.shape_str());
        if (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0)
            throw InputError("backbone: H and W must be multiples of 32 (got " + x.shape_str() +
                             "); pad the input up to the next multiple");
        FeaturePyramid<T> p;
        auto t = activation(stem_bn.forward(stem.forward(x, grad), mode, grad), Act::kRelu);
        if (grad) stem_relu_cache = t;
        p.feat1 = t;
        if (grad) pool_in_dims = t.dims();
        t = max_pool2d(t, 3, 2, 1, grad ? &pool_arg : nullptr);
        for (int s = 0; s < 4; ++s) {
            for (auto& block : stages[s]) t = block.forward(t, mode, grad);
            (s == 0 ? p.feat2 : s == 1 ? p.feat3 : s == 2 ? p.feat4 : p.feat5) = t;
        }
        return p;
    }

    // Takes the loss gradient of each pyramid level, returns the input grad.
    Tensor<T> backward(const FeaturePyramid<T>& g) {
        Tensor<T> gt = g.feat5;
        for (int s = 3; s >= 0; --s) {
            for (auto it = stages[s].rbegin(); it != stages[s].rend(); ++it)
                gt = it->backward(gt);
            if (s == 3) gt.add_(g.feat4);
            else if (s == 2) gt.add_(g.feat3);
            else if (s == 1) gt.add_(g.feat2);
        }
        auto g1 = max_pool2d_backward(pool_arg, pool_in_dims, gt);
        g1.add_(g.feat1);
        g1 = activation_backward(stem_relu_cache, g1, Act::kRelu);
        return stem.backward(stem_bn.backward(g1));
    }

    void collect(ParamList<T>& ps, const std::string& prefix) {
        stem.collect(ps, prefix + ".stem.conv");
        stem_bn.collect(ps, prefix + ".stem.bn");
        for (int s = 0; s < 4; ++s)
            for (std::size_t b = 0; b < stages[s].size(); ++b)
                stages[s][b].collect(ps, prefix + ".layer" + std::to_string(s + 1) + ".block" +
                                             std::to_string(b));
    }

    void set_force_identity(bool on) {
        for (auto& stage : stages)
            for (auto& block : stage) block.set_force_identity(on);
    }

    template <typename Fn>
    void for_each_bn(Fn&& fn) {
        fn(stem_bn.st);
        for (auto& stage : stages)
            for (auto& block : stage) block.for_each_bn(fn);
    }

    void set_bn_momentum(T m) {
        stem_bn.st.momentum = m;
        for (auto& stage : stages)
            for (auto& block : stage) block.set_bn_momentum(m);
    }
};

}  // namespace gcaru
