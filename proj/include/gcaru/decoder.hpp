#pragma once

#include "gcaru/config.hpp"
#include "gcaru/layers.hpp"
#include "gcaru/resnet.hpp"

// U-Net style decoder: four fusion blocks over the pyramid, one refinement
// stage after the last x2 resize, and a 1x1 head producing raw logits.
namespace gcaru {

template <typename T>
struct UnetUp {
    Conv2dLayer<T> conv1, conv2;  // 3x3 + ReLU, biases on (no BN here)
    int skip_channels = 0;
    int low_h = 0, low_w = 0;
    Tensor<T> relu1_cache, relu2_cache;

    UnetUp() = default;
    UnetUp(int skip_ch, int low_ch, int out_ch) : skip_channels(skip_ch) {
        conv1 = Conv2dLayer<T>(conv_spec(skip_ch + low_ch, out_ch, 3, 1, 1, true));
        conv2 = Conv2dLayer<T>(conv_spec(out_ch, out_ch, 3, 1, 1, true));
    }

    void init(Rng& rng) {
        conv1.init(rng);
        conv2.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& low, const Tensor<T>& skip, bool grad) {
        if (skip.dim(2) != 2 * low.dim(2) || skip.dim(3) != 2 * low.dim(3))
            throw ShapeError("unet_up: skip " + skip.shape_str() + " is not 2x the low input " +
                             low.shape_str());
        low_h = low.dim(2);
        low_w = low.dim(3);
        auto cat = concat_channels(skip, bilinear_upsample(low, 2));
        auto t = activation(conv1.forward(cat, grad), Act::kRelu);
        if (grad) relu1_cache = t;
        t = activation(conv2.forward(t, grad), Act::kRelu);
        if (grad) relu2_cache = t;
        return t;
    }

    struct Grads {
        Tensor<T> g_low, g_skip;
    };

    Grads backward(const Tensor<T>& gy) {
        auto g = activation_backward(relu2_cache, gy, Act::kRelu);
        g = conv2.backward(g);
        g = activation_backward(relu1_cache, g, Act::kRelu);
        auto gcat = conv1.backward(g);
        Grads out;
        out.g_skip = slice_channels(gcat, 0, skip_channels);
        auto g_up = slice_channels(gcat, skip_channels, gcat.dim(1));
        out.g_low = bilinear_upsample_backward(g_up, low_h, low_w, 2);
        return out;
    }

    void collect(ParamList<T>& ps, const std::string& prefix) {
        conv1.collect(ps, prefix + ".conv1");
        conv2.collect(ps, prefix + ".conv2");
    }
};

template <typename T>
struct Decoder {
    UnetUp<T> up4, up3, up2, up1;  // coarsest..finest
    Conv2dLayer<T> refine;         // extra 3x3 stage after the final x2 resize
    Conv2dLayer<T> head;           // 1x1 to num_classes
    Tensor<T> refine_relu_cache;
    int half_h = 0, half_w = 0;

    Decoder() = default;
    explicit Decoder(const ModelConfig& cfg) {
        const auto& f = cfg.decoder_filters;
        up4 = UnetUp<T>(cfg.pyramid_channels(4), cfg.pyramid_channels(5), f[3]);
        up3 = UnetUp<T>(cfg.pyramid_channels(3), f[3], f[2]);
        up2 = UnetUp<T>(cfg.pyramid_channels(2), f[2], f[1]);
        up1 = UnetUp<T>(cfg.pyramid_channels(1), f[1], f[0]);
        refine = Conv2dLayer<T>(conv_spec(f[0], f[0], 3, 1, 1, true));
        head = Conv2dLayer<T>(conv_spec(f[0], cfg.num_classes, 1, 1, 0, true));
    }

    void init(Rng& rng) {
        up4.init(rng);
        up3.init(rng);
        up2.init(rng);
        up1.init(rng);
        refine.init(rng);
        head.init(rng);
    }

    Tensor<T> forward(const FeaturePyramid<T>& p, Mode, bool grad) {
        auto t = up4.forward(p.feat5, p.feat4, grad);
        t = up3.forward(t, p.feat3, grad);
        t = up2.forward(t, p.feat2, grad);
        t = up1.forward(t, p.feat1, grad);
        half_h = t.dim(2);
        half_w = t.dim(3);
        t = bilinear_upsample(t, 2);  // feat1 sits at stride 2
        t = activation(refine.forward(t, grad), Act::kRelu);
        if (grad) refine_relu_cache = t;
        return head.forward(t, grad);  // raw logits, no softmax
    }

    FeaturePyramid<T> backward(const Tensor<T>& g_logits) {
        auto g = head.backward(g_logits);
        g = activation_backward(refine_relu_cache, g, Act::kRelu);
        g = refine.backward(g);
        g = bilinear_upsample_backward(g, half_h, half_w, 2);
        FeaturePyramid<T> gp;
        auto g1 = up1.backward(g);
        gp.feat1 = std::move(g1.g_skip);
        auto g2 = up2.backward(g1.g_low);
        gp.feat2 = std::move(g2.g_skip);
        auto g3 = up3.backward(g2.g_low);
        gp.feat3 = std::move(g3.g_skip);
        auto g4 = up4.backward(g3.g_low);
        gp.feat4 = std::move(g4.g_skip);
        gp.feat5 = std::move(g4.g_low);
        return gp;
    }

    void collect(ParamList<T>& ps, const std::string& prefix) {
        up4.collect(ps, prefix + ".up4");
        up3.collect(ps, prefix + ".up3");
        up2.collect(ps, prefix + ".up2");
        up1.collect(ps, prefix + ".up1");
        refine.collect(ps, prefix + ".refine");
        head.collect(ps, prefix + ".head");
    }
};

}  // namespace gcaru
