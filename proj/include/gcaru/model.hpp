#pragma once

#include "gcaru/config.hpp"
#include "gcaru/decoder.hpp"
#include "gcaru/resnet.hpp"

namespace gcaru {

// Full segmentation network: encoder pyramid + decoder head.
template <typename T>
struct SegModel {
    ModelConfig cfg;
    Backbone<T> backbone;
    Decoder<T> decoder;

    SegModel() = default;
    explicit SegModel(const ModelConfig& c) : cfg(c), backbone(c), decoder(c) {
        cfg.validate();
    }

    void init() {
        Rng rng(cfg.seed);
        backbone.init(rng);
        decoder.init(rng);
    }

    // Accepts (B,1,S,S) or (B,3,S,S); grayscale is replicated to 3 channels.
    Tensor<T> forward(const Tensor<T>& image, Mode mode, bool grad = false) {
        if (image.ndim() != 4 || (image.dim(1) != 1 && image.dim(1) != 3))
            throw InputError("model: expected 1- or 3-channel input, got " + image.shape_str());
        const Tensor<T>* x = &image;
        Tensor<T> replicated;
        if (image.dim(1) == 1) {
            replicated = Tensor<T>({image.dim(0), 3, image.dim(2), image.dim(3)});
            for (int c = 0; c < 3; ++c) write_channels(replicated, image, c);
            x = &replicated;
        }
        auto pyramid = backbone.forward(*x, mode, grad);
        return decoder.forward(pyramid, mode, grad);
    }

    Tensor<T> backward(const Tensor<T>& g_logits) {
        return backbone.backward(decoder.backward(g_logits));
    }

    ParamList<T> params() {
        ParamList<T> ps;
        backbone.collect(ps, "backbone");
        decoder.collect(ps, "decoder");
        return ps;
    }

    void zero_grad() {
        auto ps = params();
        zero_grads(ps);
    }
};

}  // namespace gcaru
