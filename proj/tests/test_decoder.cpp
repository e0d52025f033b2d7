#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gcaru/decoder.hpp"
#include "support/oracles.hpp"

using namespace gcaru;
using oracle::max_abs_diff;
using oracle::random_tensor;

namespace {

template <typename T>
double grad_norm(const Tensor<T>& g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) acc += static_cast<double>(g[i]) * g[i];
    return std::sqrt(acc);
}

template <typename T>
FeaturePyramid<T> random_pyramid(Rng& rng, const ModelConfig& cfg, int b, int size) {
    FeaturePyramid<T> p;
    p.feat1 = random_tensor<T>(rng, {b, cfg.pyramid_channels(1), size / 2, size / 2});
    p.feat2 = random_tensor<T>(rng, {b, cfg.pyramid_channels(2), size / 4, size / 4});
    p.feat3 = random_tensor<T>(rng, {b, cfg.pyramid_channels(3), size / 8, size / 8});
    p.feat4 = random_tensor<T>(rng, {b, cfg.pyramid_channels(4), size / 16, size / 16});
    p.feat5 = random_tensor<T>(rng, {b, cfg.pyramid_channels(5), size / 32, size / 32});
    return p;
}

}  // namespace

TEST_CASE("unet_up: shape arithmetic of the coarsest fusion block") {
    Rng rng(50);
    UnetUp<float> up(1024, 2048, 512);
    up.init(rng);
    auto low = random_tensor<float>(rng, {1, 2048, 7, 7}, -0.1, 0.1);
    auto skip = random_tensor<float>(rng, {1, 1024, 14, 14}, -0.1, 0.1);
    auto y = up.forward(low, skip, false);
    CHECK(y.dims() == std::vector<int>{1, 512, 14, 14});
}

TEST_CASE("unet_up: zero weights and biases give a zero output") {
    UnetUp<double> up(4, 8, 6);  // weights default-initialized to zero
    Rng rng(51);
    auto low = random_tensor<double>(rng, {1, 8, 4, 4});
    auto skip = random_tensor<double>(rng, {1, 4, 8, 8});
    auto y = up.forward(low, skip, false);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("unet_up: spatial mismatch between skip and low is a shape error") {
    UnetUp<double> up(4, 8, 6);
    Rng rng(52);
    auto low = random_tensor<double>(rng, {1, 8, 4, 4});
    auto skip = random_tensor<double>(rng, {1, 4, 9, 8});
    CHECK_THROWS_AS(up.forward(low, skip, false), ShapeError);
}

TEST_CASE("unet_up: matches the composition of primitive oracles") {
    Rng rng(53);
    UnetUp<double> up(4, 8, 6);
    up.init(rng);
    auto low = random_tensor<double>(rng, {2, 8, 4, 5});
    auto skip = random_tensor<double>(rng, {2, 4, 8, 10});
    auto y = up.forward(low, skip, false);

    auto cat = concat_channels(skip, oracle::bilinear(low, 2));
    auto t = oracle::relu(oracle::conv2d(cat, up.conv1.weight, &up.conv1.bias, 1, 1));
    t = oracle::relu(oracle::conv2d(t, up.conv2.weight, &up.conv2.bias, 1, 1));
    CHECK(max_abs_diff(y, t) <= 1e-6);
}

TEST_CASE("decoder: restores full input resolution with num_classes channels") {
    ModelConfig cfg;  // full-depth channel profile
    cfg.num_classes = 9;
    Decoder<float> dec(cfg);
    Rng rng(54);
    dec.init(rng);
    auto p = random_pyramid<float>(rng, cfg, 2, 224);
    auto logits = dec.forward(p, Mode::kEval, false);
    CHECK(logits.dims() == std::vector<int>{2, 9, 224, 224});
}

TEST_CASE("decoder: logits are raw scores, not probabilities") {
    ModelConfig cfg;
    cfg.make_mini();
    Decoder<float> dec(cfg);
    Rng rng(55);
    dec.init(rng);
    // push the head bias far outside (0,1)
    dec.head.bias.fill(25.0f);
    auto p = random_pyramid<float>(rng, cfg, 1, 64);
    auto logits = dec.forward(p, Mode::kEval, false);
    float mx = logits[0], mn = logits[0];
    double sum0 = 0.0;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        mx = std::max(mx, logits[i]);
        mn = std::min(mn, logits[i]);
    }
    for (int c = 0; c < cfg.num_classes; ++c) sum0 += logits(0, c, 0, 0);
    CHECK(mx > 1.0f);
    CHECK(sum0 != doctest::Approx(1.0));
}

TEST_CASE("decoder: bitwise deterministic forward") {
    ModelConfig cfg;
    cfg.make_mini();
    Decoder<float> dec(cfg);
    Rng rng(56);
    dec.init(rng);
    Rng drng(57);
    auto p = random_pyramid<float>(drng, cfg, 1, 64);
    auto a = dec.forward(p, Mode::kEval, false);
    auto b = dec.forward(p, Mode::kEval, false);
    bool equal = true;
    for (std::size_t i = 0; i < a.numel(); ++i) equal = equal && a[i] == b[i];
    CHECK(equal);
}

TEST_CASE("decoder: gradient flows to every pyramid level") {
    ModelConfig cfg;
    cfg.make_mini();
    Decoder<float> dec(cfg);
    Rng rng(58);
    dec.init(rng);
    auto p = random_pyramid<float>(rng, cfg, 1, 64);
    auto logits = dec.forward(p, Mode::kEval, true);
    auto g_log = random_tensor<float>(rng, logits.dims());
    ParamList<float> ps;
    dec.collect(ps, "decoder");
    zero_grads(ps);
    auto gp = dec.backward(g_log);
    CHECK(grad_norm(gp.feat1) > 0.0);
    CHECK(grad_norm(gp.feat2) > 0.0);
    CHECK(grad_norm(gp.feat3) > 0.0);
    CHECK(grad_norm(gp.feat4) > 0.0);
    CHECK(grad_norm(gp.feat5) > 0.0);
    CHECK(gp.feat1.dims() == p.feat1.dims());
    CHECK(gp.feat5.dims() == p.feat5.dims());
}
