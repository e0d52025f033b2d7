#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gcaru/attention.hpp"
#include "support/attn_oracles.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace gcaru;
using oracle::max_abs_diff;
using oracle::random_tensor;

namespace {

Gca<double> make_gca(Rng& rng, int channels, int groups, int reduction, int min_hidden = 1) {
    GcaConfig cfg;
    cfg.channels = channels;
    cfg.groups = groups;
    cfg.reduction = reduction;
    cfg.min_hidden = min_hidden;
    Gca<double> m(cfg);
    m.init(rng);
    // randomize BN affine + running stats so eval-mode comparisons are non-trivial
    m.bn.gamma = random_tensor<double>(rng, {cfg.hidden()}, 0.5, 1.5);
    m.bn.beta = random_tensor<double>(rng, {cfg.hidden()}, -0.4, 0.4);
    m.bn.running_mean = random_tensor<double>(rng, {cfg.hidden()}, -0.3, 0.3);
    m.bn.running_var = random_tensor<double>(rng, {cfg.hidden()}, 0.5, 2.0);
    return m;
}

double dot_all(const Tensor<double>& a, const Tensor<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

TEST_CASE("gca_descriptors: constant input gives constant descriptors, fused 2c") {
    auto x = Tensor<double>::full({2, 3, 4, 5}, 1.75);
    auto d = gca_descriptors(x);
    for (std::size_t i = 0; i < d.f_h_avg.numel(); ++i) {
        CHECK(d.f_h_avg[i] == doctest::Approx(1.75));
        CHECK(d.f_h_max[i] == 1.75);
        CHECK(d.f_h[i] == doctest::Approx(3.5));
    }
    for (std::size_t i = 0; i < d.f_w_avg.numel(); ++i) {
        CHECK(d.f_w_avg[i] == doctest::Approx(1.75));
        CHECK(d.f_w[i] == doctest::Approx(3.5));
    }
}

TEST_CASE("gca_descriptors: 1x1 spatial input degenerates to the input itself") {
    Rng rng(20);
    auto x = random_tensor<double>(rng, {1, 4, 1, 1});
    auto d = gca_descriptors(x);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(d.f_h_avg[i] == x[i]);
        CHECK(d.f_h_max[i] == x[i]);
        CHECK(d.f_w_avg[i] == x[i]);
        CHECK(d.f_w_max[i] == x[i]);
        CHECK(d.f_h[i] == doctest::Approx(2.0 * x[i]));

        CHECK(d.f_w[i] == doctest::Approx(2.0 * x[i]));
    }
}

TEST_CASE("gca_descriptors: avg <= max per direction") {
    Rng rng(21);
    auto x = random_tensor<double>(rng, {2, 6, 5, 7});
    auto d = gca_descriptors(x);
    for (std::size_t i = 0; i < d.f_h_avg.numel(); ++i) CHECK(d.f_h_avg[i] <= d.f_h_max[i]);
    for (std::size_t i = 0; i < d.f_w_avg.numel(); ++i) CHECK(d.f_w_avg[i] <= d.f_w_max[i]);
}

TEST_CASE("gca_excite: zero conv weights and identity BN give 0.5 maps") {
    Rng rng(22);
    auto x = random_tensor<double>(rng, {2, 4, 3, 5});
    auto d = gca_descriptors(x);
    Tensor<double> w_reduce({2, 4, 1, 1});  // zeros
    Tensor<double> w_expand({4, 2, 1, 1});
    BatchNormState<double> bn(2);
    bn.init_stats();
    auto maps = gca_excite(d, w_reduce, w_expand, bn, Mode::kEval);
    CHECK(maps.a_h.dims() == std::vector<int>{2, 4, 3, 1});
    CHECK(maps.a_w.dims() == std::vector<int>{2, 4, 1, 5});
    for (std::size_t i = 0; i < maps.a_h.numel(); ++i) CHECK(maps.a_h[i] == doctest::Approx(0.5));
    for (std::size_t i = 0; i < maps.a_w.numel(); ++i) CHECK(maps.a_w[i] == doctest::Approx(0.5));
}

TEST_CASE("gca_excite: outputs strictly inside (0,1) for random weights") {
    Rng rng(23);
    auto x = random_tensor<double>(rng, {2, 6, 4, 4});
    auto d = gca_descriptors(x);
    auto w_reduce = random_tensor<double>(rng, {3, 6, 1, 1});
    auto w_expand = random_tensor<double>(rng, {6, 3, 1, 1});
    BatchNormState<double> bn(3);
    bn.init_stats();
    auto maps = gca_excite(d, w_reduce, w_expand, bn, Mode::kEval);
    for (std::size_t i = 0; i < maps.a_h.numel(); ++i) {
        CHECK(maps.a_h[i] > 0.0);
        CHECK(maps.a_h[i] < 1.0);
    }
    for (std::size_t i = 0; i < maps.a_w.numel(); ++i) {
        CHECK(maps.a_w[i] > 0.0);
        CHECK(maps.a_w[i] < 1.0);
    }
}

TEST_CASE("gca_apply: all-ones maps are the identity, zero map annihilates") {
    Rng rng(24);
    auto x = random_tensor<double>(rng, {1, 3, 4, 5});
    AttentionMaps<double> ones{Tensor<double>::full({1, 3, 4, 1}, 1.0),
                               Tensor<double>::full({1, 3, 1, 5}, 1.0)};
    auto y = gca_apply(x, ones);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

    AttentionMaps<double> zeros{Tensor<double>::zeros({1, 3, 4, 1}),
                                Tensor<double>::full({1, 3, 1, 5}, 0.7)};
    auto z = gca_apply(x, zeros);
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("gca_apply: matches the explicit broadcast loop exactly") {
    Rng rng(25);
    auto x = random_tensor<double>(rng, {2, 3, 4, 5});
    AttentionMaps<double> maps{random_tensor<double>(rng, {2, 3, 4, 1}, 0.0, 1.0),
                               random_tensor<double>(rng, {2, 3, 1, 5}, 0.0, 1.0)};
    auto y = gca_apply(x, maps);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 5; ++j)
                    CHECK(y(b, c, i, j) == x(b, c, i, j) * maps.a_h(b, c, i, 0) * maps.a_w(b, c, 0, j));
}

TEST_CASE("gca module: G=1 degenerates to ungrouped attention with the input's shape") {
    Rng rng(26);
    auto m = make_gca(rng, 8, 1, 2);
    auto x = random_tensor<double>(rng, {2, 8, 5, 6});
    auto y = m.forward(x, Mode::kEval, false);
    CHECK(y.same_shape(x));
}

TEST_CASE("gca module: invalid channel/group combination is a config error") {
    GcaConfig cfg;
    cfg.channels = 10;
    cfg.groups = 4;
    CHECK_THROWS_AS((Gca<double>{cfg}), ConfigError);
}

TEST_CASE("gca module: group locality under perturbation, train and eval") {
    for (int groups : {2, 4}) {
        for (Mode mode : {Mode::kTrain, Mode::kEval}) {
            Rng rng(27);
            auto m = make_gca(rng, 16, groups, 2);
            auto x = random_tensor<double>(rng, {2, 16, 6, 6});
            auto bn_snapshot = m.bn;  // train mode mutates running stats
            auto y1 = m.forward(x, mode, false);
            m.bn = bn_snapshot;

            const int cg = 16 / groups;
            auto x2 = x;
            // perturb all channels of group 1 only
            for (int b = 0; b < 2; ++b)
                for (int c = cg; c < 2 * cg; ++c)
                    for (int i = 0; i < 6; ++i)
                        for (int j = 0; j < 6; ++j) x2(b, c, i, j) += 0.37 * (c + i + j + 1);
            auto y2 = m.forward(x2, mode, false);
            m.bn = bn_snapshot;

            // every group except group 1 must be bitwise unchanged
            for (int b = 0; b < 2; ++b)
                for (int c = 0; c < 16; ++c) {
                    if (c >= cg && c < 2 * cg) continue;
                    for (int i = 0; i < 6; ++i)
                        for (int j = 0; j < 6; ++j) CHECK(y1(b, c, i, j) == y2(b, c, i, j));
                }
        }
    }
}

TEST_CASE("gca module: matches the full brute-force oracle of the equation chain") {
    Rng rng(28);
    auto m = make_gca(rng, 16, 4, 2);
    auto x = random_tensor<double>(rng, {2, 16, 8, 8});
    for (bool train : {false, true}) {
        auto bn_snapshot = m.bn;
        auto y = m.forward(x, train ? Mode::kTrain : Mode::kEval, false);
        m.bn = bn_snapshot;
        auto ref = oracle::gca_forward(x, 4, m.cfg.hidden(), m.w_reduce, m.w_expand, m.bn.gamma,
                                       m.bn.beta, m.bn.running_mean, m.bn.running_var,
                                       m.bn.epsilon, train);
        CHECK(max_abs_diff(y, ref) <= 1e-6);
    }
}

TEST_CASE("gca module: agrees with the per-group spec-op composition") {
    Rng rng(29);
    auto m = make_gca(rng, 12, 3, 2);
    auto x = random_tensor<double>(rng, {2, 12, 5, 7});
    auto y = m.forward(x, Mode::kEval, false);

    const int cg = 4, hidden = m.cfg.hidden();
    Tensor<double> expect(x.dims());
    for (int g = 0; g < 3; ++g) {
        auto xg = slice_channels(x, g * cg, (g + 1) * cg);
        auto d = gca_descriptors(xg);
        Tensor<double> wr({hidden, cg, 1, 1}), we({cg, hidden, 1, 1});
        std::copy(m.w_reduce.data() + static_cast<std::size_t>(g) * hidden * cg,
                  m.w_reduce.data() + static_cast<std::size_t>(g + 1) * hidden * cg, wr.data());
        std::copy(m.w_expand.data() + static_cast<std::size_t>(g) * cg * hidden,
                  m.w_expand.data() + static_cast<std::size_t>(g + 1) * cg * hidden, we.data());
        auto bn_copy = m.bn;
        auto maps = gca_excite(d, wr, we, bn_copy, Mode::kEval);
        write_channels(expect, gca_apply(xg, maps), g * cg);
    }
    CHECK(max_abs_diff(y, expect) <= 1e-9);
}

TEST_CASE("gca module: permuting whole groups permutes the output groups") {
    Rng rng(30);
    const int groups = 4, cg = 4, channels = 16;
    auto m = make_gca(rng, channels, groups, 2);
    auto x = random_tensor<double>(rng, {2, channels, 5, 5});
    auto y = m.forward(x, Mode::kEval, false);

    const int perm[4] = {2, 0, 3, 1};  // new position -> old group
    auto m2 = m;
    const int hidden = m.cfg.hidden();
    for (int g = 0; g < groups; ++g) {
        std::copy(m.w_reduce.data() + static_cast<std::size_t>(perm[g]) * hidden * cg,
                  m.w_reduce.data() + static_cast<std::size_t>(perm[g] + 1) * hidden * cg,
                  m2.w_reduce.data() + static_cast<std::size_t>(g) * hidden * cg);
        std::copy(m.w_expand.data() + static_cast<std::size_t>(perm[g]) * cg * hidden,
                  m.w_expand.data() + static_cast<std::size_t>(perm[g] + 1) * cg * hidden,
                  m2.w_expand.data() + static_cast<std::size_t>(g) * cg * hidden);
    }
    Tensor<double> x2(x.dims());
    for (int g = 0; g < groups; ++g)
        write_channels(x2, slice_channels(x, perm[g] * cg, (perm[g] + 1) * cg), g * cg);

    auto y2 = m2.forward(x2, Mode::kEval, false);
    for (int g = 0; g < groups; ++g) {
        auto got = slice_channels(y2, g * cg, (g + 1) * cg);
        auto want = slice_channels(y, perm[g] * cg, (perm[g] + 1) * cg);
        CHECK(max_abs_diff(got, want) <= 1e-12);
    }
}

TEST_CASE("gca module: attenuation-only |Y| <= |X| and maps inside (0,1)") {
    Rng rng(31);
    auto m = make_gca(rng, 8, 2, 2);
    m.capture_maps = true;
    auto x = random_tensor<double>(rng, {2, 8, 6, 6});
    auto y = m.forward(x, Mode::kEval, false);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y[i]) <= std::abs(x[i]));
    REQUIRE(m.captured_maps.size() == 2);
    for (const auto& a : m.captured_maps)
        for (std::size_t i = 0; i < a.numel(); ++i) {
            CHECK(a[i] > 0.0);
            CHECK(a[i] < 1.0);
        }
}

TEST_CASE("gca module: parameter count matches G*2*Cg*h + 2h") {
    Rng rng(32);
    for (auto [c, g, r, mh] : {std::tuple{256, 4, 16, 4}, std::tuple{64, 4, 16, 4},
                               std::tuple{16, 2, 2, 1}}) {
        GcaConfig cfg;
        cfg.channels = c;
        cfg.groups = g;
        cfg.reduction = r;
        cfg.min_hidden = mh;
        Gca<double> m(cfg);
        ParamList<double> ps;
        m.collect(ps, "attn");
        const int h = cfg.hidden();
        CHECK(trainable_count(ps) ==
              static_cast<std::size_t>(g) * 2u * cfg.group_channels() * h + 2u * h);
    }
}

TEST_CASE("gca module: gradient matches finite differences (train mode)") {
    Rng rng(33);
    auto m = make_gca(rng, 8, 2, 2);
    auto x = random_tensor<double>(rng, {1, 8, 4, 4});
    auto dir = random_tensor<double>(rng, x.dims());

    auto bn_snapshot = m.bn;
    auto y = m.forward(x, Mode::kTrain, true);
    m.gw_reduce.fill(0);
    m.gw_expand.fill(0);
    m.ggamma.fill(0);
    m.gbeta.fill(0);
    auto gx = m.backward(dir);

    auto loss_x = [&](const Tensor<double>& t) {
        auto mm = m;
        mm.bn = bn_snapshot;
        return dot_all(mm.forward(t, Mode::kTrain, false), dir);
    };
    CHECK(gradcheck::check(loss_x, x, gx).max_rel_err < 1e-4);

    auto loss_wr = [&](const Tensor<double>& t) {
        auto mm = m;
        mm.bn = bn_snapshot;
        mm.w_reduce = t;
        return dot_all(mm.forward(x, Mode::kTrain, false), dir);
    };
    CHECK(gradcheck::check(loss_wr, m.w_reduce, m.gw_reduce).max_rel_err < 1e-4);

    auto loss_gamma = [&](const Tensor<double>& t) {
        auto mm = m;
        mm.bn = bn_snapshot;
        mm.bn.gamma = t;
        return dot_all(mm.forward(x, Mode::kTrain, false), dir);
    };
    CHECK(gradcheck::check(loss_gamma, bn_snapshot.gamma, m.ggamma).max_rel_err < 1e-4);
}

TEST_CASE("attention wrapper: variant none is the identity") {
    Rng rng(34);
    AttnSettings s;
    auto a = Attention<double>::make(AttnVariant::kNone, 8, s);
    auto x = random_tensor<double>(rng, {2, 8, 4, 4});
    auto y = a.forward(x, Mode::kEval, false);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
    auto g = a.backward(x);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(g[i] == x[i]);
}

TEST_CASE("se: zero weights scale the input by sigma(0) = 0.5") {
    Rng rng(35);
    Se<double> se(8, 4);  // weights default to zero
    auto x = random_tensor<double>(rng, {2, 8, 3, 3});
    auto y = se.forward(x, Mode::kEval, false);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(0.5 * x[i]));
}

TEST_CASE("se / cbam / coordatt: match their naive-loop oracles") {
    Rng rng(36);
    auto x = random_tensor<double>(rng, {2, 8, 6, 5});

    Se<double> se(8, 4);
    se.init(rng);
    CHECK(max_abs_diff(se.forward(x, Mode::kEval, false), oracle::se_forward(x, se.w1, se.w2)) <=
          1e-6);

    Cbam<double> cb(8, 4);
    cb.init(rng);
    CHECK(max_abs_diff(cb.forward(x, Mode::kEval, false),
                       oracle::cbam_forward(x, cb.w1, cb.w2, cb.w_spatial)) <= 1e-6);

    CoordAtt<double> ca(8, 4);
    ca.init(rng);
    ca.bn.gamma = random_tensor<double>(rng, {ca.mid}, 0.5, 1.5);
    ca.bn.beta = random_tensor<double>(rng, {ca.mid}, -0.3, 0.3);
    ca.bn.running_mean = random_tensor<double>(rng, {ca.mid}, -0.2, 0.2);
    ca.bn.running_var = random_tensor<double>(rng, {ca.mid}, 0.5, 1.5);
    for (bool train : {false, true}) {
        auto snap = ca.bn;
        auto y = ca.forward(x, train ? Mode::kTrain : Mode::kEval, false);
        ca.bn = snap;
        auto ref = oracle::coordatt_forward(x, ca.w1, ca.wh, ca.ww_, ca.bn.gamma, ca.bn.beta,
                                            ca.bn.running_mean, ca.bn.running_var, ca.bn.epsilon,
                                            train);
        CHECK(max_abs_diff(y, ref) <= 1e-6);
    }
}

TEST_CASE("all attention variants preserve the input shape") {
    Rng rng(37);
    AttnSettings s;
    s.gca.groups = 4;
    s.gca.reduction = 4;
    s.gca.min_hidden = 1;
    s.baseline_reduction = 4;
    auto x = random_tensor<double>(rng, {2, 16, 7, 5});
    for (AttnVariant v : {AttnVariant::kNone, AttnVariant::kSe, AttnVariant::kCbam,
                          AttnVariant::kCoordAtt, AttnVariant::kGca}) {
        auto a = Attention<double>::make(v, 16, s);
        a.init(rng);
        auto y = a.forward(x, Mode::kTrain, false);
        CHECK(y.same_shape(x));
    }
}

TEST_CASE("baseline gradients match finite differences") {
    Rng rng(38);
    AttnSettings s;
    s.gca.groups = 2;
    s.gca.reduction = 2;
    s.gca.min_hidden = 1;
    s.baseline_reduction = 2;
    auto x = random_tensor<double>(rng, {1, 6, 4, 4});
    auto dir = random_tensor<double>(rng, x.dims());
    for (AttnVariant v : {AttnVariant::kSe, AttnVariant::kCbam, AttnVariant::kCoordAtt}) {
        auto a = Attention<double>::make(v, 6, s);
        a.init(rng);
        a.forward(x, Mode::kTrain, true);
        auto gx = a.backward(dir);
        auto loss_x = [&](const Tensor<double>& t) {
            auto aa = a;
            return dot_all(aa.forward(t, Mode::kTrain, false), dir);
        };
        auto r = gradcheck::check(loss_x, x, gx);
        INFO("variant ", attn_name(v), " worst ", r.max_rel_err);
        CHECK(r.max_rel_err < 1e-4);
    }
}

TEST_CASE("unknown attention tag rejected with the valid list") {
    CHECK_THROWS_AS(parse_attn("swin"), ConfigError);
    CHECK(parse_attn("cbam") == AttnVariant::kCbam);
}
