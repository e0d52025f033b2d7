#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gcaru/ops.hpp"
#include "gcaru/params.hpp"
#include "gcaru/rng.hpp"

// Grouped Coordinate Attention plus the SE / CBAM / CoordAtt baselines used
// by the ablation harness. All variants are pure reweightings: output shape
// always equals input shape.
namespace gcaru {

enum class AttnVariant { kNone, kSe, kCbam, kCoordAtt, kGca };

inline const char* attn_name(AttnVariant v) {
    switch (v) {
        case AttnVariant::kNone: return "none";
        case AttnVariant::kSe: return "se";
        case AttnVariant::kCbam: return "cbam";
        case AttnVariant::kCoordAtt: return "coordatt";
        case AttnVariant::kGca: return "gca";
    }
    return "?";
}

inline AttnVariant parse_attn(const std::string& s) {
    if (s == "none") return AttnVariant::kNone;
    if (s == "se") return AttnVariant::kSe;
    if (s == "cbam") return AttnVariant::kCbam;
    if (s == "coordatt") return AttnVariant::kCoordAtt;
    if (s == "gca") return AttnVariant::kGca;
    throw ConfigError("unknown attention variant '" + s +
                      "' (valid: none, se, cbam, coordatt, gca)");
}

struct GcaConfig {
    int channels = 0;
    int groups = 4;
    int reduction = 16;
    int min_hidden = 4;

    int group_channels() const { return channels / groups; }
    int hidden() const { return std::max(group_channels() / reduction, min_hidden); }

    void validate() const {
        if (channels < 1 || groups < 1 || channels % groups != 0)
            throw ConfigError("gca: channels " + std::to_string(channels) +
                              " not divisible by groups " + std::to_string(groups));
        if (reduction < 1 || min_hidden < 1 || hidden() < 1)
            throw ConfigError("gca: excitation width would be < 1");
    }
};

namespace detail {

template <typename T>
void he_init(Tensor<T>& w, Rng& rng) {
    const double fan_in = static_cast<double>(w.dim(1)) * w.dim(2) * w.dim(3);
    const double stddev = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, stddev));
}

// Concatenate along dim 2; both operands must have trailing dim 1.
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
    GCARU_CHECK(a.dim(3) == 1 && b.dim(3) == 1 && a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1));
    Tensor<T> out({a.dim(0), a.dim(1), a.dim(2) + b.dim(2), 1});
    for (int bb = 0; bb < a.dim(0); ++bb)
        for (int c = 0; c < a.dim(1); ++c) {
            std::copy(a.data() + a.idx4(bb, c, 0, 0), a.data() + a.idx4(bb, c, 0, 0) + a.dim(2),
                      out.data() + out.idx4(bb, c, 0, 0));
            std::copy(b.data() + b.idx4(bb, c, 0, 0), b.data() + b.idx4(bb, c, 0, 0) + b.dim(2),
                      out.data() + out.idx4(bb, c, a.dim(2), 0));
        }
    return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int r0, int r1) {
    Tensor<T> out({x.dim(0), x.dim(1), r1 - r0, 1});
    for (int b = 0; b < x.dim(0); ++b)
        for (int c = 0; c < x.dim(1); ++c)
            std::copy(x.data() + x.idx4(b, c, r0, 0), x.data() + x.idx4(b, c, r1, 0),
                      out.data() + out.idx4(b, c, 0, 0));
    return out;
}

template <typename T>
Tensor<T> ew_mul(const Tensor<T>& a, const Tensor<T>& b) {
    GCARU_CHECK(a.same_shape(b));
    Tensor<T> out(a.dims());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Spec-level GCA building blocks (forward semantics on a single group)
// ---------------------------------------------------------------------------

template <typename T>
struct DirectionalDescriptors {
    Tensor<T> f_h_avg, f_h_max;  // B x Cg x H x 1
    Tensor<T> f_w_avg, f_w_max;  // B x Cg x 1 x W
    Tensor<T> f_h, f_w;          // fused: avg + max
};

template <typename T>
struct AttentionMaps {
    Tensor<T> a_h;  // B x Cg x H x 1
    Tensor<T> a_w;  // B x Cg x 1 x W
};

template <typename T>
DirectionalDescriptors<T> gca_descriptors(const Tensor<T>& xg) {
    DirectionalDescriptors<T> d;
    d.f_h_avg = directional_pool(xg, Axis::kHorizontal, PoolMode::kAvg);
    d.f_h_max = directional_pool(xg, Axis::kHorizontal, PoolMode::kMax);
    d.f_w_avg = directional_pool(xg, Axis::kVertical, PoolMode::kAvg);
    d.f_w_max = directional_pool(xg, Axis::kVertical, PoolMode::kMax);
    d.f_h = d.f_h_avg + d.f_h_max;
    d.f_w = d.f_w_avg + d.f_w_max;
    return d;
}

// Shared excitation: reduce-conv -> BN -> ReLU -> expand-conv -> sigmoid,
// applied with the same weights to both directions (h first, then w).
template <typename T>
AttentionMaps<T> gca_excite(const DirectionalDescriptors<T>& d, const Tensor<T>& w_reduce_g,
                            const Tensor<T>& w_expand_g, BatchNormState<T>& bn, Mode mode) {
    const int cg = w_reduce_g.dim(1), hidden = w_reduce_g.dim(0);
    const ConvSpec reduce = conv_spec(cg, hidden, 1, 1, 0);
    const ConvSpec expand = conv_spec(hidden, cg, 1, 1, 0);
    auto excite_one = [&](const Tensor<T>& f) {
        auto z = conv2d(f, reduce, w_reduce_g);
        z = batch_norm(z, bn, mode);
        z = activation(z, Act::kRelu);
        z = conv2d(z, expand, w_expand_g);
        return activation(z, Act::kSigmoid);
    };
    AttentionMaps<T> a;
    a.a_h = excite_one(d.f_h);
    // (B,Cg,1,W) and (B,Cg,W,1) share one flat layout; run the conv on the
    // column view and restore the row view after.
    auto fw_col = d.f_w.reshaped({d.f_w.dim(0), d.f_w.dim(1), d.f_w.dim(3), 1});
    a.a_w = excite_one(fw_col).reshaped(d.f_w.dims());
    return a;
}

template <typename T>
Tensor<T> gca_apply(const Tensor<T>& xg, const AttentionMaps<T>& a) {
    return mul_broadcast(mul_broadcast(xg, a.a_h), a.a_w);
}

// ---------------------------------------------------------------------------
// GCA module (grouped, differentiable)
// ---------------------------------------------------------------------------

template <typename T>
struct Gca {
    GcaConfig cfg;
    Tensor<T> w_reduce, gw_reduce;  // (G*hidden, Cg, 1, 1), grouped
    Tensor<T> w_expand, gw_expand;  // (C, hidden, 1, 1), grouped
    // One shared affine pair (the 2h learnable BN parameters); running
    // statistics are tracked per (direction, group) application context so
    // eval mode reproduces train-mode normalization and groups stay local.
    Tensor<T> bn_gamma, bn_beta;        // (hidden)
    Tensor<T> bn_rmean, bn_rvar;        // (2*G, hidden), row = dir*G + g
    T bn_momentum = T(0.1), bn_epsilon = T(1e-5);
    bool bn_stats_initialized = false;
    Tensor<T> ggamma, gbeta;
    bool force_identity = false;  // identity-bypass: emit all-ones maps
    bool capture_maps = false;    // debug dump of A_h / A_w
    std::vector<Tensor<T>> captured_maps;

    struct DirCache {
        Tensor<T> fused;                   // conv1 input (column view)
        std::vector<int> max_arg;          // argmax of the max descriptor
        std::vector<BnCache<T>> bn_group;  // one BN application per group
        Tensor<T> relu_out;                // conv2 input
        Tensor<T> attn;                    // sigmoid output (column view)
    };
    Tensor<T> x_cache, a_h_cache, a_w_cache;
    DirCache dir_cache[2];
    bool forced_cache = false;

    Gca() = default;
    explicit Gca(const GcaConfig& c)
        : cfg(c),
          w_reduce({c.groups * c.hidden(), c.group_channels(), 1, 1}),
          gw_reduce(w_reduce.dims()),
          w_expand({c.channels, c.hidden(), 1, 1}),
          gw_expand(w_expand.dims()),
          bn_gamma({c.hidden()}, T(1)),
          bn_beta({c.hidden()}),
          bn_rmean({2 * c.groups, c.hidden()}),
          bn_rvar({2 * c.groups, c.hidden()}, T(1)),
          ggamma({c.hidden()}),
          gbeta({c.hidden()}) {
        c.validate();
    }

    void init(Rng& rng) {
        detail::he_init(w_reduce, rng);
        detail::he_init(w_expand, rng);
        bn_gamma.fill(T(1));
        bn_beta.fill(T(0));
        bn_rmean.fill(T(0));
        bn_rvar.fill(T(1));
        bn_stats_initialized = true;
    }

    ConvSpec reduce_spec() const {
        ConvSpec s = conv_spec(cfg.channels, cfg.groups * cfg.hidden(), 1, 1, 0);
        s.groups = cfg.groups;
        return s;
    }
    ConvSpec expand_spec() const {
        ConvSpec s = conv_spec(cfg.groups * cfg.hidden(), cfg.channels, 1, 1, 0);
        s.groups = cfg.groups;
        return s;
    }

    // One direction of the excitation over all groups at once. BN statistics
    // live per (direction, group) context, so group locality holds even in
    // train mode; gamma/beta are shared across every context.
    Tensor<T> excite_dir(const Tensor<T>& fused, int dir, Mode mode, bool grad, DirCache* dc) {
        const int hidden = cfg.hidden();
        auto z = conv2d(fused, reduce_spec(), w_reduce);
        if (dc) dc->bn_group.resize(cfg.groups);
        Tensor<T> zn(z.dims());
        for (int g = 0; g < cfg.groups; ++g) {
            auto part = slice_channels(z, g * hidden, (g + 1) * hidden);
            const std::size_t row = static_cast<std::size_t>(dir * cfg.groups + g) * hidden;
            auto out = batch_norm_ctx(part, bn_gamma, bn_beta, bn_rmean.data() + row,
                                      bn_rvar.data() + row, bn_stats_initialized, bn_momentum,
                                      bn_epsilon, mode, dc ? &dc->bn_group[g] : nullptr);
            write_channels(zn, out, g * hidden);
        }
        auto a = activation(zn, Act::kRelu);
        if (dc) dc->relu_out = a;
        auto z2 = conv2d(a, expand_spec(), w_expand);
        auto attn = activation(z2, Act::kSigmoid);
        if (dc) dc->attn = attn;
        (void)grad;
        return attn;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, bool grad) {
        if (x.dim(1) != cfg.channels)
            throw ConfigError("gca: input has " + std::to_string(x.dim(1)) +
                              " channels, config expects " + std::to_string(cfg.channels));
        if (grad) x_cache = x;
        forced_cache = force_identity;
        Tensor<T> a_h, a_w;
        if (force_identity) {
            a_h = Tensor<T>::full({x.dim(0), x.dim(1), x.dim(2), 1}, T(1));
            a_w = Tensor<T>::full({x.dim(0), x.dim(1), 1, x.dim(3)}, T(1));
        } else {
            // horizontal descriptors: collapse W
            auto h_avg = directional_pool(x, Axis::kHorizontal, PoolMode::kAvg);
            auto h_max = directional_pool(x, Axis::kHorizontal, PoolMode::kMax,
                                          grad ? &dir_cache[0].max_arg : nullptr);
            auto f_h = h_avg + h_max;
            if (grad) dir_cache[0].fused = f_h;
            a_h = excite_dir(f_h, 0, mode, grad, grad ? &dir_cache[0] : nullptr);

            // vertical descriptors: collapse H, run as column view
            auto w_avg = directional_pool(x, Axis::kVertical, PoolMode::kAvg);
            auto w_max = directional_pool(x, Axis::kVertical, PoolMode::kMax,
                                          grad ? &dir_cache[1].max_arg : nullptr);
            auto f_w = (w_avg + w_max).reshaped({x.dim(0), x.dim(1), x.dim(3), 1});
            if (grad) dir_cache[1].fused = f_w;
            a_w = excite_dir(f_w, 1, mode, grad, grad ? &dir_cache[1] : nullptr)
                      .reshaped({x.dim(0), x.dim(1), 1, x.dim(3)});
            if (mode == Mode::kTrain) bn_stats_initialized = true;
        }
        if (grad) {
            a_h_cache = a_h;
            a_w_cache = a_w;
        }
        if (capture_maps) {
            captured_maps.clear();
            captured_maps.push_back(a_h);
            captured_maps.push_back(a_w);
        }
        return mul_broadcast(mul_broadcast(x, a_h), a_w);
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        // direct product path
        auto gx = mul_broadcast(mul_broadcast(gy, a_h_cache), a_w_cache);
        if (forced_cache) return gx;

        auto xg = detail::ew_mul(x_cache, gy);
        auto ga_h = reduce_to(mul_broadcast(xg, a_w_cache), a_h_cache.dims());
        auto ga_w = reduce_to(mul_broadcast(xg, a_h_cache), a_w_cache.dims());

        backward_dir(ga_h, 0, gx);
        backward_dir(ga_w.reshaped({ga_w.dim(0), ga_w.dim(1), ga_w.dim(3), 1}), 1, gx);
        return gx;
    }

    void collect(ParamList<T>& ps, const std::string& prefix) {
        ps.push_back({prefix + ".reduce.weight", &w_reduce, &gw_reduce, true});
        ps.push_back({prefix + ".bn.gamma", &bn_gamma, &ggamma, true});
        ps.push_back({prefix + ".bn.beta", &bn_beta, &gbeta, true});
        ps.push_back({prefix + ".bn.running_mean", &bn_rmean, nullptr, false});
        ps.push_back({prefix + ".bn.running_var", &bn_rvar, nullptr, false});
        ps.push_back({prefix + ".expand.weight", &w_expand, &gw_expand, true});
    }

  private:
    void backward_dir(const Tensor<T>& ga, int d, Tensor<T>& gx) {
        DirCache& dc = dir_cache[d];
        const int hidden = cfg.hidden();
        auto gz2 = activation_backward(dc.attn, ga, Act::kSigmoid);
        auto g2 = conv2d_backward(dc.relu_out, expand_spec(), w_expand, gz2);
        gw_expand.add_(g2.gw);
        auto gzn = activation_backward(dc.relu_out, g2.gx, Act::kRelu);
        Tensor<T> gz(gzn.dims());
        for (int g = 0; g < cfg.groups; ++g) {
            auto part = slice_channels(gzn, g * hidden, (g + 1) * hidden);
            auto bg = batch_norm_backward(dc.bn_group[g], part);
            ggamma.add_(bg.ggamma);
            gbeta.add_(bg.gbeta);
            write_channels(gz, bg.gx, g * hidden);
        }
        auto g1 = conv2d_backward(dc.fused, reduce_spec(), w_reduce, gz);
        gw_reduce.add_(g1.gw);

        // fused = avg + max: route through both pools
        const Axis axis = d == 0 ? Axis::kHorizontal : Axis::kVertical;
        auto gf = d == 0 ? g1.gx
                         : g1.gx.reshaped({g1.gx.dim(0), g1.gx.dim(1), 1, g1.gx.dim(2)});
        gx.add_(directional_pool_backward(gf, x_cache.dims(), axis, PoolMode::kAvg));
        gx.add_(directional_pool_backward(gf, x_cache.dims(), axis, PoolMode::kMax, &dc.max_arg));
    }
};

// ---------------------------------------------------------------------------
// Squeeze-and-Excitation baseline
// ---------------------------------------------------------------------------

template <typename T>
struct Se {
    int channels = 0, hidden = 0;
    Tensor<T> w1, gw1;  // (hidden, C, 1, 1)
    Tensor<T> w2, gw2;  // (C, hidden, 1, 1)
    bool force_identity = false;

    Tensor<T> x_cache, pooled_cache, relu_cache, scale_cache;
    bool forced_cache = false;

    Se() = default;
    Se(int c, int reduction)
        : channels(c),
          hidden(std::max(c / reduction, 1)),
          w1({hidden, c, 1, 1}),
          gw1(w1.dims()),
          w2({c, hidden, 1, 1}),
          gw2(w2.dims()) {}

    void init(Rng& rng) {
        detail::he_init(w1, rng);
        detail::he_init(w2, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode, bool grad) {
        forced_cache = force_identity;
        if (grad) x_cache = x;
        if (force_identity) {
            scale_cache = Tensor<T>::full({x.dim(0), x.dim(1), 1, 1}, T(1));
            return mul_broadcast(x, scale_cache);
        }
        auto p = global_avg_pool(x);
        if (grad) pooled_cache = p;
        auto z = conv2d(p, conv_spec(channels, hidden, 1, 1, 0), w1);
        auto a = activation(z, Act::kRelu);
        if (grad) relu_cache = a;
        auto s = activation(conv2d(a, conv_spec(hidden, channels, 1, 1, 0), w2), Act::kSigmoid);
        if (grad) scale_cache = s;
        else scale_cache = s;
        return mul_broadcast(x, s);
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        auto gx = mul_broadcast(gy, scale_cache);
        if (forced_cache) return gx;
        auto gs = reduce_to(detail::ew_mul(gy, x_cache), scale_cache.dims());
        auto gz2 = activation_backward(scale_cache, gs, Act::kSigmoid);
        auto g2 = conv2d_backward(relu_cache, conv_spec(hidden, channels, 1, 1, 0), w2, gz2);
        gw2.add_(g2.gw);
        auto grelu_in = activation_backward(relu_cache, g2.gx, Act::kRelu);
        auto g1 = conv2d_backward(pooled_cache, conv_spec(channels, hidden, 1, 1, 0), w1, grelu_in);
        gw1.add_(g1.gw);
        // global average pool backward: spread over the plane
        const T inv = T(1) / static_cast<T>(x_cache.dim(2) * x_cache.dim(3));
        for (int b = 0; b < x_cache.dim(0); ++b)
            for (int c = 0; c < x_cache.dim(1); ++c) {
                const T g = g1.gx(b, c, 0, 0) * inv;
                T* p = gx.data() + gx.idx4(b, c, 0, 0);
                for (int i = 0; i < x_cache.dim(2) * x_cache.dim(3); ++i) p[i] += g;
            }
        return gx;
    }

    void collect(ParamList<T>& ps, const std::string& prefix) {
        ps.push_back({prefix + ".fc1.weight", &w1, &gw1, true});
        ps.push_back({prefix + ".fc2.weight", &w2, &gw2, true});
    }
};

// ---------------------------------------------------------------------------
// CBAM baseline: channel MLP on avg+max descriptors, then 7x7 spatial conv
// ---------------------------------------------------------------------------

template <typename T>
struct Cbam {
    int channels = 0, hidden = 0;
    Tensor<T> w1, gw1;          // (hidden, C, 1, 1), shared MLP
    Tensor<T> w2, gw2;          // (C, hidden, 1, 1)
    Tensor<T> w_spatial, gw_s;  // (1, 2, 7, 7)
    bool force_identity = false;

    Tensor<T> x_cache, avg_cache, max_cache, relu_a, relu_m, chan_scale, xc_cache,
        spat_in, spat_map;
    std::vector<int> gmax_arg, cmax_arg;
    bool forced_cache = false;

    Cbam() = default;
    Cbam(int c, int reduction)
        : channels(c),
          hidden(std::max(c / reduction, 1)),
          w1({hidden, c, 1, 1}),
          gw1(w1.dims()),
          w2({c, hidden, 1, 1}),
          gw2(w2.dims()),
          w_spatial({1, 2, 7, 7}),
          gw_s(w_spatial.dims()) {}

    void init(Rng& rng) {
        detail::he_init(w1, rng);
        detail::he_init(w2, rng);
        detail::he_init(w_spatial, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode, bool grad) {
        forced_cache = force_identity;
        if (grad) x_cache = x;
        if (force_identity) return x;
        const auto mlp = [&](const Tensor<T>& p, Tensor<T>* relu_keep) {
            auto a = activation(conv2d(p, conv_spec(channels, hidden, 1, 1, 0), w1), Act::kRelu);
            if (relu_keep) *relu_keep = a;
            return conv2d(a, conv_spec(hidden, channels, 1, 1, 0), w2);
        };
        auto pa = global_avg_pool(x);
        auto pm = global_max_pool(x, grad ? &gmax_arg : nullptr);
        if (grad) {
            avg_cache = pa;
            max_cache = pm;
        }
        auto s = activation(mlp(pa, grad ? &relu_a : nullptr) + mlp(pm, grad ? &relu_m : nullptr),
                            Act::kSigmoid);
        chan_scale = s;
        auto xc = mul_broadcast(x, s);
        if (grad) xc_cache = xc;

        auto sp = concat_channels(channel_mean(xc), channel_max(xc, grad ? &cmax_arg : nullptr));
        if (grad) spat_in = sp;
        auto m = activation(conv2d(sp, conv_spec(2, 1, 7, 1, 3), w_spatial), Act::kSigmoid);
        spat_map = m;
        return mul_broadcast(xc, m);
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (forced_cache) return gy;
        auto gxc = mul_broadcast(gy, spat_map);
        auto gm = reduce_to(detail::ew_mul(gy, xc_cache), spat_map.dims());
        auto gconv = activation_backward(spat_map, gm, Act::kSigmoid);
        auto gs = conv2d_backward(spat_in, conv_spec(2, 1, 7, 1, 3), w_spatial, gconv);
        gw_s.add_(gs.gw);
        // split spatial descriptor grads: mean plane then max plane
        const int h = x_cache.dim(2), w = x_cache.dim(3), c_n = channels;
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        for (int b = 0; b < x_cache.dim(0); ++b) {
            const T* gmean = gs.gx.data() + gs.gx.idx4(b, 0, 0, 0);
            const T* gmax = gs.gx.data() + gs.gx.idx4(b, 1, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                const T gm_each = gmean[i] / static_cast<T>(c_n);
                for (int c = 0; c < c_n; ++c) gxc.data()[gxc.idx4(b, c, 0, 0) + i] += gm_each;
                gxc.data()[gxc.idx4(b, cmax_arg[static_cast<std::size_t>(b) * plane + i], 0, 0) + i] +=
                    gmax[i];
            }
        }
        // channel attention stage
        auto gx = mul_broadcast(gxc, chan_scale);
        auto gsc = reduce_to(detail::ew_mul(gxc, x_cache), chan_scale.dims());
        auto gpre = activation_backward(chan_scale, gsc, Act::kSigmoid);
        auto back_mlp = [&](const Tensor<T>& relu_kept, const Tensor<T>& pooled) {
            auto g2 = conv2d_backward(relu_kept, conv_spec(hidden, channels, 1, 1, 0), w2, gpre);
            gw2.add_(g2.gw);
            auto gr = activation_backward(relu_kept, g2.gx, Act::kRelu);
            auto g1 = conv2d_backward(pooled, conv_spec(channels, hidden, 1, 1, 0), w1, gr);
            gw1.add_(g1.gw);
            return g1.gx;
        };
        auto gpa = back_mlp(relu_a, avg_cache);
        auto gpm = back_mlp(relu_m, max_cache);
        const T inv = T(1) / static_cast<T>(plane);
        std::size_t o = 0;
        for (int b = 0; b < x_cache.dim(0); ++b)
            for (int c = 0; c < c_n; ++c, ++o) {
                T* p = gx.data() + gx.idx4(b, c, 0, 0);
                const T ga = gpa[o] * inv;
                for (std::size_t i = 0; i < plane; ++i) p[i] += ga;
                p[gmax_arg[o]] += gpm[o];
            }
        return gx;
    }

    void collect(ParamList<T>& ps, const std::string& prefix) {
        ps.push_back({prefix + ".mlp1.weight", &w1, &gw1, true});
        ps.push_back({prefix + ".mlp2.weight", &w2, &gw2, true});
        ps.push_back({prefix + ".spatial.weight", &w_spatial, &gw_s, true});
    }
};

// ---------------------------------------------------------------------------
// Coordinate Attention baseline: joint h/w bottleneck, then split
// ---------------------------------------------------------------------------

template <typename T>
struct CoordAtt {
    int channels = 0, mid = 0;
    Tensor<T> w1, gw1;      // (mid, C, 1, 1)
    Tensor<T> wh, gwh;      // (C, mid, 1, 1)
    Tensor<T> ww_, gww;     // (C, mid, 1, 1)
    BatchNormState<T> bn;   // width mid
    Tensor<T> ggamma, gbeta;
    bool force_identity = false;

    Tensor<T> x_cache, joint_cache, relu_cache, a_h_cache, a_w_cache;
    BnCache<T> bn_cache;
    bool forced_cache = false;

    CoordAtt() = default;
    CoordAtt(int c, int reduction)
        : channels(c),
          mid(std::max(c / reduction, 8)),
          w1({mid, c, 1, 1}),
          gw1(w1.dims()),
          wh({c, mid, 1, 1}),
          gwh(wh.dims()),
          ww_({c, mid, 1, 1}),
          gww(ww_.dims()),
          bn(mid),
          ggamma({mid}),
          gbeta({mid}) {}

    void init(Rng& rng) {
        detail::he_init(w1, rng);
        detail::he_init(wh, rng);
        detail::he_init(ww_, rng);
        bn.gamma.fill(T(1));
        bn.beta.fill(T(0));
        bn.init_stats();
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, bool grad) {
        forced_cache = force_identity;
        if (grad) x_cache = x;
        if (force_identity) {
            a_h_cache = Tensor<T>::full({x.dim(0), x.dim(1), x.dim(2), 1}, T(1));
            a_w_cache = Tensor<T>::full({x.dim(0), x.dim(1), 1, x.dim(3)}, T(1));
            return mul_broadcast(mul_broadcast(x, a_h_cache), a_w_cache);
        }
        const int h = x.dim(2), w = x.dim(3);
        auto fh = directional_pool(x, Axis::kHorizontal, PoolMode::kAvg);
        auto fw = directional_pool(x, Axis::kVertical, PoolMode::kAvg)
                      .reshaped({x.dim(0), x.dim(1), w, 1});
        auto joint = detail::concat_rows(fh, fw);
        if (grad) joint_cache = joint;
        auto z = conv2d(joint, conv_spec(channels, mid, 1, 1, 0), w1);
        z = batch_norm(z, bn, mode, grad ? &bn_cache : nullptr);
        auto a = activation(z, Act::kRelu);
        if (grad) relu_cache = a;
        auto zh = detail::slice_rows(a, 0, h);
        auto zw = detail::slice_rows(a, h, h + w);
        auto a_h = activation(conv2d(zh, conv_spec(mid, channels, 1, 1, 0), wh), Act::kSigmoid);
        auto a_w = activation(conv2d(zw, conv_spec(mid, channels, 1, 1, 0), ww_), Act::kSigmoid)
                       .reshaped({x.dim(0), x.dim(1), 1, w});
        a_h_cache = a_h;
        a_w_cache = a_w;
        return mul_broadcast(mul_broadcast(x, a_h), a_w);
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        auto gx = mul_broadcast(mul_broadcast(gy, a_h_cache), a_w_cache);
        if (forced_cache) return gx;
        const int h = x_cache.dim(2), w = x_cache.dim(3);
        auto xg = detail::ew_mul(x_cache, gy);
        auto ga_h = reduce_to(mul_broadcast(xg, a_w_cache), a_h_cache.dims());
        auto ga_w = reduce_to(mul_broadcast(xg, a_h_cache), a_w_cache.dims())
                        .reshaped({x_cache.dim(0), x_cache.dim(1), w, 1});

        auto zh = detail::slice_rows(relu_cache, 0, h);
        auto zw = detail::slice_rows(relu_cache, h, h + w);
        auto gzh = conv2d_backward(zh, conv_spec(mid, channels, 1, 1, 0), wh,
                                   activation_backward(a_h_cache, ga_h, Act::kSigmoid));
        gwh.add_(gzh.gw);
        auto a_w_col = a_w_cache.reshaped({x_cache.dim(0), x_cache.dim(1), w, 1});
        auto gzw = conv2d_backward(zw, conv_spec(mid, channels, 1, 1, 0), ww_,
                                   activation_backward(a_w_col, ga_w, Act::kSigmoid));
        gww.add_(gzw.gw);

        auto ga = detail::concat_rows(gzh.gx, gzw.gx);
        auto gz = activation_backward(relu_cache, ga, Act::kRelu);
        auto bg = batch_norm_backward(bn_cache, gz);
        ggamma.add_(bg.ggamma);
        gbeta.add_(bg.gbeta);
        auto g1 = conv2d_backward(joint_cache, conv_spec(channels, mid, 1, 1, 0), w1, bg.gx);
        gw1.add_(g1.gw);

        auto gfh = detail::slice_rows(g1.gx, 0, h);
        auto gfw = detail::slice_rows(g1.gx, h, h + w)
                       .reshaped({x_cache.dim(0), x_cache.dim(1), 1, w});
        gx.add_(directional_pool_backward(gfh, x_cache.dims(), Axis::kHorizontal, PoolMode::kAvg));
        gx.add_(directional_pool_backward(gfw, x_cache.dims(), Axis::kVertical, PoolMode::kAvg));
        return gx;
    }

    void collect(ParamList<T>& ps, const std::string& prefix) {
        ps.push_back({prefix + ".conv1.weight", &w1, &gw1, true});
        ps.push_back({prefix + ".bn.gamma", &bn.gamma, &ggamma, true});
        ps.push_back({prefix + ".bn.beta", &bn.beta, &gbeta, true});
        ps.push_back({prefix + ".bn.running_mean", &bn.running_mean, nullptr, false});
        ps.push_back({prefix + ".bn.running_var", &bn.running_var, nullptr, false});
        ps.push_back({prefix + ".conv_h.weight", &wh, &gwh, true});
        ps.push_back({prefix + ".conv_w.weight", &ww_, &gww, true});
    }
};

// ---------------------------------------------------------------------------
// Variant wrapper
// ---------------------------------------------------------------------------

struct AttnSettings {
    GcaConfig gca;           // channels filled per instance
    int baseline_reduction = 16;
};

template <typename T>
struct Attention {
    AttnVariant variant = AttnVariant::kNone;
    std::variant<std::monostate, Se<T>, Cbam<T>, CoordAtt<T>, Gca<T>> impl;

    static Attention make(AttnVariant v, int channels, const AttnSettings& s) {
        Attention a;
        a.variant = v;
        switch (v) {
            case AttnVariant::kNone: break;
            case AttnVariant::kSe: a.impl = Se<T>(channels, s.baseline_reduction); break;
            case AttnVariant::kCbam: a.impl = Cbam<T>(channels, s.baseline_reduction); break;
            case AttnVariant::kCoordAtt:
                a.impl = CoordAtt<T>(channels, s.baseline_reduction);
                break;
            case AttnVariant::kGca: {
                GcaConfig c = s.gca;
                c.channels = channels;
                a.impl = Gca<T>(c);
                break;
            }
        }
        return a;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, bool grad) {
        return std::visit(
            [&](auto& m) -> Tensor<T> {
                if constexpr (std::is_same_v<std::decay_t<decltype(m)>, std::monostate>)
                    return x;
                else
                    return m.forward(x, mode, grad);
            },
            impl);
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        return std::visit(
            [&](auto& m) -> Tensor<T> {
                if constexpr (std::is_same_v<std::decay_t<decltype(m)>, std::monostate>)
                    return gy;
                else
                    return m.backward(gy);
            },
            impl);
    }

    void init(Rng& rng) {
        std::visit(
            [&](auto& m) {
                if constexpr (!std::is_same_v<std::decay_t<decltype(m)>, std::monostate>)
                    m.init(rng);
            },
            impl);
    }

    void collect(ParamList<T>& ps, const std::string& prefix) {
        std::visit(
            [&](auto& m) {
                if constexpr (!std::is_same_v<std::decay_t<decltype(m)>, std::monostate>)
                    m.collect(ps, prefix);
            },
            impl);
    }

    void set_force_identity(bool on) {
        std::visit(
            [&](auto& m) {
                if constexpr (!std::is_same_v<std::decay_t<decltype(m)>, std::monostate>)
                    m.force_identity = on;
            },
            impl);
    }

    template <typename Fn>
    void for_each_bn(Fn&& fn) {
        if (auto* c = std::get_if<CoordAtt<T>>(&impl)) fn(c->bn);
    }

    void set_bn_momentum(T m) {
        if (auto* g = std::get_if<Gca<T>>(&impl)) g->bn_momentum = m;
        if (auto* c = std::get_if<CoordAtt<T>>(&impl)) c->bn.momentum = m;
    }
};

}  // namespace gcaru
