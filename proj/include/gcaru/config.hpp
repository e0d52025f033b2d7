#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "gcaru/attention.hpp"
#include "gcaru/rng.hpp"

namespace gcaru {

struct ModelConfig {
    std::array<int, 4> stage_depths{3, 4, 6, 3};
    std::array<int, 4> stage_planes{64, 128, 256, 512};
    int stem_channels = 64;
    std::array<int, 4> decoder_filters{64, 128, 256, 512};  // finest..coarsest
    int num_classes = 9;
    int input_size = 224;
    AttnVariant attention = AttnVariant::kGca;
    AttnSettings attn;
    std::uint64_t seed = 0;

    // --mini: two bottlenecks per stage, a desk-scale footprint
    ModelConfig& make_mini() {
        stage_depths = {2, 2, 2, 2};
        input_size = 64;
        num_classes = 4;
        return *this;
    }

    int pyramid_channels(int level) const {  // level 1..5
        return level == 1 ? stem_channels : stage_planes[level - 2] * 4;
    }

    void validate() const {
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (input_size < 32 || input_size % 32 != 0)
            throw ConfigError("input_size must be a positive multiple of 32");
        for (int d : stage_depths)
            if (d < 1) throw ConfigError("stage depths must be >= 1");
        if (attention == AttnVariant::kGca) {
            for (int p : stage_planes) {
                GcaConfig g = attn.gca;
                g.channels = p * 4;
                g.validate();
            }
        }
    }
};

// Canonical one-line-per-field rendering. The digest over this text guards
// checkpoints against architecture mismatch, so it covers structural fields
// only (seed and input_size do not change the parameter layout).
inline std::string canonical_text(const ModelConfig& c) {
    auto arr = [](const std::array<int, 4>& a) {
        std::string s;
        for (int i = 0; i < 4; ++i) s += (i ? "," : "") + std::to_string(a[i]);
        return s;
    };
    std::string s;
    s += "attention=" + std::string(attn_name(c.attention)) + "\n";
    s += "baseline_reduction=" + std::to_string(c.attn.baseline_reduction) + "\n";
    s += "decoder_filters=" + arr(c.decoder_filters) + "\n";
    s += "gca_groups=" + std::to_string(c.attn.gca.groups) + "\n";
    s += "gca_min_hidden=" + std::to_string(c.attn.gca.min_hidden) + "\n";
    s += "gca_reduction=" + std::to_string(c.attn.gca.reduction) + "\n";
    s += "num_classes=" + std::to_string(c.num_classes) + "\n";
    s += "stage_depths=" + arr(c.stage_depths) + "\n";
    s += "stage_planes=" + arr(c.stage_planes) + "\n";
    s += "stem_channels=" + std::to_string(c.stem_channels) + "\n";
    return s;
}

inline std::uint64_t config_digest(const ModelConfig& c) {
    return fnv1a64_str(canonical_text(c));
}

struct LossConfig {
    double dice_weight = 0.5;
    double ce_weight = 0.5;
    double epsilon = 1e-5;
    bool include_background_in_loss = true;
    bool include_background_in_metric = false;

    void validate() const {
        if (dice_weight < 0 || ce_weight < 0 || (dice_weight == 0 && ce_weight == 0))
            throw ConfigError("loss weights must be >= 0 and not both zero");
        if (epsilon <= 0) throw ConfigError("loss epsilon must be > 0");
    }
};

struct TrainConfig {
    int epochs = 100;
    int batch_size = 8;
    std::uint64_t seed = 7;
    int eval_every = 10;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 0.0;  // off by default; global-norm clip when > 0
    double target_dsc = 0.0; // early stop once train/val DSC reaches it (0 = off)
    LossConfig loss;
    ModelConfig model;
    std::filesystem::path out_dir;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (lr < 0) throw ConfigError("lr must be >= 0");
        loss.validate();
        model.validate();
    }
};

}  // namespace gcaru
