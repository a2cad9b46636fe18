#pragma once

#include <memory>

#include "rtfseg/decoder.hpp"
#include "rtfseg/freq_fusion.hpp"
#include "rtfseg/sem_fusion.hpp"

namespace rtfseg {

enum class FusionMode { freq, sem };

struct ModelConfig {
    int base_width = 8;
    int classes = 5;
    int blocks_per_stage = 1;
    std::array<FusionMode, 4> fusion{FusionMode::freq, FusionMode::freq, FusionMode::sem,
                                     FusionMode::sem};
    DecoderVariant decoder = DecoderVariant::panet;
    bool deep_supervision = true;
};

template <typename S>
struct StageFusion {
    FusionMode mode = FusionMode::freq;
    std::unique_ptr<FreqFusion<S>> freq;
    std::unique_ptr<SemFusion<S>> sem;
};

template <typename S>
struct ForwardResult {
    DecodeResult<S> out;
    FeaturePyramid<S> rgb, ir;
    std::array<Var<S>, 4> fused;
};

// The full network: two encoders, one fusion module per stage (frequency- or
// semantic-based, per config), and the pyramid decoder. The parameter registry
// holds raw pointers into this object's batch-norm buffers, so the model is
// pinned in place once built.
template <typename S>
class FusionModel {
  public:
    ModelConfig cfg;
    Encoder<S> rgb_enc, ir_enc;
    std::array<StageFusion<S>, 4> fusion;
    Decoder<S> dec;
    ParamRegistry<S> params;

    FusionModel(const ModelConfig& config, unsigned seed) : cfg(config) {
        std::mt19937 rng(seed);
        EncoderConfig ec{cfg.base_width, cfg.blocks_per_stage, 3};
        rgb_enc = make_encoder<S>(rng, ec);
        EncoderConfig tc{cfg.base_width, cfg.blocks_per_stage, 1};
        ir_enc = make_encoder<S>(rng, tc);
        for (int i = 0; i < 4; ++i) {
            int c = cfg.base_width << i;
            fusion[i].mode = cfg.fusion[i];
            if (cfg.fusion[i] == FusionMode::freq)
                fusion[i].freq = std::make_unique<FreqFusion<S>>(make_freq_fusion<S>(rng, c, c));
            else
                fusion[i].sem = std::make_unique<SemFusion<S>>(make_sem_fusion<S>(rng, c, c));
        }
        dec = make_decoder<S>(rng, cfg.base_width, cfg.classes, cfg.decoder,
                              cfg.deep_supervision);

        register_encoder(params, "rgb_enc", rgb_enc);
        register_encoder(params, "ir_enc", ir_enc);
        for (int i = 0; i < 4; ++i) {
            std::string name = "fuse" + std::to_string(i + 1);
            if (fusion[i].freq)
                register_freq_fusion(params, name, *fusion[i].freq);
            else
                register_sem_fusion(params, name, *fusion[i].sem);
        }
        register_decoder(params, "decoder", dec);
    }

    FusionModel(const FusionModel&) = delete;
    FusionModel& operator=(const FusionModel&) = delete;
    FusionModel(FusionModel&&) = delete;
    FusionModel& operator=(FusionModel&&) = delete;

    ForwardResult<S> forward(const Tensor4<S>& rgb, const Tensor4<S>& ir, bool training) {
        return forward_vars(constant(rgb), constant(ir), training);
    }

    ForwardResult<S> forward_vars(const Var<S>& rgb, const Var<S>& ir, bool training) {
        const Tensor4<S>& rv = rgb->value;
        const Tensor4<S>& tv = ir->value;
        if (rv.n != tv.n || rv.h != tv.h || rv.w != tv.w)
            throw FusionError("rgb " + rv.shape_str() + " and thermal " + tv.shape_str() +
                              " inputs are misaligned");
        ForwardResult<S> res;
        res.rgb = encode(rgb_enc, rgb, training);
        res.ir = encode(ir_enc, ir, training);
        for (int i = 0; i < 4; ++i) {
            if (fusion[i].freq)
                res.fused[i] = freq_fuse(res.rgb.f[i], res.ir.f[i], *fusion[i].freq, training);
            else
                res.fused[i] = sem_fuse(res.rgb.f[i], res.ir.f[i], *fusion[i].sem, training);
        }
        res.out = decode(res.fused, dec, rv.h, rv.w, training);
        return res;
    }

    Eigen::Index param_count() const { return params.param_count(); }
};

}  // namespace rtfseg
