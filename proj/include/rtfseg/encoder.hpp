#pragma once

#include <array>

#include "rtfseg/params.hpp"

namespace rtfseg {

struct EncoderConfig {
    int base_width = 8;      // stage-1 width; stages double it: {C, 2C, 4C, 8C}
    int blocks_per_stage = 1;
    int in_channels = 3;
};

// Four feature maps at strides {4, 8, 16, 32} with doubling widths.
template <typename S>
struct FeaturePyramid {
    std::array<Var<S>, 4> f;
};

// Inverted-bottleneck block: depthwise 7x7 -> norm -> 1x1 expand x4 -> GELU
// -> 1x1 project, added back onto the input.
template <typename S>
struct EncoderBlock {
    Conv2d<S> dw;
    BatchNorm<S> bn;
    Conv2d<S> pw1, pw2;
};

template <typename S>
EncoderBlock<S> make_encoder_block(std::mt19937& rng, int c) {
    EncoderBlock<S> b;
    b.dw = make_conv<S>(rng, c, c, 7, 1, 3, PadMode::zero, /*groups=*/c);
    b.bn = make_batch_norm<S>(c);
    b.pw1 = make_conv<S>(rng, c, 4 * c, 1);
    b.pw2 = make_conv<S>(rng, 4 * c, c, 1);
    return b;
}

template <typename S>
Var<S> encoder_block_forward(const Var<S>& x, EncoderBlock<S>& b, bool training) {
    Var<S> t = conv2d(x, b.dw);
    t = batch_norm(t, b.bn, training);
    t = conv2d(t, b.pw1);
    t = gelu(t);
    t = conv2d(t, b.pw2);
    return add(x, t);
}

// Stage 1 rides directly on the stem's stride-4 output; stages 2-4 first halve
// the resolution with a norm + 2x2 stride-2 conv.
template <typename S>
struct EncoderStage {
    bool has_down = false;
    BatchNorm<S> down_bn;
    Conv2d<S> down;
    std::vector<EncoderBlock<S>> blocks;
};

template <typename S>
struct Encoder {
    EncoderConfig cfg;
    Conv2d<S> stem;  // 4x4 stride-4
    BatchNorm<S> stem_bn;
    std::array<EncoderStage<S>, 4> stages;
};

template <typename S>
Encoder<S> make_encoder(std::mt19937& rng, const EncoderConfig& cfg) {
    if (cfg.base_width < 1 || cfg.blocks_per_stage < 1 || cfg.in_channels < 1)
        throw ConfigError("encoder config values must be positive");
    Encoder<S> enc;
    enc.cfg = cfg;
    int c1 = cfg.base_width;
    enc.stem = make_conv<S>(rng, cfg.in_channels, c1, 4, 4, 0);
    enc.stem_bn = make_batch_norm<S>(c1);
    for (int s = 0; s < 4; ++s) {
        int cin = c1 << (s == 0 ? 0 : s - 1);
        int cout = c1 << s;
        EncoderStage<S>& st = enc.stages[s];
        if (s > 0) {
            st.has_down = true;
            st.down_bn = make_batch_norm<S>(cin);
            st.down = make_conv<S>(rng, cin, cout, 2, 2, 0);
        }
        for (int b = 0; b < cfg.blocks_per_stage; ++b)
            st.blocks.push_back(make_encoder_block<S>(rng, cout));
    }
    return enc;
}

template <typename S>
FeaturePyramid<S> encode(Encoder<S>& enc, const Var<S>& image, bool training) {
    const Tensor4<S>& t = image->value;
    if (t.c != enc.cfg.in_channels)
        throw ConfigError("encoder expects " + std::to_string(enc.cfg.in_channels) +
                          " input channels, got " + t.shape_str());
    if (t.h % 32 != 0 || t.w % 32 != 0)
        throw ConfigError("input spatial dims must be divisible by 32, got " + t.shape_str());

    FeaturePyramid<S> pyr;
    Var<S> x = batch_norm(conv2d(image, enc.stem), enc.stem_bn, training);
    for (int s = 0; s < 4; ++s) {
        EncoderStage<S>& st = enc.stages[s];
        if (st.has_down) x = conv2d(batch_norm(x, st.down_bn, training), st.down);
        for (auto& b : st.blocks) x = encoder_block_forward(x, b, training);
        pyr.f[s] = x;
    }
    return pyr;
}

template <typename S>
void register_encoder(ParamRegistry<S>& reg, const std::string& prefix, Encoder<S>& enc) {
    reg.add_conv(prefix + ".stem", enc.stem, LrGroup::backbone, 1);
    reg.add_bn(prefix + ".stem_bn", enc.stem_bn, LrGroup::backbone, 1);
    for (int s = 0; s < 4; ++s) {
        std::string sp = prefix + ".stage" + std::to_string(s + 1);
        EncoderStage<S>& st = enc.stages[s];
        if (st.has_down) {
            reg.add_bn(sp + ".down_bn", st.down_bn, LrGroup::backbone, s + 1);
            reg.add_conv(sp + ".down", st.down, LrGroup::backbone, s + 1);
        }
        for (size_t b = 0; b < st.blocks.size(); ++b) {
            std::string bp = sp + ".block" + std::to_string(b);
            reg.add_conv(bp + ".dw", st.blocks[b].dw, LrGroup::backbone, s + 1);
            reg.add_bn(bp + ".bn", st.blocks[b].bn, LrGroup::backbone, s + 1);
            reg.add_conv(bp + ".pw1", st.blocks[b].pw1, LrGroup::backbone, s + 1);
            reg.add_conv(bp + ".pw2", st.blocks[b].pw2, LrGroup::backbone, s + 1);
        }
    }
}

}  // namespace rtfseg
