#pragma once

#include "rtfseg/encoder.hpp"

namespace rtfseg {

enum class DecoderVariant { panet, fpn };

// Bidirectional pyramid decoder: lateral 1x1 projections to a common width
// D = C1, a top-down additive pass, a bottom-up re-aggregation pass, global
// context modulation bounded to (0.5, 1.0), and a multi-level aggregation
// head. The fpn variant stops after the top-down pass and carries no
// bottom-up, context, or auxiliary parameters.
template <typename S>
struct Decoder {
    DecoderVariant variant = DecoderVariant::panet;
    bool deep_supervision = true;
    int d = 0, classes = 0;
    std::array<Conv2d<S>, 4> lateral;
    std::array<Conv2d<S>, 3> td_refine;        // levels 3,2,1
    std::array<Conv2d<S>, 3> bu_down, bu_merge;  // into levels 2,3,4
    Conv2d<S> ctx;
    Conv2d<S> agg1, agg2;
    Conv2d<S> head;
    std::array<Conv2d<S>, 4> deep_heads;  // allocated only with deep supervision
    Conv2d<S> aux_head;                   // ditto: the side losses travel together
};

template <typename S>
struct DecodeResult {
    Var<S> main;
    std::vector<Var<S>> deep;  // levels 1..4, training + deep supervision only
    Var<S> aux;                // same conditions as deep
};

template <typename S>
Decoder<S> make_decoder(std::mt19937& rng, int base_width, int classes, DecoderVariant variant,
                        bool deep_supervision) {
    if (classes < 2) throw ConfigError("decoder needs at least 2 classes");
    Decoder<S> dec;
    dec.variant = variant;
    dec.deep_supervision = deep_supervision && variant == DecoderVariant::panet;
    dec.d = base_width;
    dec.classes = classes;
    for (int i = 0; i < 4; ++i)
        dec.lateral[i] = make_conv<S>(rng, base_width << i, dec.d, 1);
    for (int i = 0; i < 3; ++i)
        dec.td_refine[i] = make_conv<S>(rng, dec.d, dec.d, 3, 1, 1);
    if (variant == DecoderVariant::panet) {
        for (int i = 0; i < 3; ++i) {
            dec.bu_down[i] = make_conv<S>(rng, dec.d, dec.d, 3, 2, 1);
            dec.bu_merge[i] = make_conv<S>(rng, 2 * dec.d, dec.d, 3, 1, 1);
        }
        dec.ctx = make_conv<S>(rng, base_width << 3, dec.d, 1);
        if (dec.deep_supervision) {
            for (int i = 0; i < 4; ++i) dec.deep_heads[i] = make_conv<S>(rng, dec.d, classes, 1);
            dec.aux_head = make_conv<S>(rng, dec.d, classes, 1);
        }
    }
    dec.agg1 = make_conv<S>(rng, 4 * dec.d, dec.d, 3, 1, 1);
    dec.agg2 = make_conv<S>(rng, dec.d, dec.d, 3, 1, 1);
    dec.head = make_conv<S>(rng, dec.d, classes, 1);
    return dec;
}

template <typename S>
std::array<Var<S>, 4> lateral_project(const std::array<Var<S>, 4>& fused, Decoder<S>& dec) {
    std::array<Var<S>, 4> l;
    for (int i = 0; i < 4; ++i) l[i] = conv2d(fused[i], dec.lateral[i]);
    return l;
}

// Deepest level passes through untouched; each shallower level adds the
// upsampled deeper result and refines with a 3x3 conv.
template <typename S>
std::array<Var<S>, 4> top_down(const std::array<Var<S>, 4>& l, Decoder<S>& dec) {
    std::array<Var<S>, 4> p;
    p[3] = l[3];
    for (int i = 2; i >= 0; --i) {
        Var<S> up = bilinear_resize(p[i + 1], l[i]->value.h, l[i]->value.w);
        p[i] = conv2d(add(l[i], up), dec.td_refine[i]);
    }
    return p;
}

// Reverse pass: level 1 passes through; each deeper level concatenates a
// stride-2 downsample of the shallower result with its own top-down map.
template <typename S>
std::array<Var<S>, 4> bottom_up(const std::array<Var<S>, 4>& p, Decoder<S>& dec) {
    std::array<Var<S>, 4> b;
    b[0] = p[0];
    for (int i = 1; i < 4; ++i) {
        Var<S> down = conv2d(b[i - 1], dec.bu_down[i - 1]);
        if (down->value.h != p[i]->value.h || down->value.w != p[i]->value.w)
            throw ConfigError("pyramid ladder misaligned at level " + std::to_string(i + 1) +
                              ": " + down->value.shape_str() + " vs " + p[i]->value.shape_str());
        b[i] = conv2d(concat_channels<S>({down, p[i]}), dec.bu_merge[i - 1]);
    }
    return b;
}

// Context factor 0.5 + 0.5*sigmoid(c) lies strictly inside (0.5, 1.0), so the
// modulation can attenuate but never kill or amplify a channel.
template <typename S>
Var<S> context_factor(const Var<S>& f4, Decoder<S>& dec) {
    Var<S> c = conv2d(global_avg_pool(f4), dec.ctx);
    return add_scalar(scale(sigmoid(c), S(0.5)), S(0.5));
}

template <typename S>
DecodeResult<S> aggregate_and_predict(const std::array<Var<S>, 4>& levels, Decoder<S>& dec,
                                      int out_h, int out_w, bool training) {
    int h1 = levels[0]->value.h, w1 = levels[0]->value.w;
    std::vector<Var<S>> ups{levels[0]};
    for (int i = 1; i < 4; ++i) ups.push_back(bilinear_resize(levels[i], h1, w1));
    Var<S> a = conv2d(concat_channels<S>(ups), dec.agg1);
    a = gelu(a);
    a = conv2d(a, dec.agg2);
    DecodeResult<S> out;
    out.main = bilinear_resize(conv2d(a, dec.head), out_h, out_w);
    if (training && dec.deep_supervision) {
        for (int i = 0; i < 4; ++i)
            out.deep.push_back(bilinear_resize(conv2d(levels[i], dec.deep_heads[i]),
                                               out_h, out_w));
        out.aux = bilinear_resize(conv2d(levels[1], dec.aux_head), out_h, out_w);
    }
    return out;
}

// fused = the four merged feature maps; fused[3] doubles as the context source.
template <typename S>
DecodeResult<S> decode(const std::array<Var<S>, 4>& fused, Decoder<S>& dec, int out_h, int out_w,
                       bool training) {
    std::array<Var<S>, 4> l = lateral_project(fused, dec);
    std::array<Var<S>, 4> p = top_down(l, dec);
    if (dec.variant == DecoderVariant::fpn)
        return aggregate_and_predict(p, dec, out_h, out_w, training);
    std::array<Var<S>, 4> b = bottom_up(p, dec);
    Var<S> factor = context_factor(fused[3], dec);
    for (int i = 0; i < 4; ++i) b[i] = mul(b[i], factor);
    return aggregate_and_predict(b, dec, out_h, out_w, training);
}

template <typename S>
void register_decoder(ParamRegistry<S>& reg, const std::string& prefix, Decoder<S>& dec) {
    for (int i = 0; i < 4; ++i)
        reg.add_conv(prefix + ".lateral" + std::to_string(i + 1), dec.lateral[i],
                     LrGroup::decoder);
    for (int i = 0; i < 3; ++i)
        reg.add_conv(prefix + ".td_refine" + std::to_string(i + 1), dec.td_refine[i],
                     LrGroup::decoder);
    if (dec.variant == DecoderVariant::panet) {
        for (int i = 0; i < 3; ++i) {
            reg.add_conv(prefix + ".bu_down" + std::to_string(i + 2), dec.bu_down[i],
                         LrGroup::decoder);
            reg.add_conv(prefix + ".bu_merge" + std::to_string(i + 2), dec.bu_merge[i],
                         LrGroup::decoder);
        }
        reg.add_conv(prefix + ".ctx", dec.ctx, LrGroup::decoder);
        if (dec.deep_supervision) {
            for (int i = 0; i < 4; ++i)
                reg.add_conv(prefix + ".deep_head" + std::to_string(i + 1), dec.deep_heads[i],
                             LrGroup::decoder);
            reg.add_conv(prefix + ".aux_head", dec.aux_head, LrGroup::decoder);
        }
    }
    reg.add_conv(prefix + ".agg1", dec.agg1, LrGroup::decoder);
    reg.add_conv(prefix + ".agg2", dec.agg2, LrGroup::decoder);
    reg.add_conv(prefix + ".head", dec.head, LrGroup::decoder);
}

}  // namespace rtfseg
