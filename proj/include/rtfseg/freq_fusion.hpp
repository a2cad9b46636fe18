#pragma once

#include "rtfseg/fusion_common.hpp"

namespace rtfseg {

// Early-stage fusion: split projected thermal features into low/high frequency
// bands, attend to each with kernel sizes matched to their structure, blend
// with a learned per-channel gate, and fold the result into the RGB trunk
// through a residual whose skip path is never gated.
template <typename S>
struct FreqFusion {
    ThermalProj<S> proj;
    Conv2d<S> attn_low;   // 7x7 on the 2-channel pooled map (broad blobs)
    Conv2d<S> attn_high;  // 3x3 on the 2-channel pooled map (fine edges)
    Conv2d<S> gate;       // 1x1, 2C -> C, channel-wise band blend
    Conv2d<S> conf1, conf2;  // C -> C/4 -> 1, per-sample RGB confidence
    Conv2d<S> refine1;    // 3x3, 2C -> C
    BatchNorm<S> refine_bn;
    Conv2d<S> refine2;    // 3x3, C -> C, zero-initialized
};

template <typename S>
FreqFusion<S> make_freq_fusion(std::mt19937& rng, int c_thermal, int c_rgb) {
    FreqFusion<S> f;
    f.proj = make_thermal_proj<S>(rng, c_thermal, c_rgb);
    f.attn_low = make_conv<S>(rng, 2, 1, 7, 1, 3);
    f.attn_high = make_conv<S>(rng, 2, 1, 3, 1, 1);
    f.gate = make_conv<S>(rng, 2 * c_rgb, c_rgb, 1);
    int mid = std::max(c_rgb / 4, 1);
    f.conf1 = make_conv<S>(rng, c_rgb, mid, 1);
    f.conf2 = make_conv<S>(rng, mid, 1, 1);
    f.refine1 = make_conv<S>(rng, 2 * c_rgb, c_rgb, 3, 1, 1);
    f.refine_bn = make_batch_norm<S>(c_rgb);
    f.refine2 = make_conv<S>(rng, c_rgb, c_rgb, 3, 1, 1);
    // Residual correction starts at exactly zero, so fusion begins as the
    // identity on the RGB trunk.
    zero_init(f.refine2);
    return f;
}

// Low band = gaussian blur snapped to binary32; high band = the remainder at
// working precision, so low + high reassembles the input exactly whenever the
// working type can hold the difference (always, up to 1 ulp, in float).
template <typename S>
std::pair<Var<S>, Var<S>> frequency_decompose(const Var<S>& t) {
    Var<S> low = quantize_binary32(depthwise_gaussian_blur(t, 7, 2.0));
    Var<S> high = sub(t, low);
    return {low, high};
}

// M(X) = sigmoid(conv(channel_pool(X))): one spatial mask per pixel,
// broadcast over channels.
template <typename S>
Var<S> spatial_mask(const Var<S>& x, const Conv2d<S>& conv) {
    return sigmoid(conv2d(channel_pool(x), conv));
}

template <typename S>
std::pair<Var<S>, Var<S>> dual_branch_attention(const Var<S>& low, const Var<S>& high,
                                                FreqFusion<S>& st) {
    if (!low->value.same_shape(high->value))
        throw FusionError("band shapes disagree: " + low->value.shape_str() + " vs " +
                          high->value.shape_str());
    Var<S> lo = mul(low, spatial_mask(low, st.attn_low));
    Var<S> hi = mul(high, spatial_mask(high, st.attn_high));
    return {lo, hi};
}

// alpha = sigmoid(gate(GAP(|[low, high]|))) picks, per channel, how much of
// each band survives: out = alpha*low + (1-alpha)*high.
template <typename S>
Var<S> adaptive_frequency_gate(const Var<S>& low, const Var<S>& high, FreqFusion<S>& st) {
    Var<S> pooled = global_avg_pool(abs_val(concat_channels<S>({low, high})));
    Var<S> alpha = sigmoid(conv2d(pooled, st.gate));
    Var<S> one_minus = add_scalar(scale(alpha, S(-1)), S(1));
    return add(mul(alpha, low), mul(one_minus, high));
}

// F = R + refine([s*R, T]): the confidence s scales only the refinement's view
// of R; the skip path stays untouched so the trunk gradient can't be blocked.
template <typename S>
Var<S> safe_residual_fuse(const Var<S>& r, const Var<S>& t_final, FreqFusion<S>& st,
                          bool training) {
    if (!r->value.same_shape(t_final->value))
        throw FusionError("fusion operands disagree: " + r->value.shape_str() + " vs " +
                          t_final->value.shape_str());
    Var<S> s = sigmoid(conv2d(relu(conv2d(global_avg_pool(r), st.conf1)), st.conf2));
    Var<S> mixed = concat_channels<S>({mul(r, s), t_final});
    Var<S> d = conv2d(mixed, st.refine1);
    d = gelu(batch_norm(d, st.refine_bn, training));
    d = conv2d(d, st.refine2);
    return add(r, d);
}

template <typename S>
Var<S> freq_fuse(const Var<S>& r, const Var<S>& t, FreqFusion<S>& st, bool training) {
    Var<S> tp = project_thermal(t, r, st.proj, training);
    auto [low, high] = frequency_decompose(tp);
    auto [lo_att, hi_att] = dual_branch_attention(low, high, st);
    Var<S> t_final = adaptive_frequency_gate(lo_att, hi_att, st);
    return safe_residual_fuse(r, t_final, st, training);
}

template <typename S>
void register_freq_fusion(ParamRegistry<S>& reg, const std::string& prefix, FreqFusion<S>& st) {
    register_thermal_proj(reg, prefix + ".proj", st.proj);
    reg.add_conv(prefix + ".attn_low", st.attn_low, LrGroup::fusion);
    reg.add_conv(prefix + ".attn_high", st.attn_high, LrGroup::fusion);
    reg.add_conv(prefix + ".gate", st.gate, LrGroup::fusion);
    reg.add_conv(prefix + ".conf1", st.conf1, LrGroup::fusion);
    reg.add_conv(prefix + ".conf2", st.conf2, LrGroup::fusion);
    reg.add_conv(prefix + ".refine1", st.refine1, LrGroup::fusion);
    reg.add_bn(prefix + ".refine_bn", st.refine_bn, LrGroup::fusion);
    reg.add_conv(prefix + ".refine2", st.refine2, LrGroup::fusion);
}

}  // namespace rtfseg
