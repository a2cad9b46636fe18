#pragma once

#include "rtfseg/fusion_common.hpp"

namespace rtfseg {

// Late-stage fusion: per-channel cross-modal gates pick how much of each
// modality enters, parallel 3x3/5x5 depthwise-separable branches extract
// multi-scale context, and SE-style channel plus spatial attention refine it
// before a gamma-scaled residual merge.
template <typename S>
struct SemFusion {
    ThermalProj<S> proj;
    Conv2d<S> gate_fc1, gate_fc2;  // 2C -> C/2 -> 2C over pooled vectors
    Conv2d<S> ms3_dw, ms3_pw;      // 3x3 depthwise + pointwise, C -> C
    Conv2d<S> ms5_dw, ms5_pw;      // 5x5 depthwise + pointwise, C -> C
    Conv2d<S> merge;               // 1x1, 2C -> C
    Conv2d<S> se1, se2;            // C -> C/8 -> C channel attention
    Conv2d<S> sa;                  // 7x7 spatial attention on the pooled map
    Conv2d<S> tail;                // 3x3, C -> C
    Var<S> gamma;                  // residual scale, starts at 0.1
};

template <typename S>
SemFusion<S> make_sem_fusion(std::mt19937& rng, int c_thermal, int c_rgb) {
    SemFusion<S> f;
    f.proj = make_thermal_proj<S>(rng, c_thermal, c_rgb);
    int gate_mid = std::max(c_rgb / 2, 1);
    f.gate_fc1 = make_conv<S>(rng, 2 * c_rgb, gate_mid, 1);
    f.gate_fc2 = make_conv<S>(rng, gate_mid, 2 * c_rgb, 1);
    f.ms3_dw = make_conv<S>(rng, c_rgb, c_rgb, 3, 1, 1, PadMode::zero, c_rgb);
    f.ms3_pw = make_conv<S>(rng, c_rgb, c_rgb, 1);
    f.ms5_dw = make_conv<S>(rng, c_rgb, c_rgb, 5, 1, 2, PadMode::zero, c_rgb);
    f.ms5_pw = make_conv<S>(rng, c_rgb, c_rgb, 1);
    f.merge = make_conv<S>(rng, 2 * c_rgb, c_rgb, 1);
    int se_mid = std::max(c_rgb / 8, 1);
    f.se1 = make_conv<S>(rng, c_rgb, se_mid, 1);
    f.se2 = make_conv<S>(rng, se_mid, c_rgb, 1);
    f.sa = make_conv<S>(rng, 2, 1, 7, 1, 3);
    f.tail = make_conv<S>(rng, c_rgb, c_rgb, 3, 1, 1);
    f.gamma = param(Tensor4<S>::full(1, 1, 1, 1, S(0.1)));
    return f;
}

// Gates are computed jointly from both pooled modalities but applied
// independently; nothing forces g_rgb + g_ir to 1, so both can stay high.
template <typename S>
Var<S> cross_modal_gate(const Var<S>& r, const Var<S>& tproj, SemFusion<S>& st) {
    if (!r->value.same_shape(tproj->value))
        throw FusionError("gate operands disagree: " + r->value.shape_str() + " vs " +
                          tproj->value.shape_str());
    int c = r->value.c;
    Var<S> pooled = concat_channels<S>({global_avg_pool(r), global_avg_pool(tproj)});
    Var<S> z = sigmoid(conv2d(relu(conv2d(pooled, st.gate_fc1)), st.gate_fc2));
    Var<S> g_rgb = slice_channels(z, 0, c);
    Var<S> g_ir = slice_channels(z, c, c);
    return add(mul(r, g_rgb), mul(tproj, g_ir));
}

template <typename S>
Var<S> multi_scale_extract(const Var<S>& f_gated, SemFusion<S>& st) {
    Var<S> b3 = conv2d(conv2d(f_gated, st.ms3_dw), st.ms3_pw);
    Var<S> b5 = conv2d(conv2d(f_gated, st.ms5_dw), st.ms5_pw);
    return conv2d(concat_channels<S>({b3, b5}), st.merge);
}

// Channel attention, then spatial attention, then a 3x3 tail; the result joins
// the gated features through a gamma-scaled residual (gamma starts small so
// the refinement fades in during training).
template <typename S>
Var<S> refine_attention(const Var<S>& f_gated, const Var<S>& f_ms, SemFusion<S>& st) {
    if (!f_gated->value.same_shape(f_ms->value))
        throw FusionError("refine operands disagree: " + f_gated->value.shape_str() + " vs " +
                          f_ms->value.shape_str());
    Var<S> ca = sigmoid(conv2d(relu(conv2d(global_avg_pool(f_ms), st.se1)), st.se2));
    Var<S> x = mul(f_ms, ca);
    Var<S> sa_mask = sigmoid(conv2d(channel_pool(x), st.sa));
    x = mul(x, sa_mask);
    x = conv2d(x, st.tail);
    return add(f_gated, mul(x, st.gamma));
}

template <typename S>
Var<S> sem_fuse(const Var<S>& r, const Var<S>& t, SemFusion<S>& st, bool training) {
    Var<S> tp = project_thermal(t, r, st.proj, training);
    Var<S> gated = cross_modal_gate(r, tp, st);
    Var<S> ms = multi_scale_extract(gated, st);
    return refine_attention(gated, ms, st);
}

template <typename S>
void register_sem_fusion(ParamRegistry<S>& reg, const std::string& prefix, SemFusion<S>& st) {
    register_thermal_proj(reg, prefix + ".proj", st.proj);
    reg.add_conv(prefix + ".gate_fc1", st.gate_fc1, LrGroup::fusion);
    reg.add_conv(prefix + ".gate_fc2", st.gate_fc2, LrGroup::fusion);
    reg.add_conv(prefix + ".ms3_dw", st.ms3_dw, LrGroup::fusion);
    reg.add_conv(prefix + ".ms3_pw", st.ms3_pw, LrGroup::fusion);
    reg.add_conv(prefix + ".ms5_dw", st.ms5_dw, LrGroup::fusion);
    reg.add_conv(prefix + ".ms5_pw", st.ms5_pw, LrGroup::fusion);
    reg.add_conv(prefix + ".merge", st.merge, LrGroup::fusion);
    reg.add_conv(prefix + ".se1", st.se1, LrGroup::fusion);
    reg.add_conv(prefix + ".se2", st.se2, LrGroup::fusion);
    reg.add_conv(prefix + ".sa", st.sa, LrGroup::fusion);
    reg.add_conv(prefix + ".tail", st.tail, LrGroup::fusion);
    reg.add(prefix + ".gamma", st.gamma, false, LrGroup::fusion);
}

}  // namespace rtfseg
