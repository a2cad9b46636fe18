#pragma once

#include "rtfseg/params.hpp"

namespace rtfseg {

// Lifts thermal features into the RGB channel space: 1x1 conv -> BN -> GELU.
template <typename S>
struct ThermalProj {
    Conv2d<S> conv;
    BatchNorm<S> bn;
};

template <typename S>
ThermalProj<S> make_thermal_proj(std::mt19937& rng, int c_thermal, int c_rgb) {
    ThermalProj<S> p;
    p.conv = make_conv<S>(rng, c_thermal, c_rgb, 1);
    p.bn = make_batch_norm<S>(c_rgb);
    return p;
}

template <typename S>
Var<S> project_thermal(const Var<S>& thermal, const Var<S>& rgb_like, ThermalProj<S>& proj,
                       bool training) {
    const Tensor4<S>& t = thermal->value;
    const Tensor4<S>& r = rgb_like->value;
    if (t.h != r.h || t.w != r.w || t.n != r.n)
        throw FusionError("thermal features " + t.shape_str() +
                          " not aligned with rgb features " + r.shape_str());
    return gelu(batch_norm(conv2d(thermal, proj.conv), proj.bn, training));
}

template <typename S>
void register_thermal_proj(ParamRegistry<S>& reg, const std::string& prefix,
                           ThermalProj<S>& proj) {
    reg.add_conv(prefix + ".conv", proj.conv, LrGroup::fusion);
    reg.add_bn(prefix + ".bn", proj.bn, LrGroup::fusion);
}

}  // namespace rtfseg
