#pragma once

#include <Eigen/Dense>

#include "rtfseg/autodiff.hpp"

namespace rtfseg {

enum class PadMode { zero, replicate };

// Convolution parameter bundle. Weight layout (out_c, in_c/groups, kh, kw);
// bias is (1, out_c, 1, 1) and optional.
template <typename S>
struct Conv2d {
    Var<S> weight;
    Var<S> bias;
    int stride = 1;
    int pad = 0;
    PadMode pad_mode = PadMode::zero;
    int groups = 1;
};

template <typename S>
Conv2d<S> make_conv(std::mt19937& rng, int in_c, int out_c, int k, int stride = 1, int pad = 0,
                    PadMode mode = PadMode::zero, int groups = 1, bool with_bias = true) {
    if (in_c <= 0 || out_c <= 0 || k <= 0) throw ConfigError("conv dims must be positive");
    if (in_c % groups != 0 || out_c % groups != 0)
        throw ConfigError("conv channels not divisible by groups");
    Conv2d<S> conv;
    Tensor4<S> w(out_c, in_c / groups, k, k);
    fill_fan_in(w, rng, static_cast<Eigen::Index>(in_c / groups) * k * k);
    conv.weight = param(std::move(w));
    if (with_bias) conv.bias = param(Tensor4<S>(1, out_c, 1, 1));
    conv.stride = stride;
    conv.pad = pad;
    conv.pad_mode = mode;
    conv.groups = groups;
    return conv;
}

// The residual tail of the safe fusion starts as the zero map: its final conv
// is zero-initialized so the module is exactly the identity at step 0.
template <typename S>
void zero_init(Conv2d<S>& conv) {
    conv.weight->value.data.setZero();
    if (conv.bias) conv.bias->value.data.setZero();
}

namespace detail {

struct ConvGeom {
    int n, ic, ih, iw, oc, kh, kw, oh, ow, stride, pad, groups, icg, ocg;
    PadMode mode;
};

template <typename S>
ConvGeom conv_geom(const Tensor4<S>& x, const Conv2d<S>& conv) {
    const Tensor4<S>& w = conv.weight->value;
    ConvGeom g;
    g.n = x.n;
    g.ic = x.c;
    g.ih = x.h;
    g.iw = x.w;
    g.oc = w.n;
    g.kh = w.h;
    g.kw = w.w;
    g.stride = conv.stride;
    g.pad = conv.pad;
    g.groups = conv.groups;
    g.mode = conv.pad_mode;
    if (g.stride < 1) throw ConfigError("conv stride must be >= 1");
    if (g.pad < 0) throw ConfigError("conv padding must be >= 0");
    if (g.groups < 1 || g.ic % g.groups != 0 || g.oc % g.groups != 0)
        throw ConfigError("conv channels not divisible by groups");
    g.icg = g.ic / g.groups;
    g.ocg = g.oc / g.groups;
    if (w.c != g.icg)
        throw ConfigError("conv weight expects " + std::to_string(w.c * g.groups) +
                          " input channels, image has " + std::to_string(g.ic));
    if (conv.bias && (conv.bias->value.c != g.oc || conv.bias->value.size() != g.oc))
        throw ConfigError("conv bias shape " + conv.bias->value.shape_str() + " for " +
                          std::to_string(g.oc) + " outputs");
    if (g.ih + 2 * g.pad < g.kh || g.iw + 2 * g.pad < g.kw)
        throw ConfigError("conv kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                          " exceeds padded input " + x.shape_str());
    g.oh = (g.ih + 2 * g.pad - g.kh) / g.stride + 1;
    g.ow = (g.iw + 2 * g.pad - g.kw) / g.stride + 1;
    return g;
}

// Unfold one (sample, group) into a (icg*kh*kw) x (oh*ow) matrix in double so
// the GEMM accumulates at the widest precision regardless of S.
template <typename S>
void im2col(const Tensor4<S>& x, int sample, int group, const ConvGeom& g, Eigen::MatrixXd& col) {
    col.resize(static_cast<Eigen::Index>(g.icg) * g.kh * g.kw,
               static_cast<Eigen::Index>(g.oh) * g.ow);
    for (int jc = 0; jc < g.icg; ++jc) {
        int cabs = group * g.icg + jc;
        for (int ky = 0; ky < g.kh; ++ky)
            for (int kx = 0; kx < g.kw; ++kx) {
                Eigen::Index row = (static_cast<Eigen::Index>(jc) * g.kh + ky) * g.kw + kx;
                Eigen::Index ocol = 0;
                for (int oy = 0; oy < g.oh; ++oy) {
                    int iy = oy * g.stride - g.pad + ky;
                    int cy = std::clamp(iy, 0, g.ih - 1);
                    bool y_in = (iy >= 0 && iy < g.ih);
                    for (int ox = 0; ox < g.ow; ++ox, ++ocol) {
                        int ix = ox * g.stride - g.pad + kx;
                        if (g.mode == PadMode::zero) {
                            col(row, ocol) = (y_in && ix >= 0 && ix < g.iw)
                                                 ? static_cast<double>(x.at(sample, cabs, iy, ix))
                                                 : 0.0;
                        } else {
                            int cx = std::clamp(ix, 0, g.iw - 1);
                            col(row, ocol) = static_cast<double>(x.at(sample, cabs, cy, cx));
                        }
                    }
                }
            }
    }
}

// Fold a column-gradient back onto the input. Replicate padding clamps, so
// border pixels collect every tap that was clamped onto them.
template <typename S>
void col2im_add(typename Tensor4<S>::Arr& dx, const Tensor4<S>& xshape, int sample, int group,
                const ConvGeom& g, const Eigen::MatrixXd& dcol) {
    for (int jc = 0; jc < g.icg; ++jc) {
        int cabs = group * g.icg + jc;
        for (int ky = 0; ky < g.kh; ++ky)
            for (int kx = 0; kx < g.kw; ++kx) {
                Eigen::Index row = (static_cast<Eigen::Index>(jc) * g.kh + ky) * g.kw + kx;
                Eigen::Index ocol = 0;
                for (int oy = 0; oy < g.oh; ++oy) {
                    int iy = oy * g.stride - g.pad + ky;
                    if (g.mode == PadMode::replicate) iy = std::clamp(iy, 0, g.ih - 1);
                    bool y_in = (iy >= 0 && iy < g.ih);
                    for (int ox = 0; ox < g.ow; ++ox, ++ocol) {
                        int ix = ox * g.stride - g.pad + kx;
                        if (g.mode == PadMode::replicate) ix = std::clamp(ix, 0, g.iw - 1);
                        if (y_in && ix >= 0 && ix < g.iw)
                            dx[xshape.offset(sample, cabs, iy, ix)] +=
                                static_cast<S>(dcol(row, ocol));
                    }
                }
            }
    }
}

}  // namespace detail

template <typename S>
Var<S> conv2d(const Var<S>& x, const Conv2d<S>& conv) {
    using detail::ConvGeom;
    const ConvGeom g = detail::conv_geom(x->value, conv);
    const Eigen::Index K = static_cast<Eigen::Index>(g.icg) * g.kh * g.kw;
    const Eigen::Index N = static_cast<Eigen::Index>(g.oh) * g.ow;

    Tensor4<S> out(g.n, g.oc, g.oh, g.ow);
    Eigen::MatrixXd col;
    for (int i = 0; i < g.n; ++i)
        for (int gr = 0; gr < g.groups; ++gr) {
            detail::im2col(x->value, i, gr, g, col);
            Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
                wmap(conv.weight->value.data.data() + static_cast<Eigen::Index>(gr) * g.ocg * K,
                     g.ocg, K);
            Eigen::MatrixXd prod = wmap.template cast<double>() * col;
            for (int o = 0; o < g.ocg; ++o) {
                int oc_abs = gr * g.ocg + o;
                double b = conv.bias ? static_cast<double>(conv.bias->value.data[oc_abs]) : 0.0;
                out.data.segment(out.offset(i, oc_abs, 0, 0), N) =
                    (prod.row(o).transpose().array() + b).template cast<S>();
            }
        }
    if (!out.all_finite()) throw NumericError("conv2d produced non-finite values");

    std::vector<Var<S>> inputs{x, conv.weight};
    if (conv.bias) inputs.push_back(conv.bias);
    Var<S> wvar = conv.weight, bvar = conv.bias, xvar = x;
    auto node = make_node<S>("conv2d", std::move(out), std::move(inputs), {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, xvar, wvar, bvar, g, K, N]() {
            Eigen::MatrixXd col, dy(g.ocg, N);
            const bool need_dx = xvar->requires_grad;
            const bool need_dw = wvar->requires_grad;
            const bool need_db = bvar && bvar->requires_grad;
            if (need_dx) xvar->ensure_grad();
            if (need_dw) wvar->ensure_grad();
            if (need_db) bvar->ensure_grad();
            for (int i = 0; i < g.n; ++i)
                for (int gr = 0; gr < g.groups; ++gr) {
                    for (int o = 0; o < g.ocg; ++o) {
                        int oc_abs = gr * g.ocg + o;
                        dy.row(o) = raw->grad.segment(raw->value.offset(i, oc_abs, 0, 0), N)
                                        .template cast<double>();
                        if (need_db) bvar->grad[oc_abs] += static_cast<S>(dy.row(o).sum());
                    }
                    if (need_dw || need_dx) detail::im2col(xvar->value, i, gr, g, col);
                    if (need_dw) {
                        Eigen::MatrixXd dw = dy * col.transpose();
                        Eigen::Map<
                            Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
                            gmap(wvar->grad.data() + static_cast<Eigen::Index>(gr) * g.ocg * K,
                                 g.ocg, K);
                        gmap += dw.template cast<S>();
                    }
                    if (need_dx) {
                        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic,
                                                       Eigen::RowMajor>>
                            wmap(wvar->value.data.data() +
                                     static_cast<Eigen::Index>(gr) * g.ocg * K,
                                 g.ocg, K);
                        Eigen::MatrixXd dcol = wmap.template cast<double>().transpose() * dy;
                        detail::col2im_add<S>(xvar->grad, xvar->value, i, gr, g, dcol);
                    }
                }
        };
    }
    return node;
}

// ----- fixed gaussian blur -----

// k x k gaussian tap table, sum-normalized. Built in double, then cast.
template <typename S>
Tensor4<S> gaussian_kernel(int k, double sigma) {
    if (k < 1 || k % 2 == 0) throw ConfigError("gaussian kernel size must be odd and positive");
    if (!(sigma > 0)) throw ConfigError("gaussian sigma must be positive");
    Tensor4<double> kd(1, 1, k, k);
    int r = k / 2;
    double z = 0.0;
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
            double dy = y - r, dx = x - r;
            double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            kd.at(0, 0, y, x) = v;
            z += v;
        }
    kd.data /= z;
    return kd.cast<S>();
}

// Per-channel blur with replicate borders; the taps are constants, so the
// gradient flows only to the image.
template <typename S>
Var<S> depthwise_gaussian_blur(const Var<S>& x, int k, double sigma) {
    int c = x->value.c;
    Tensor4<S> single = gaussian_kernel<S>(k, sigma);
    Tensor4<S> w(c, 1, k, k);
    for (int j = 0; j < c; ++j)
        w.data.segment(static_cast<Eigen::Index>(j) * k * k, k * k) = single.data;
    Conv2d<S> conv;
    conv.weight = constant(std::move(w));
    conv.stride = 1;
    conv.pad = k / 2;
    conv.pad_mode = PadMode::replicate;
    conv.groups = c;
    return conv2d(x, conv);
}

// ----- pooling -----

// Stacks per-pixel channel mean and channel max into a 2-channel map.
template <typename S>
Var<S> channel_pool(const Var<S>& x) {
    const Tensor4<S>& t = x->value;
    if (t.c < 1) throw ConfigError("channel_pool needs at least one channel");
    Tensor4<S> out(t.n, 2, t.h, t.w);
    std::vector<int> argmax(static_cast<size_t>(t.n) * t.h * t.w);
    Eigen::Index plane = static_cast<Eigen::Index>(t.h) * t.w;
    for (int i = 0; i < t.n; ++i)
        for (int y = 0; y < t.h; ++y)
            for (int xx = 0; xx < t.w; ++xx) {
                double acc = 0.0;
                S best = t.at(i, 0, y, xx);
                int bestc = 0;
                for (int j = 0; j < t.c; ++j) {
                    S v = t.at(i, j, y, xx);
                    acc += static_cast<double>(v);
                    if (v > best) {
                        best = v;
                        bestc = j;
                    }
                }
                out.at(i, 0, y, xx) = static_cast<S>(acc / t.c);
                out.at(i, 1, y, xx) = best;
                argmax[(static_cast<size_t>(i) * t.h + y) * t.w + xx] = bestc;
            }
    TapeNode<S>* xraw = x.get();
    auto node = make_node<S>("channel_pool", std::move(out), {x}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, xraw, argmax, plane]() {
            xraw->ensure_grad();
            const Tensor4<S>& t = xraw->value;
            for (int i = 0; i < t.n; ++i)
                for (int y = 0; y < t.h; ++y)
                    for (int xx = 0; xx < t.w; ++xx) {
                        S gavg = raw->grad[raw->value.offset(i, 0, y, xx)] / static_cast<S>(t.c);
                        S gmax = raw->grad[raw->value.offset(i, 1, y, xx)];
                        for (int j = 0; j < t.c; ++j)
                            xraw->grad[t.offset(i, j, y, xx)] += gavg;
                        int bestc = argmax[(static_cast<size_t>(i) * t.h + y) * t.w + xx];
                        xraw->grad[t.offset(i, bestc, y, xx)] += gmax;
                    }
        };
    }
    return node;
}

template <typename S>
Var<S> global_avg_pool(const Var<S>& x) {
    const Tensor4<S>& t = x->value;
    Eigen::Index plane = static_cast<Eigen::Index>(t.h) * t.w;
    if (plane == 0) throw ConfigError("global_avg_pool on empty spatial dims");
    Tensor4<S> out(t.n, t.c, 1, 1);
    for (int i = 0; i < t.n; ++i)
        for (int j = 0; j < t.c; ++j)
            out.at(i, j, 0, 0) = static_cast<S>(
                t.data.segment(t.offset(i, j, 0, 0), plane).template cast<double>().mean());
    TapeNode<S>* xraw = x.get();
    auto node = make_node<S>("gap", std::move(out), {x}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, xraw, plane]() {
            xraw->ensure_grad();
            const Tensor4<S>& t = xraw->value;
            for (int i = 0; i < t.n; ++i)
                for (int j = 0; j < t.c; ++j)
                    xraw->grad.segment(t.offset(i, j, 0, 0), plane) +=
                        raw->grad[raw->value.offset(i, j, 0, 0)] / static_cast<S>(plane);
        };
    }
    return node;
}

// ----- bilinear resize (half-pixel centers, no corner alignment) -----

namespace detail {

struct ResizeTaps {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

inline ResizeTaps resize_taps(int in, int out) {
    ResizeTaps t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    double scale = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
        double src = (d + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int l = static_cast<int>(src);
        if (l > in - 1) l = in - 1;
        t.lo[d] = l;
        t.hi[d] = std::min(l + 1, in - 1);
        t.frac[d] = src - l;
    }
    return t;
}

}  // namespace detail

template <typename S>
Var<S> bilinear_resize(const Var<S>& x, int oh, int ow) {
    const Tensor4<S>& t = x->value;
    if (oh < 1 || ow < 1) throw ConfigError("resize target must be positive");
    if (t.h < 1 || t.w < 1) throw ConfigError("resize source is empty");
    detail::ResizeTaps ty = detail::resize_taps(t.h, oh);
    detail::ResizeTaps tx = detail::resize_taps(t.w, ow);
    Tensor4<S> out(t.n, t.c, oh, ow);
    for (int i = 0; i < t.n; ++i)
        for (int j = 0; j < t.c; ++j)
            for (int y = 0; y < oh; ++y) {
                double fy = ty.frac[y];
                int y0 = ty.lo[y], y1 = ty.hi[y];
                for (int xx = 0; xx < ow; ++xx) {
                    double fx = tx.frac[xx];
                    int x0 = tx.lo[xx], x1 = tx.hi[xx];
                    double v = (1 - fy) * ((1 - fx) * t.at(i, j, y0, x0) +
                                           fx * t.at(i, j, y0, x1)) +
                               fy * ((1 - fx) * t.at(i, j, y1, x0) + fx * t.at(i, j, y1, x1));
                    out.at(i, j, y, xx) = static_cast<S>(v);
                }
            }
    TapeNode<S>* xraw = x.get();
    auto node = make_node<S>("bilinear", std::move(out), {x}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, xraw, ty, tx, oh, ow]() {
            xraw->ensure_grad();
            const Tensor4<S>& t = xraw->value;
            for (int i = 0; i < t.n; ++i)
                for (int j = 0; j < t.c; ++j)
                    for (int y = 0; y < oh; ++y) {
                        double fy = ty.frac[y];
                        int y0 = ty.lo[y], y1 = ty.hi[y];
                        for (int xx = 0; xx < ow; ++xx) {
                            double fx = tx.frac[xx];
                            int x0 = tx.lo[xx], x1 = tx.hi[xx];
                            double go = static_cast<double>(
                                raw->grad[raw->value.offset(i, j, y, xx)]);
                            xraw->grad[t.offset(i, j, y0, x0)] +=
                                static_cast<S>(go * (1 - fy) * (1 - fx));
                            xraw->grad[t.offset(i, j, y0, x1)] += static_cast<S>(go * (1 - fy) * fx);
                            xraw->grad[t.offset(i, j, y1, x0)] += static_cast<S>(go * fy * (1 - fx));
                            xraw->grad[t.offset(i, j, y1, x1)] += static_cast<S>(go * fy * fx);
                        }
                    }
        };
    }
    return node;
}

// ----- activations -----

template <typename S>
Var<S> relu(const Var<S>& x) {
    Tensor4<S> out = x->value;
    out.data = out.data.max(S(0));
    TapeNode<S>* xraw = x.get();
    auto node = make_node<S>("relu", std::move(out), {x}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, xraw]() {
            xraw->ensure_grad();
            xraw->grad += raw->grad * (xraw->value.data > S(0)).template cast<S>();
        };
    }
    return node;
}

template <typename S>
S sigmoid_scalar(S v) {
    if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
    S e = std::exp(v);
    return e / (S(1) + e);
}

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
    Tensor4<S> out = x->value;
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data[i] = sigmoid_scalar(out.data[i]);
    TapeNode<S>* xraw = x.get();
    auto node = make_node<S>("sigmoid", std::move(out), {x}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, xraw]() {
            xraw->ensure_grad();
            const auto& s = raw->value.data;
            xraw->grad += raw->grad * s * (S(1) - s);
        };
    }
    return node;
}

// tanh-form gaussian error linear unit.
template <typename S>
Var<S> gelu(const Var<S>& x) {
    constexpr double c0 = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c1 = 0.044715;
    Tensor4<S> out = x->value;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        double v = static_cast<double>(out.data[i]);
        double u = c0 * (v + c1 * v * v * v);
        out.data[i] = static_cast<S>(0.5 * v * (1.0 + std::tanh(u)));
    }
    TapeNode<S>* xraw = x.get();
    auto node = make_node<S>("gelu", std::move(out), {x}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, xraw]() {
            xraw->ensure_grad();
            for (Eigen::Index i = 0; i < raw->grad.size(); ++i) {
                double v = static_cast<double>(xraw->value.data[i]);
                double u = c0 * (v + c1 * v * v * v);
                double th = std::tanh(u);
                double sech2 = 1.0 - th * th;
                double d = 0.5 * (1.0 + th) + 0.5 * v * sech2 * c0 * (1.0 + 3.0 * c1 * v * v);
                xraw->grad[i] += static_cast<S>(static_cast<double>(raw->grad[i]) * d);
            }
        };
    }
    return node;
}

// Per-pixel softmax over the channel axis, max-shifted for stability.
template <typename S>
Var<S> softmax_channel(const Var<S>& x) {
    const Tensor4<S>& t = x->value;
    if (t.c < 1) throw ConfigError("softmax over empty channel axis");
    Tensor4<S> out(t.n, t.c, t.h, t.w);
    for (int i = 0; i < t.n; ++i)
        for (int y = 0; y < t.h; ++y)
            for (int xx = 0; xx < t.w; ++xx) {
                S m = t.at(i, 0, y, xx);
                for (int j = 1; j < t.c; ++j) m = std::max(m, t.at(i, j, y, xx));
                double z = 0.0;
                for (int j = 0; j < t.c; ++j) {
                    double e = std::exp(static_cast<double>(t.at(i, j, y, xx) - m));
                    out.at(i, j, y, xx) = static_cast<S>(e);
                    z += e;
                }
                for (int j = 0; j < t.c; ++j)
                    out.at(i, j, y, xx) = static_cast<S>(out.at(i, j, y, xx) / z);
            }
    TapeNode<S>* xraw = x.get();
    auto node = make_node<S>("softmax_c", std::move(out), {x}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, xraw]() {
            xraw->ensure_grad();
            const Tensor4<S>& p = raw->value;
            for (int i = 0; i < p.n; ++i)
                for (int y = 0; y < p.h; ++y)
                    for (int xx = 0; xx < p.w; ++xx) {
                        double dot = 0.0;
                        for (int j = 0; j < p.c; ++j)
                            dot += static_cast<double>(raw->grad[p.offset(i, j, y, xx)]) *
                                   static_cast<double>(p.at(i, j, y, xx));
                        for (int j = 0; j < p.c; ++j) {
                            Eigen::Index o = p.offset(i, j, y, xx);
                            xraw->grad[o] += static_cast<S>(
                                static_cast<double>(p.at(i, j, y, xx)) *
                                (static_cast<double>(raw->grad[o]) - dot));
                        }
                    }
        };
    }
    return node;
}

// ----- batch normalization -----

template <typename S>
struct BatchNorm {
    Var<S> gamma, beta;                    // (1, c, 1, 1)
    Tensor4<S> running_mean, running_var;  // buffers, not gradient-tracked
    S eps = S(1e-5);
    S momentum = S(0.1);
};

template <typename S>
BatchNorm<S> make_batch_norm(int c) {
    BatchNorm<S> bn;
    bn.gamma = param(Tensor4<S>::full(1, c, 1, 1, S(1)));
    bn.beta = param(Tensor4<S>(1, c, 1, 1));
    bn.running_mean = Tensor4<S>(1, c, 1, 1);
    bn.running_var = Tensor4<S>::full(1, c, 1, 1, S(1));
    return bn;
}

template <typename S>
Var<S> batch_norm(const Var<S>& x, BatchNorm<S>& bn, bool training) {
    const Tensor4<S>& t = x->value;
    const int c = bn.gamma->value.c;
    if (t.c != c)
        throw ConfigError("batch_norm over " + std::to_string(c) + " channels got " +
                          t.shape_str());
    const Eigen::Index plane = static_cast<Eigen::Index>(t.h) * t.w;
    const Eigen::Index m = static_cast<Eigen::Index>(t.n) * plane;

    std::vector<S> mean(c), invstd(c);
    if (training) {
        if (m <= 1)
            throw DegenerateStatsError("batch_norm needs more than one value per channel, got " +
                                       std::to_string(m));
        for (int j = 0; j < c; ++j) {
            double sum = 0.0, sq = 0.0;
            for (int i = 0; i < t.n; ++i) {
                auto seg = t.data.segment(t.offset(i, j, 0, 0), plane).template cast<double>();
                sum += seg.sum();
                sq += (seg * seg).sum();
            }
            double mu = sum / m;
            double var = sq / m - mu * mu;
            if (var < 0) var = 0;  // guard tiny negative round-off
            mean[j] = static_cast<S>(mu);
            invstd[j] = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(bn.eps)));
            double unbiased = var * m / (m - 1);
            bn.running_mean.data[j] =
                (S(1) - bn.momentum) * bn.running_mean.data[j] + bn.momentum * static_cast<S>(mu);
            bn.running_var.data[j] = (S(1) - bn.momentum) * bn.running_var.data[j] +
                                     bn.momentum * static_cast<S>(unbiased);
        }
    } else {
        for (int j = 0; j < c; ++j) {
            mean[j] = bn.running_mean.data[j];
            invstd[j] = static_cast<S>(
                1.0 / std::sqrt(static_cast<double>(bn.running_var.data[j]) +
                                static_cast<double>(bn.eps)));
        }
    }

    Tensor4<S> out(t.n, t.c, t.h, t.w);
    for (int i = 0; i < t.n; ++i)
        for (int j = 0; j < c; ++j) {
            S gma = bn.gamma->value.data[j], bta = bn.beta->value.data[j];
            out.data.segment(out.offset(i, j, 0, 0), plane) =
                (t.data.segment(t.offset(i, j, 0, 0), plane) - mean[j]) * invstd[j] * gma + bta;
        }

    Var<S> xvar = x, gvar = bn.gamma, bvar = bn.beta;
    auto node = make_node<S>("batch_norm", std::move(out), {x, bn.gamma, bn.beta}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, xvar, gvar, bvar, mean, invstd, training, plane, m, c]() {
            const Tensor4<S>& t = xvar->value;
            if (gvar->requires_grad) gvar->ensure_grad();
            if (bvar->requires_grad) bvar->ensure_grad();
            if (xvar->requires_grad) xvar->ensure_grad();
            for (int j = 0; j < c; ++j) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int i = 0; i < t.n; ++i) {
                    auto gy = raw->grad.segment(raw->value.offset(i, j, 0, 0), plane)
                                  .template cast<double>();
                    auto xh = ((t.data.segment(t.offset(i, j, 0, 0), plane) - mean[j]) *
                               invstd[j])
                                  .template cast<double>();
                    sum_dy += gy.sum();
                    sum_dy_xhat += (gy * xh).sum();
                }
                if (gvar->requires_grad) gvar->grad[j] += static_cast<S>(sum_dy_xhat);
                if (bvar->requires_grad) bvar->grad[j] += static_cast<S>(sum_dy);
                if (!xvar->requires_grad) continue;
                double gma = static_cast<double>(gvar->value.data[j]);
                double istd = static_cast<double>(invstd[j]);
                for (int i = 0; i < t.n; ++i) {
                    auto gy = raw->grad.segment(raw->value.offset(i, j, 0, 0), plane)
                                  .template cast<double>();
                    auto xh = ((t.data.segment(t.offset(i, j, 0, 0), plane) - mean[j]) *
                               invstd[j])
                                  .template cast<double>();
                    if (training) {
                        // Batch statistics depend on x, so the jacobian couples
                        // every element in the channel.
                        xvar->grad.segment(t.offset(i, j, 0, 0), plane) +=
                            ((gma * istd / m) * (m * gy - sum_dy - xh * sum_dy_xhat))
                                .template cast<S>();
                    } else {
                        xvar->grad.segment(t.offset(i, j, 0, 0), plane) +=
                            (gy * gma * istd).template cast<S>();
                    }
                }
            }
        };
    }
    return node;
}

}  // namespace rtfseg
