#pragma once

#include <numeric>

#include "rtfseg/nn_ops.hpp"

namespace rtfseg {

// Composite-objective weighting. Defaults follow the training recipe: CE 0.4,
// Dice 0.2, Lovasz 0.2, OHEM 0.1, boundary 0.1, focal 0.25 (gamma 2.5), with
// auxiliary weight 0.4 and deep-supervision weights rising with depth.
struct LossWeights {
    double ce = 0.4, dice = 0.2, lovasz = 0.2, ohem = 0.1, boundary = 0.1, focal = 0.25;
    double focal_gamma = 2.5;
    double lambda_aux = 0.4;
    std::array<double, 4> deep{0.1, 0.2, 0.3, 0.4};
    double label_smoothing = 0.1;
    double ohem_keep = 0.25;
    long long ohem_min_kept = -1;  // -1: h*w/16
};

// Inverse-frequency weights, mean-normalized over observed classes and clipped
// to [0.5, 5.0]; classes never observed get the clip maximum.
inline std::vector<double> class_weights_from_frequencies(const std::vector<long long>& counts) {
    long long total = std::accumulate(counts.begin(), counts.end(), 0LL);
    if (counts.empty() || total <= 0)
        throw ConfigError("class weights need a non-empty label histogram");
    std::vector<double> w(counts.size(), 0.0);
    double sum = 0.0;
    int observed = 0;
    for (size_t c = 0; c < counts.size(); ++c)
        if (counts[c] > 0) {
            w[c] = static_cast<double>(total) / counts[c];
            sum += w[c];
            ++observed;
        }
    double mean = sum / observed;
    for (size_t c = 0; c < counts.size(); ++c) {
        w[c] = counts[c] > 0 ? std::clamp(w[c] / mean, 0.5, 5.0) : 5.0;
    }
    return w;
}

namespace detail {

struct PixelView {
    int n, k, h, w;
    Eigen::Index pixels;  // n*h*w
};

template <typename S>
PixelView check_logits_labels(const Tensor4<S>& logits, const LabelMap& labels, int ignore_index) {
    if (logits.n != labels.n || logits.h != labels.h || logits.w != labels.w)
        throw ConfigError("logits " + logits.shape_str() + " do not align with labels (" +
                          std::to_string(labels.n) + "," + std::to_string(labels.h) + "," +
                          std::to_string(labels.w) + ")");
    if (logits.c < 2) throw ConfigError("need at least 2 classes, got " + logits.shape_str());
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        int v = labels.v[i];
        if (v != ignore_index && (v < 0 || v >= logits.c))
            throw DataError("label id " + std::to_string(v) + " outside [0," +
                            std::to_string(logits.c) + ")");
    }
    return {logits.n, logits.c, logits.h, logits.w,
            static_cast<Eigen::Index>(logits.n) * logits.h * logits.w};
}

// Per-pixel softmax in double: out(k, pixel) with pixel = (i*h + y)*w + x.
template <typename S>
Eigen::ArrayXXd softmax_pixels(const Tensor4<S>& logits) {
    const int k = logits.c;
    Eigen::Index pixels = static_cast<Eigen::Index>(logits.n) * logits.h * logits.w;
    Eigen::ArrayXXd p(k, pixels);
    Eigen::Index q = 0;
    for (int i = 0; i < logits.n; ++i)
        for (int y = 0; y < logits.h; ++y)
            for (int x = 0; x < logits.w; ++x, ++q) {
                double m = logits.at(i, 0, y, x);
                for (int c = 1; c < k; ++c)
                    m = std::max(m, static_cast<double>(logits.at(i, c, y, x)));
                double z = 0;
                for (int c = 0; c < k; ++c) {
                    double e = std::exp(static_cast<double>(logits.at(i, c, y, x)) - m);
                    p(c, q) = e;
                    z += e;
                }
                p.col(q) /= z;
            }
    return p;
}

// Maps pixel index back onto the logits tensor offset of class c.
template <typename S>
Eigen::Index class_offset(const Tensor4<S>& logits, Eigen::Index pixel, int c) {
    Eigen::Index hw = static_cast<Eigen::Index>(logits.h) * logits.w;
    Eigen::Index i = pixel / hw, rest = pixel % hw;
    return (i * logits.c + c) * hw + rest;
}

template <typename S>
Var<S> scalar_loss_node(const char* name, double value, const Var<S>& logits,
                        std::function<void(typename Tensor4<S>::Arr&, double)> add_grad) {
    if (!std::isfinite(value)) throw NumericError(std::string(name) + " is non-finite");
    Tensor4<S> out(1, 1, 1, 1);
    out.data[0] = static_cast<S>(value);
    TapeNode<S>* lraw = logits.get();
    auto node = make_node<S>(name, std::move(out), {logits}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, lraw, add_grad]() {
            lraw->ensure_grad();
            add_grad(lraw->grad, static_cast<double>(raw->grad[0]));
        };
    }
    return node;
}

}  // namespace detail

// Cross-entropy against (1-eps)*onehot + eps/K targets, scaled by the true
// class's weight, averaged over non-ignored pixels.
template <typename S>
Var<S> smoothed_weighted_ce(const Var<S>& logits, const LabelMap& labels,
                            const std::vector<double>& class_weights, double epsilon,
                            int ignore_index) {
    auto view = detail::check_logits_labels(logits->value, labels, ignore_index);
    if (static_cast<int>(class_weights.size()) != view.k)
        throw ConfigError("expected " + std::to_string(view.k) + " class weights, got " +
                          std::to_string(class_weights.size()));
    Eigen::ArrayXXd p = detail::softmax_pixels(logits->value);
    const int k = view.k;
    double acc = 0.0;
    Eigen::Index n_valid = 0;
    for (Eigen::Index q = 0; q < view.pixels; ++q) {
        int y = labels.v[q];
        if (y == ignore_index) continue;
        ++n_valid;
        double ce = 0.0;
        for (int c = 0; c < k; ++c) {
            double target = epsilon / k + (c == y ? 1.0 - epsilon : 0.0);
            if (target > 0.0) ce -= target * std::log(p(c, q));
        }
        acc += class_weights[y] * ce;
    }
    if (n_valid == 0) return constant(Tensor4<S>(1, 1, 1, 1));  // defined as 0, no gradient
    double value = acc / n_valid;

    Tensor4<S> lcopy = logits->value;
    LabelMap lab = labels;
    std::vector<double> cw = class_weights;
    return detail::scalar_loss_node<S>(
        "smoothed_ce", value, logits,
        [p = std::move(p), lcopy, lab, cw, epsilon, k, n_valid, ignore_index](
            typename Tensor4<S>::Arr& g, double gout) {
            for (Eigen::Index q = 0; q < lab.size(); ++q) {
                int y = lab.v[q];
                if (y == ignore_index) continue;
                double scale = gout * cw[y] / n_valid;
                for (int c = 0; c < k; ++c) {
                    double target = epsilon / k + (c == y ? 1.0 - epsilon : 0.0);
                    g[detail::class_offset(lcopy, q, c)] +=
                        static_cast<S>(scale * (p(c, q) - target));
                }
            }
        });
}

// 1 - (2*intersection + s) / (prediction-sum + truth-sum + s) on softmax
// probabilities, averaged over classes present in the labels.
template <typename S>
Var<S> soft_dice(const Var<S>& logits, const LabelMap& labels, int ignore_index,
                 double smooth = 1.0) {
    auto view = detail::check_logits_labels(logits->value, labels, ignore_index);
    Eigen::ArrayXXd p = detail::softmax_pixels(logits->value);
    const int k = view.k;

    std::vector<double> inter(k, 0.0), psum(k, 0.0), gsum(k, 0.0);
    for (Eigen::Index q = 0; q < view.pixels; ++q) {
        int y = labels.v[q];
        if (y == ignore_index) continue;
        for (int c = 0; c < k; ++c) psum[c] += p(c, q);
        gsum[y] += 1.0;
        inter[y] += p(y, q);
    }
    std::vector<int> present;
    for (int c = 0; c < k; ++c)
        if (gsum[c] > 0) present.push_back(c);
    if (present.empty()) return constant(Tensor4<S>(1, 1, 1, 1));

    double value = 0.0;
    for (int c : present)
        value += 1.0 - (2.0 * inter[c] + smooth) / (psum[c] + gsum[c] + smooth);
    value /= present.size();

    Tensor4<S> lcopy = logits->value;
    LabelMap lab = labels;
    return detail::scalar_loss_node<S>(
        "soft_dice", value, logits,
        [p = std::move(p), lcopy, lab, inter, psum, gsum, present, smooth, k,
         ignore_index](typename Tensor4<S>::Arr& g, double gout) {
            // dl/dp per class, then chain through softmax per pixel.
            const double np = static_cast<double>(present.size());
            for (Eigen::Index q = 0; q < lab.size(); ++q) {
                int y = lab.v[q];
                if (y == ignore_index) continue;
                // dp(c,q) for each present class
                std::vector<double> dp(k, 0.0);
                for (int c : present) {
                    double u = psum[c] + gsum[c] + smooth;
                    double i2 = 2.0 * inter[c] + smooth;
                    double gind = (c == y) ? 1.0 : 0.0;
                    dp[c] = -(2.0 * gind * u - i2) / (u * u) / np;
                }
                double dot = 0.0;
                for (int c = 0; c < k; ++c) dot += dp[c] * p(c, q);
                for (int c = 0; c < k; ++c)
                    g[detail::class_offset(lcopy, q, c)] +=
                        static_cast<S>(gout * p(c, q) * (dp[c] - dot));
            }
        });
}

namespace detail {

// Lovasz extension gradient of the Jaccard loss for a descending-sorted
// ground-truth indicator vector.
inline std::vector<double> lovasz_grad(const std::vector<double>& gt_sorted) {
    size_t n = gt_sorted.size();
    double gts = std::accumulate(gt_sorted.begin(), gt_sorted.end(), 0.0);
    std::vector<double> jac(n);
    double cum_gt = 0.0, cum_not = 0.0;
    for (size_t i = 0; i < n; ++i) {
        cum_gt += gt_sorted[i];
        cum_not += 1.0 - gt_sorted[i];
        double inter = gts - cum_gt;
        double uni = gts + cum_not;
        jac[i] = 1.0 - inter / uni;
    }
    for (size_t i = n; i-- > 1;) jac[i] -= jac[i - 1];
    return jac;
}

}  // namespace detail

// Lovasz-softmax: per present class, sort errors m = |truth - p| descending
// (ties broken by pixel order) and take the dot product with the Jaccard
// extension gradient; average over present classes.
template <typename S>
Var<S> lovasz_softmax(const Var<S>& logits, const LabelMap& labels, int ignore_index) {
    auto view = detail::check_logits_labels(logits->value, labels, ignore_index);
    Eigen::ArrayXXd p = detail::softmax_pixels(logits->value);
    const int k = view.k;

    std::vector<Eigen::Index> valid;
    for (Eigen::Index q = 0; q < view.pixels; ++q)
        if (labels.v[q] != ignore_index) valid.push_back(q);
    if (valid.empty()) return constant(Tensor4<S>(1, 1, 1, 1));

    std::vector<int> present;
    {
        std::vector<char> seen(k, 0);
        for (Eigen::Index q : valid) seen[labels.v[q]] = 1;
        for (int c = 0; c < k; ++c)
            if (seen[c]) present.push_back(c);
    }

    // dm per (class, valid-pixel): the extension is locally linear, so the
    // sorted coefficients double as the exact gradient w.r.t. the errors.
    Eigen::ArrayXXd dm = Eigen::ArrayXXd::Zero(k, static_cast<Eigen::Index>(valid.size()));
    double value = 0.0;
    for (int c : present) {
        std::vector<size_t> order(valid.size());
        std::iota(order.begin(), order.end(), size_t{0});
        std::vector<double> m(valid.size());
        for (size_t j = 0; j < valid.size(); ++j) {
            bool is_c = labels.v[valid[j]] == c;
            m[j] = is_c ? 1.0 - p(c, valid[j]) : p(c, valid[j]);
        }
        std::stable_sort(order.begin(), order.end(),
                         [&](size_t a, size_t b) { return m[a] > m[b]; });
        std::vector<double> gt_sorted(valid.size());
        for (size_t r = 0; r < order.size(); ++r)
            gt_sorted[r] = labels.v[valid[order[r]]] == c ? 1.0 : 0.0;
        std::vector<double> coeff = detail::lovasz_grad(gt_sorted);
        for (size_t r = 0; r < order.size(); ++r) {
            value += m[order[r]] * coeff[r];
            dm(c, static_cast<Eigen::Index>(order[r])) = coeff[r];
        }
    }
    value /= present.size();

    Tensor4<S> lcopy = logits->value;
    LabelMap lab = labels;
    return detail::scalar_loss_node<S>(
        "lovasz", value, logits,
        [p = std::move(p), dm = std::move(dm), valid, present, lab, lcopy, k](
            typename Tensor4<S>::Arr& g, double gout) {
            const double np = static_cast<double>(present.size());
            for (size_t j = 0; j < valid.size(); ++j) {
                Eigen::Index q = valid[j];
                std::vector<double> dp(k, 0.0);
                for (int c : present) {
                    double d = dm(c, static_cast<Eigen::Index>(j)) / np;
                    // m = 1 - p for the true class, p otherwise
                    dp[c] = (lab.v[q] == c) ? -d : d;
                }
                double dot = 0.0;
                for (int c = 0; c < k; ++c) dot += dp[c] * p(c, q);
                for (int c = 0; c < k; ++c)
                    g[detail::class_offset(lcopy, q, c)] +=
                        static_cast<S>(gout * p(c, q) * (dp[c] - dot));
            }
        });
}

// Weighted CE averaged over only the hardest pixels: the top
// max(keep_fraction*N, min_kept) by per-pixel loss, N = non-ignored count.
template <typename S>
Var<S> ohem_ce(const Var<S>& logits, const LabelMap& labels,
               const std::vector<double>& class_weights, double keep_fraction,
               long long min_kept, int ignore_index) {
    auto view = detail::check_logits_labels(logits->value, labels, ignore_index);
    if (static_cast<int>(class_weights.size()) != view.k)
        throw ConfigError("expected " + std::to_string(view.k) + " class weights");
    if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
        throw ConfigError("ohem keep fraction must be in (0, 1]");
    Eigen::ArrayXXd p = detail::softmax_pixels(logits->value);

    std::vector<Eigen::Index> valid;
    std::vector<double> pixel_loss;
    for (Eigen::Index q = 0; q < view.pixels; ++q) {
        int y = labels.v[q];
        if (y == ignore_index) continue;
        valid.push_back(q);
        pixel_loss.push_back(-class_weights[y] * std::log(p(y, q)));
    }
    if (valid.empty()) return constant(Tensor4<S>(1, 1, 1, 1));

    long long min_eff = min_kept < 0
                            ? static_cast<long long>(view.h) * view.w / 16
                            : min_kept;
    long long n_keep = static_cast<long long>(
        std::ceil(keep_fraction * static_cast<double>(valid.size())));
    n_keep = std::max({n_keep, min_eff, 1LL});
    n_keep = std::min<long long>(n_keep, static_cast<long long>(valid.size()));

    std::vector<size_t> order(valid.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return pixel_loss[a] > pixel_loss[b]; });

    double acc = 0.0;
    std::vector<Eigen::Index> kept(n_keep);
    for (long long j = 0; j < n_keep; ++j) {
        kept[j] = valid[order[j]];
        acc += pixel_loss[order[j]];
    }
    double value = acc / n_keep;

    Tensor4<S> lcopy = logits->value;
    LabelMap lab = labels;
    std::vector<double> cw = class_weights;
    const int k = view.k;
    return detail::scalar_loss_node<S>(
        "ohem_ce", value, logits,
        [p = std::move(p), kept, lab, cw, lcopy, k, n_keep](typename Tensor4<S>::Arr& g,
                                                            double gout) {
            for (Eigen::Index q : kept) {
                int y = lab.v[q];
                double scale = gout * cw[y] / static_cast<double>(n_keep);
                for (int c = 0; c < k; ++c)
                    g[detail::class_offset(lcopy, q, c)] +=
                        static_cast<S>(scale * (p(c, q) - (c == y ? 1.0 : 0.0)));
            }
        });
}

// Mean of (1 - p_true)^gamma * (-log p_true) over non-ignored pixels,
// unweighted.
template <typename S>
Var<S> focal_loss(const Var<S>& logits, const LabelMap& labels, double gamma, int ignore_index) {
    auto view = detail::check_logits_labels(logits->value, labels, ignore_index);
    if (gamma < 0.0) throw ConfigError("focal gamma must be nonnegative");
    Eigen::ArrayXXd p = detail::softmax_pixels(logits->value);
    const int k = view.k;

    double acc = 0.0;
    Eigen::Index n_valid = 0;
    for (Eigen::Index q = 0; q < view.pixels; ++q) {
        int y = labels.v[q];
        if (y == ignore_index) continue;
        ++n_valid;
        double pt = p(y, q);
        acc += std::pow(1.0 - pt, gamma) * (-std::log(pt));
    }
    if (n_valid == 0) return constant(Tensor4<S>(1, 1, 1, 1));
    double value = acc / n_valid;

    Tensor4<S> lcopy = logits->value;
    LabelMap lab = labels;
    return detail::scalar_loss_node<S>(
        "focal", value, logits,
        [p = std::move(p), lab, lcopy, gamma, k, n_valid, ignore_index](
            typename Tensor4<S>::Arr& g, double gout) {
            for (Eigen::Index q = 0; q < lab.size(); ++q) {
                int y = lab.v[q];
                if (y == ignore_index) continue;
                double pt = p(y, q);
                double one_m = 1.0 - pt;
                // d/dp of (1-p)^g * (-log p); the power-rule term vanishes at
                // gamma = 0 where it would otherwise be 0 * inf.
                double dfdp = -std::pow(one_m, gamma) / pt;
                if (gamma > 0.0 && one_m > 0.0)
                    dfdp += gamma * std::pow(one_m, gamma - 1.0) * std::log(pt);
                double scale = gout / n_valid;
                for (int c = 0; c < k; ++c) {
                    double dpt_dz = pt * ((c == y ? 1.0 : 0.0) - p(c, q));
                    g[detail::class_offset(lcopy, q, c)] += static_cast<S>(scale * dfdp * dpt_dz);
                }
            }
        });
}

namespace detail {

// Pixels whose 3x3 label Laplacian (center 8, neighbors -1, replicate border)
// is nonzero, grown by one pixel of 8-connected dilation.
inline std::vector<char> label_edge_mask(const LabelMap& labels) {
    std::vector<char> edge(labels.size(), 0), out(labels.size(), 0);
    for (int i = 0; i < labels.n; ++i)
        for (int y = 0; y < labels.h; ++y)
            for (int x = 0; x < labels.w; ++x) {
                long long lap = 8LL * labels.at(i, y, x);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        int yy = std::clamp(y + dy, 0, labels.h - 1);
                        int xx = std::clamp(x + dx, 0, labels.w - 1);
                        lap -= labels.at(i, yy, xx);
                    }
                if (lap != 0) edge[(static_cast<size_t>(i) * labels.h + y) * labels.w + x] = 1;
            }
    for (int i = 0; i < labels.n; ++i)
        for (int y = 0; y < labels.h; ++y)
            for (int x = 0; x < labels.w; ++x) {
                bool hit = false;
                for (int dy = -1; dy <= 1 && !hit; ++dy)
                    for (int dx = -1; dx <= 1 && !hit; ++dx) {
                        int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= labels.h || xx < 0 || xx >= labels.w) continue;
                        hit = edge[(static_cast<size_t>(i) * labels.h + yy) * labels.w + xx] != 0;
                    }
                if (hit) out[(static_cast<size_t>(i) * labels.h + y) * labels.w + x] = 1;
            }
    return out;
}

}  // namespace detail

// Plain CE averaged over label-edge pixels only; zero when the map is flat.
template <typename S>
Var<S> boundary_loss(const Var<S>& logits, const LabelMap& labels, int ignore_index) {
    auto view = detail::check_logits_labels(logits->value, labels, ignore_index);
    Eigen::ArrayXXd p = detail::softmax_pixels(logits->value);
    const int k = view.k;
    std::vector<char> edge = detail::label_edge_mask(labels);

    std::vector<Eigen::Index> picked;
    double acc = 0.0;
    for (Eigen::Index q = 0; q < view.pixels; ++q) {
        int y = labels.v[q];
        if (y == ignore_index || !edge[q]) continue;
        picked.push_back(q);
        acc += -std::log(p(y, q));
    }
    if (picked.empty()) return constant(Tensor4<S>(1, 1, 1, 1));
    double value = acc / picked.size();

    Tensor4<S> lcopy = logits->value;
    LabelMap lab = labels;
    return detail::scalar_loss_node<S>(
        "boundary", value, logits,
        [p = std::move(p), picked, lab, lcopy, k](typename Tensor4<S>::Arr& g, double gout) {
            double scale = gout / static_cast<double>(picked.size());
            for (Eigen::Index q : picked) {
                int y = lab.v[q];
                for (int c = 0; c < k; ++c)
                    g[detail::class_offset(lcopy, q, c)] +=
                        static_cast<S>(scale * (p(c, q) - (c == y ? 1.0 : 0.0)));
            }
        });
}

template <typename S>
struct LossBreakdown {
    S ce = 0, dice = 0, lovasz = 0, ohem = 0, boundary = 0, focal = 0;
    S aux = 0;
    std::array<S, 4> deep{};
    S main = 0, total = 0;
    Var<S> total_var;
};

// Recombines breakdown fields with the configured weights using the same
// arithmetic order and precision as the differentiable chain, so the result
// matches LossBreakdown::total bit-for-bit.
template <typename S>
S composed_total(const LossWeights& lw, const LossBreakdown<S>& b, bool has_aux, bool has_deep) {
    S main = b.ce * static_cast<S>(lw.ce);
    main = main + b.dice * static_cast<S>(lw.dice);
    main = main + b.lovasz * static_cast<S>(lw.lovasz);
    main = main + b.ohem * static_cast<S>(lw.ohem);
    main = main + b.boundary * static_cast<S>(lw.boundary);
    main = main + b.focal * static_cast<S>(lw.focal);
    if (!has_aux && !has_deep) return main;
    S side = 0;
    bool started = false;
    if (has_aux) {
        side = b.aux;
        started = true;
    }
    if (has_deep)
        for (size_t i = 0; i < b.deep.size(); ++i) {
            S weighted = b.deep[i] * static_cast<S>(lw.deep[i]);
            side = started ? side + weighted : weighted;
            started = true;
        }
    return main + side * static_cast<S>(lw.lambda_aux);
}

// Main objective plus lambda_aux * (aux CE + sum of weighted deep CE terms).
// The composition is an explicit affine chain so the breakdown fields
// recombine to the total bit-for-bit.
template <typename S>
LossBreakdown<S> composite_loss(const Var<S>& main_logits, const Var<S>& aux_logits,
                                const std::vector<Var<S>>& deep_logits, const LabelMap& labels,
                                const LossWeights& lw, const std::vector<double>& class_weights,
                                int ignore_index) {
    if (!deep_logits.empty() && deep_logits.size() != 4)
        throw ConfigError("deep supervision expects 4 logit maps, got " +
                          std::to_string(deep_logits.size()));
    LossBreakdown<S> out;
    Var<S> ce = smoothed_weighted_ce(main_logits, labels, class_weights, lw.label_smoothing,
                                     ignore_index);
    Var<S> dice = soft_dice(main_logits, labels, ignore_index);
    Var<S> lov = lovasz_softmax(main_logits, labels, ignore_index);
    Var<S> oh = ohem_ce(main_logits, labels, class_weights, lw.ohem_keep, lw.ohem_min_kept,
                        ignore_index);
    Var<S> bd = boundary_loss(main_logits, labels, ignore_index);
    Var<S> fo = focal_loss(main_logits, labels, lw.focal_gamma, ignore_index);
    out.ce = ce->value.data[0];
    out.dice = dice->value.data[0];
    out.lovasz = lov->value.data[0];
    out.ohem = oh->value.data[0];
    out.boundary = bd->value.data[0];
    out.focal = fo->value.data[0];

    Var<S> main = scale(ce, static_cast<S>(lw.ce));
    main = add(main, scale(dice, static_cast<S>(lw.dice)));
    main = add(main, scale(lov, static_cast<S>(lw.lovasz)));
    main = add(main, scale(oh, static_cast<S>(lw.ohem)));
    main = add(main, scale(bd, static_cast<S>(lw.boundary)));
    main = add(main, scale(fo, static_cast<S>(lw.focal)));
    out.main = main->value.data[0];

    Var<S> total = main;
    if (aux_logits || !deep_logits.empty()) {
        Var<S> side;
        if (aux_logits) {
            Var<S> aux = smoothed_weighted_ce(aux_logits, labels, class_weights, 0.0,
                                              ignore_index);
            out.aux = aux->value.data[0];
            side = aux;
        }
        for (size_t i = 0; i < deep_logits.size(); ++i) {
            Var<S> d = smoothed_weighted_ce(deep_logits[i], labels, class_weights, 0.0,
                                            ignore_index);
            out.deep[i] = d->value.data[0];
            Var<S> weighted = scale(d, static_cast<S>(lw.deep[i]));
            side = side ? add(side, weighted) : weighted;
        }
        total = add(total, scale(side, static_cast<S>(lw.lambda_aux)));
    }
    out.total = total->value.data[0];
    out.total_var = total;
    return out;
}

}  // namespace rtfseg
