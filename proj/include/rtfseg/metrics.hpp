#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "rtfseg/tensor.hpp"

namespace rtfseg {

// ---------------------------------------------------------------------------
// confusion matrix
// ---------------------------------------------------------------------------

// K x K pixel counts; entry (g, p) = pixels whose truth is g and whose
// prediction is p. Accumulation is pure summation, so batch order never
// matters and per-worker matrices can simply be merged.
struct ConfusionMatrix {
    int classes = 0;
    std::vector<long long> counts;  // row-major: counts[g * classes + p]

    explicit ConfusionMatrix(int k) : classes(k), counts(static_cast<size_t>(k) * k, 0) {
        if (k < 1) throw ConfigError("confusion matrix needs at least one class");
    }

    long long& at(int g, int p) { return counts[static_cast<size_t>(g) * classes + p]; }
    long long at(int g, int p) const { return counts[static_cast<size_t>(g) * classes + p]; }

    long long total() const {
        long long t = 0;
        for (long long c : counts) t += c;
        return t;
    }

    long long correct() const {
        long long t = 0;
        for (int k = 0; k < classes; ++k) t += at(k, k);
        return t;
    }
};

// Counts every non-ignored pixel; truth pixels equal to ignore_index are
// skipped entirely. Any other id outside [0, K) in either map is a data error.
inline void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth,
                       int ignore_index = 255) {
    if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w)
        throw DataError("prediction and truth maps disagree in shape");
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
        int g = truth.v[i];
        if (g == ignore_index) continue;
        int p = pred.v[i];
        if (g < 0 || g >= cm.classes)
            throw DataError("label id " + std::to_string(g) + " outside [0, " +
                            std::to_string(cm.classes) + ")");
        if (p < 0 || p >= cm.classes)
            throw DataError("predicted id " + std::to_string(p) + " outside [0, " +
                            std::to_string(cm.classes) + ")");
        ++cm.at(g, p);
    }
}

inline void merge(ConfusionMatrix& into, const ConfusionMatrix& from) {
    if (into.classes != from.classes)
        throw DataError("cannot merge confusion matrices of different sizes");
    for (size_t i = 0; i < into.counts.size(); ++i) into.counts[i] += from.counts[i];
}

// ---------------------------------------------------------------------------
// scores
// ---------------------------------------------------------------------------

// IoU_c = diag_c / (row_c + col_c - diag_c). Classes with an empty union
// (never in the truth, never predicted) get NaN: they carry no information,
// and the two mean variants below treat them differently.
inline std::vector<double> iou_per_class(const ConfusionMatrix& cm) {
    std::vector<double> iou(cm.classes);
    for (int k = 0; k < cm.classes; ++k) {
        long long row = 0, col = 0;
        for (int j = 0; j < cm.classes; ++j) {
            row += cm.at(k, j);
            col += cm.at(j, k);
        }
        long long uni = row + col - cm.at(k, k);
        iou[k] = uni == 0 ? std::numeric_limits<double>::quiet_NaN()
                          : static_cast<double>(cm.at(k, k)) / static_cast<double>(uni);
    }
    return iou;
}

// Mean over classes that actually occur (empty-union classes excluded), so a
// scene that simply lacks some class is not scored against. `skip_class`
// additionally drops one class id from the mean (e.g. an unlabeled/background
// class); -1 scores everything.
inline double miou(const ConfusionMatrix& cm, int skip_class = -1) {
    std::vector<double> iou = iou_per_class(cm);
    double sum = 0.0;
    int present = 0;
    for (int k = 0; k < cm.classes; ++k) {
        if (k == skip_class || std::isnan(iou[k])) continue;
        sum += iou[k];
        ++present;
    }
    return present == 0 ? 0.0 : sum / present;
}

// Strict variant: every declared class participates and an empty union counts
// as zero, matching benchmark conventions that score the full class list.
inline double miou_all(const ConfusionMatrix& cm, int skip_class = -1) {
    std::vector<double> iou = iou_per_class(cm);
    double sum = 0.0;
    int scored = 0;
    for (int k = 0; k < cm.classes; ++k) {
        if (k == skip_class) continue;
        if (!std::isnan(iou[k])) sum += iou[k];
        ++scored;
    }
    return scored == 0 ? 0.0 : sum / scored;
}

inline double pixel_accuracy(const ConfusionMatrix& cm) {
    long long t = cm.total();
    return t == 0 ? 0.0 : static_cast<double>(cm.correct()) / static_cast<double>(t);
}

// ---------------------------------------------------------------------------
// prediction helpers
// ---------------------------------------------------------------------------

// Per-pixel argmax over the channel axis; ties resolve to the lowest class id
// so predictions stay deterministic.
template <typename S>
LabelMap argmax_labels(const Tensor4<S>& logits) {
    if (logits.c < 1) throw DataError("argmax needs at least one channel");
    LabelMap out(logits.n, logits.h, logits.w);
    for (int i = 0; i < logits.n; ++i)
        for (int y = 0; y < logits.h; ++y)
            for (int x = 0; x < logits.w; ++x) {
                int best = 0;
                S best_v = logits.at(i, 0, y, x);
                for (int j = 1; j < logits.c; ++j) {
                    S v = logits.at(i, j, y, x);
                    if (v > best_v) {
                        best_v = v;
                        best = j;
                    }
                }
                out.at(i, y, x) = best;
            }
    return out;
}

// Horizontal-flip test-time augmentation:
//   logits = 1/2 * (f(x) + hflip(f(hflip(x))))
// `infer` maps (rgb, ir) tensors to logits. Flipping both the inputs and the
// flipped branch's output keeps the average aligned with the original frame.
template <typename S, typename Fn>
Tensor4<S> tta_flip_infer(Fn&& infer, const Tensor4<S>& rgb, const Tensor4<S>& ir) {
    Tensor4<S> plain = infer(rgb, ir);
    Tensor4<S> mirrored = hflip(infer(hflip(rgb), hflip(ir)));
    if (!plain.same_shape(mirrored))
        throw DataError("flip inference changed the logit shape: " + plain.shape_str() + " vs " +
                        mirrored.shape_str());
    Tensor4<S> out(plain.n, plain.c, plain.h, plain.w);
    out.data = (plain.data + mirrored.data) * S(0.5);
    return out;
}

}  // namespace rtfseg
