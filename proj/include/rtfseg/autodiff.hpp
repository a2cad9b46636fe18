#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "rtfseg/tensor.hpp"

namespace rtfseg {

// Reverse-mode tape. Every differentiable op returns a new node holding its
// output value, handles to its inputs, and a closure that scatters the output
// gradient back onto them. backward() replays the closures in reverse
// topological order; fan-out accumulates via += on the input grads.
template <typename S>
struct TapeNode {
    using Arr = typename Tensor4<S>::Arr;

    Tensor4<S> value;
    Arr grad;  // lazily sized to match value
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TapeNode>> inputs;
    std::function<void()> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad = Arr::Zero(value.size());
    }
};

template <typename S>
using Var = std::shared_ptr<TapeNode<S>>;

template <typename S>
Var<S> constant(Tensor4<S> v) {
    auto node = std::make_shared<TapeNode<S>>();
    node->value = std::move(v);
    return node;
}

template <typename S>
Var<S> param(Tensor4<S> v) {
    auto node = constant(std::move(v));
    node->requires_grad = true;
    return node;
}

template <typename S>
Var<S> make_node(const char* op, Tensor4<S> out, std::vector<Var<S>> inputs,
                 std::function<void()> backprop) {
    auto node = std::make_shared<TapeNode<S>>();
    node->value = std::move(out);
    node->op = op;
    for (const auto& in : inputs)
        if (in->requires_grad) node->requires_grad = true;
    if (node->requires_grad) {
        // Inputs and the closure are only kept when a gradient can flow;
        // inference graphs stay shallow and free their intermediates eagerly.
        node->inputs = std::move(inputs);
        node->backprop = std::move(backprop);
    }
    return node;
}

template <typename S>
void backward(const Var<S>& loss) {
    if (!loss) throw UsageError("backward on empty graph");
    if (loss->value.size() != 1)
        throw UsageError("backward needs a scalar, got " + loss->value.shape_str());
    if (!loss->requires_grad)
        throw UsageError("backward target does not depend on any gradient-tracked leaf");

    // Iterative post-order DFS over the gradient-tracked subgraph.
    std::vector<TapeNode<S>*> order;
    std::unordered_set<TapeNode<S>*> seen;
    std::vector<std::pair<TapeNode<S>*, size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto [node, next] = stack.back();
        if (next < node->inputs.size()) {
            ++stack.back().second;
            TapeNode<S>* in = node->inputs[next].get();
            if (in->requires_grad && seen.insert(in).second) stack.emplace_back(in, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Fresh pass: zero every reachable grad, then seed the root with 1.
    for (auto* node : order) {
        node->ensure_grad();
        node->grad.setZero();
    }
    loss->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop();
}

// ----- broadcasting -----

struct Dims4 {
    int n, c, h, w;
    bool operator==(const Dims4&) const = default;
};

template <typename S>
Dims4 dims(const Tensor4<S>& t) {
    return {t.n, t.c, t.h, t.w};
}

inline int broadcast_dim(int a, int b, const char* what) {
    if (a == b || b == 1) return a;
    if (a == 1) return b;
    throw ConfigError(std::string("cannot broadcast ") + what + " dims " + std::to_string(a) +
                      " vs " + std::to_string(b));
}

inline Dims4 broadcast_dims(Dims4 a, Dims4 b) {
    return {broadcast_dim(a.n, b.n, "batch"), broadcast_dim(a.c, b.c, "channel"),
            broadcast_dim(a.h, b.h, "height"), broadcast_dim(a.w, b.w, "width")};
}

inline Eigen::Index offset_in(Dims4 d, int i, int j, int y, int x) {
    return ((static_cast<Eigen::Index>(d.n == 1 ? 0 : i) * d.c + (d.c == 1 ? 0 : j)) * d.h +
            (d.h == 1 ? 0 : y)) *
               d.w +
           (d.w == 1 ? 0 : x);
}

// Sum `full` (shaped `fd`) over the axes where `td` is 1, producing a grad
// the same size as the broadcast operand.
template <typename Arr>
Arr reduce_to(const Arr& full, Dims4 fd, Dims4 td) {
    Arr out = Arr::Zero(static_cast<Eigen::Index>(td.n) * td.c * td.h * td.w);
    Eigen::Index k = 0;
    for (int i = 0; i < fd.n; ++i)
        for (int j = 0; j < fd.c; ++j)
            for (int y = 0; y < fd.h; ++y)
                for (int x = 0; x < fd.w; ++x) out[offset_in(td, i, j, y, x)] += full[k++];
    return out;
}

// ----- elementwise arithmetic (NumPy-style size-1 broadcasting) -----

namespace detail {

// Shared skeleton for +, -, *: forward combine plus per-operand grad rules.
template <typename S, typename FwdFn, typename DaFn, typename DbFn>
Var<S> binary_broadcast(const char* name, const Var<S>& a, const Var<S>& b, FwdFn fwd, DaFn da,
                        DbFn db) {
    Dims4 ad = dims(a->value), bd = dims(b->value);
    Dims4 od = broadcast_dims(ad, bd);
    Tensor4<S> out(od.n, od.c, od.h, od.w);
    if (ad == bd) {
        out.data = fwd(a->value.data, b->value.data);
    } else {
        Eigen::Index k = 0;
        for (int i = 0; i < od.n; ++i)
            for (int j = 0; j < od.c; ++j)
                for (int y = 0; y < od.h; ++y)
                    for (int x = 0; x < od.w; ++x) {
                        S av = a->value.data[offset_in(ad, i, j, y, x)];
                        S bv = b->value.data[offset_in(bd, i, j, y, x)];
                        out.data[k++] = fwd(av, bv);
                    }
    }
    auto node = make_node<S>(name, std::move(out), {a, b}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, a, b, ad, bd, od, da, db]() {
            using Arr = typename Tensor4<S>::Arr;
            if (a->requires_grad) {
                Arr full(raw->grad.size());
                Eigen::Index k = 0;
                for (int i = 0; i < od.n; ++i)
                    for (int j = 0; j < od.c; ++j)
                        for (int y = 0; y < od.h; ++y)
                            for (int x = 0; x < od.w; ++x, ++k)
                                full[k] = da(raw->grad[k],
                                             a->value.data[offset_in(ad, i, j, y, x)],
                                             b->value.data[offset_in(bd, i, j, y, x)]);
                a->ensure_grad();
                if (ad == od)
                    a->grad += full;
                else
                    a->grad += reduce_to(full, od, ad);
            }
            if (b->requires_grad) {
                Arr full(raw->grad.size());
                Eigen::Index k = 0;
                for (int i = 0; i < od.n; ++i)
                    for (int j = 0; j < od.c; ++j)
                        for (int y = 0; y < od.h; ++y)
                            for (int x = 0; x < od.w; ++x, ++k)
                                full[k] = db(raw->grad[k],
                                             a->value.data[offset_in(ad, i, j, y, x)],
                                             b->value.data[offset_in(bd, i, j, y, x)]);
                b->ensure_grad();
                if (bd == od)
                    b->grad += full;
                else
                    b->grad += reduce_to(full, od, bd);
            }
        };
    }
    return node;
}

}  // namespace detail

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    return detail::binary_broadcast<S>(
        "add", a, b, [](const auto& x, const auto& y) { return x + y; },
        [](S g, S, S) { return g; }, [](S g, S, S) { return g; });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    return detail::binary_broadcast<S>(
        "sub", a, b, [](const auto& x, const auto& y) { return x - y; },
        [](S g, S, S) { return g; }, [](S g, S, S) { return -g; });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    return detail::binary_broadcast<S>(
        "mul", a, b, [](const auto& x, const auto& y) { return x * y; },
        [](S g, S, S bv) { return g * bv; }, [](S g, S av, S) { return g * av; });
}

template <typename S>
Var<S> scale(const Var<S>& a, S k) {
    Tensor4<S> out = a->value;
    out.data *= k;
    TapeNode<S>* araw = a.get();
    auto node = make_node<S>("scale", std::move(out), {a}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, araw, k]() {
            araw->ensure_grad();
            araw->grad += raw->grad * k;
        };
    }
    return node;
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S k) {
    Tensor4<S> out = a->value;
    out.data += k;
    TapeNode<S>* araw = a.get();
    auto node = make_node<S>("add_scalar", std::move(out), {a}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, araw]() {
            araw->ensure_grad();
            araw->grad += raw->grad;
        };
    }
    return node;
}

template <typename S>
Var<S> abs_val(const Var<S>& a) {
    Tensor4<S> out = a->value;
    out.data = out.data.abs();
    TapeNode<S>* araw = a.get();
    auto node = make_node<S>("abs", std::move(out), {a}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, araw]() {
            araw->ensure_grad();
            araw->grad += raw->grad * araw->value.data.sign();
        };
    }
    return node;
}

// Values snapped to binary32; the gradient passes through unchanged, so the
// snap is invisible to the tape (identity backward). No-op when S == float.
template <typename S>
Var<S> quantize_binary32(const Var<S>& a) {
    Tensor4<S> out = a->value;
    if constexpr (!std::is_same_v<S, float>) {
        for (Eigen::Index i = 0; i < out.size(); ++i)
            out.data[i] = static_cast<S>(static_cast<float>(out.data[i]));
    }
    TapeNode<S>* araw = a.get();
    auto node = make_node<S>("quantize32", std::move(out), {a}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, araw]() {
            araw->ensure_grad();
            araw->grad += raw->grad;
        };
    }
    return node;
}

template <typename S>
Var<S> sum_all(const Var<S>& a) {
    Tensor4<S> out(1, 1, 1, 1);
    out.data[0] = a->value.data.sum();
    TapeNode<S>* araw = a.get();
    auto node = make_node<S>("sum", std::move(out), {a}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, araw]() {
            araw->ensure_grad();
            araw->grad += raw->grad[0];
        };
    }
    return node;
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
    if (a->value.size() == 0) throw ConfigError("mean of empty tensor");
    return scale(sum_all(a), S(1) / static_cast<S>(a->value.size()));
}

// ----- shape ops -----

template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ConfigError("concat of zero tensors");
    const Tensor4<S>& first = parts[0]->value;
    int ctotal = 0;
    for (const auto& p : parts) {
        const Tensor4<S>& t = p->value;
        if (t.n != first.n || t.h != first.h || t.w != first.w)
            throw ConfigError("concat operands disagree outside channel axis: " +
                              first.shape_str() + " vs " + t.shape_str());
        ctotal += t.c;
    }
    Tensor4<S> out(first.n, ctotal, first.h, first.w);
    Eigen::Index plane = static_cast<Eigen::Index>(first.h) * first.w;
    for (int i = 0; i < first.n; ++i) {
        Eigen::Index dst = out.offset(i, 0, 0, 0);
        for (const auto& p : parts) {
            const Tensor4<S>& t = p->value;
            Eigen::Index len = static_cast<Eigen::Index>(t.c) * plane;
            out.data.segment(dst, len) = t.data.segment(p->value.offset(i, 0, 0, 0), len);
            dst += len;
        }
    }
    auto node = make_node<S>("concat_c", std::move(out), parts, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        std::vector<Var<S>> held = parts;
        node->backprop = [raw, held, plane]() {
            const Tensor4<S>& ov = raw->value;
            for (int i = 0; i < ov.n; ++i) {
                Eigen::Index src = ov.offset(i, 0, 0, 0);
                for (const auto& p : held) {
                    Eigen::Index len = static_cast<Eigen::Index>(p->value.c) * plane;
                    if (p->requires_grad) {
                        p->ensure_grad();
                        p->grad.segment(p->value.offset(i, 0, 0, 0), len) +=
                            raw->grad.segment(src, len);
                    }
                    src += len;
                }
            }
        };
    }
    return node;
}

template <typename S>
Var<S> slice_channels(const Var<S>& a, int c0, int count) {
    const Tensor4<S>& t = a->value;
    if (c0 < 0 || count <= 0 || c0 + count > t.c)
        throw ConfigError("channel slice [" + std::to_string(c0) + "," +
                          std::to_string(c0 + count) + ") outside " + t.shape_str());
    Tensor4<S> out(t.n, count, t.h, t.w);
    Eigen::Index plane = static_cast<Eigen::Index>(t.h) * t.w;
    Eigen::Index len = static_cast<Eigen::Index>(count) * plane;
    for (int i = 0; i < t.n; ++i)
        out.data.segment(out.offset(i, 0, 0, 0), len) = t.data.segment(t.offset(i, c0, 0, 0), len);
    TapeNode<S>* araw = a.get();
    auto node = make_node<S>("slice_c", std::move(out), {a}, {});
    if (node->requires_grad) {
        TapeNode<S>* raw = node.get();
        node->backprop = [raw, araw, c0, len]() {
            araw->ensure_grad();
            const Tensor4<S>& ov = raw->value;
            for (int i = 0; i < ov.n; ++i)
                araw->grad.segment(araw->value.offset(i, c0, 0, 0), len) +=
                    raw->grad.segment(ov.offset(i, 0, 0, 0), len);
        };
    }
    return node;
}

// ----- finite-difference gradient checking -----

struct GradCheckReport {
    double max_rel = 0.0;
    Eigen::Index worst_coord = -1;
    double analytic = 0.0, numeric = 0.0;
};

template <typename S>
std::vector<Eigen::Index> sample_coords(Eigen::Index size, int want, std::mt19937& rng) {
    std::vector<Eigen::Index> all(size);
    for (Eigen::Index i = 0; i < size; ++i) all[i] = i;
    if (want <= 0 || size <= want) return all;
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(want);
    return all;
}

// Central-difference check of d(scalar_fn)/d(target) at the given coords.
// scalar_fn must be a pure function of the current leaf values; it is
// re-evaluated with target nudged +/- eps and compared against the tape.
template <typename S, typename F>
GradCheckReport grad_check(F&& scalar_fn, const Var<S>& target, S eps,
                           const std::vector<Eigen::Index>& coords) {
    Var<S> y = scalar_fn();
    backward(y);
    typename Tensor4<S>::Arr analytic = target->grad;

    GradCheckReport rep;
    for (Eigen::Index idx : coords) {
        S saved = target->value.data[idx];
        target->value.data[idx] = saved + eps;
        double fp = static_cast<double>(scalar_fn()->value.data[0]);
        target->value.data[idx] = saved - eps;
        double fm = static_cast<double>(scalar_fn()->value.data[0]);
        target->value.data[idx] = saved;
        double num = (fp - fm) / (2.0 * static_cast<double>(eps));
        double ana = static_cast<double>(analytic[idx]);
        double rel = std::abs(ana - num) /
                     std::max({std::abs(ana), std::abs(num), 1e-8});
        if (rel > rep.max_rel) {
            rep.max_rel = rel;
            rep.worst_coord = idx;
            rep.analytic = ana;
            rep.numeric = num;
        }
    }
    return rep;
}

// Directional central-difference check: nudges every coordinate of the target
// along a random sign vector and compares (f(x+eps v) - f(x-eps v)) / (2 eps)
// against <grad, v>. Aggregating over the whole tensor keeps the signal large,
// which rides out value-snapping and accumulated rounding that per-coordinate
// probes cannot.
template <typename S, typename F>
GradCheckReport grad_check_dir(F&& scalar_fn, const Var<S>& target, S eps, std::mt19937& rng) {
    Var<S> y = scalar_fn();
    backward(y);
    typename Tensor4<S>::Arr analytic = target->grad;

    typename Tensor4<S>::Arr v(target->value.size());
    std::uniform_int_distribution<int> coin(0, 1);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = coin(rng) ? S(1) : S(-1);

    typename Tensor4<S>::Arr saved = target->value.data;
    target->value.data = saved + eps * v;
    double fp = static_cast<double>(scalar_fn()->value.data[0]);
    target->value.data = saved - eps * v;
    double fm = static_cast<double>(scalar_fn()->value.data[0]);
    target->value.data = saved;

    GradCheckReport rep;
    rep.numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
    rep.analytic = static_cast<double>((analytic * v).sum());
    rep.max_rel = std::abs(rep.analytic - rep.numeric) /
                  std::max({std::abs(rep.analytic), std::abs(rep.numeric), 1e-8});
    return rep;
}

}  // namespace rtfseg
