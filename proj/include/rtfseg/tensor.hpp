#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "rtfseg/errors.hpp"

namespace rtfseg {

// Dense 4-D array in NCHW order, flat row-major storage (w fastest).
// Templated on scalar so the same graph runs in float for production and in
// double for finite-difference gradient checks.
template <typename S>
struct Tensor4 {
    using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;

    int n = 0, c = 0, h = 0, w = 0;
    Arr data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
            throw ConfigError("negative tensor dimension " + shape_str());
        data = Arr::Zero(static_cast<Eigen::Index>(n_) * c_ * h_ * w_);
    }

    static Tensor4 full(int n, int c, int h, int w, S v) {
        Tensor4 t(n, c, h, w);
        t.data.setConstant(v);
        return t;
    }

    Eigen::Index size() const { return data.size(); }

    Eigen::Index offset(int i, int j, int y, int x) const {
        return ((static_cast<Eigen::Index>(i) * c + j) * h + y) * w + x;
    }

    S& at(int i, int j, int y, int x) { return data[offset(i, j, y, x)]; }
    S at(int i, int j, int y, int x) const { return data[offset(i, j, y, x)]; }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
               "," + std::to_string(w) + ")";
    }

    bool all_finite() const { return data.isFinite().all(); }

    template <typename T>
    Tensor4<T> cast() const {
        Tensor4<T> out(n, c, h, w);
        out.data = data.template cast<T>();
        return out;
    }
};

// Integer label map, one class id per pixel across a batch.
struct LabelMap {
    int n = 0, h = 0, w = 0;
    Eigen::Array<int32_t, Eigen::Dynamic, 1> v;

    LabelMap() = default;
    LabelMap(int n_, int h_, int w_) : n(n_), h(h_), w(w_) {
        v = Eigen::Array<int32_t, Eigen::Dynamic, 1>::Zero(
            static_cast<Eigen::Index>(n_) * h_ * w_);
    }

    Eigen::Index size() const { return v.size(); }
    int32_t& at(int i, int y, int x) { return v[(static_cast<Eigen::Index>(i) * h + y) * w + x]; }
    int32_t at(int i, int y, int x) const {
        return v[(static_cast<Eigen::Index>(i) * h + y) * w + x];
    }
};

// ----- random fills (single RNG chain keeps runs bit-reproducible) -----

template <typename S>
void fill_uniform(Tensor4<S>& t, std::mt19937& rng, S lo, S hi) {
    std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(d(rng));
}

template <typename S>
void fill_normal(Tensor4<S>& t, std::mt19937& rng, S mean = S(0), S stddev = S(1)) {
    std::normal_distribution<double> d(static_cast<double>(mean), static_cast<double>(stddev));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(d(rng));
}

// Centered uniform with fan-in scaling: U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
template <typename S>
void fill_fan_in(Tensor4<S>& t, std::mt19937& rng, Eigen::Index fan_in) {
    if (fan_in <= 0) throw ConfigError("fan-in must be positive");
    double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    fill_uniform(t, rng, static_cast<S>(-b), static_cast<S>(b));
}

template <typename S>
Tensor4<S> hflip(const Tensor4<S>& t) {
    Tensor4<S> out(t.n, t.c, t.h, t.w);
    for (int i = 0; i < t.n; ++i)
        for (int j = 0; j < t.c; ++j)
            for (int y = 0; y < t.h; ++y)
                for (int x = 0; x < t.w; ++x) out.at(i, j, y, x) = t.at(i, j, y, t.w - 1 - x);
    return out;
}

inline LabelMap hflip(const LabelMap& m) {
    LabelMap out(m.n, m.h, m.w);
    for (int i = 0; i < m.n; ++i)
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x) out.at(i, y, x) = m.at(i, y, m.w - 1 - x);
    return out;
}

}  // namespace rtfseg
