#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "rtfseg/checkpoint.hpp"
#include "rtfseg/params.hpp"

namespace rtfseg {

// ---------------------------------------------------------------------------
// learning-rate policy
// ---------------------------------------------------------------------------

struct OptimConfig {
    double lr_backbone = 5e-5;
    double lr_fusion = 2e-4;
    double lr_decoder = 3e-4;
    double layer_decay = 0.9;  // per backbone stage, deepest stage undecayed
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;  // applied only where the registry says so
};

// Cosine annealing with warm restarts: within each period the multiplier
// falls from 1 to min_factor along a half cosine, then snaps back to 1.
struct CosineRestartSchedule {
    long long period_steps = 1;
    double min_factor = 0.01;

    CosineRestartSchedule(long long period, double min_f)
        : period_steps(period), min_factor(min_f) {
        if (period < 1) throw ConfigError("schedule period must be at least one step");
        if (min_f < 0.0 || min_f > 1.0) throw ConfigError("min-lr factor outside [0, 1]");
    }

    double factor(long long step) const {
        double t = static_cast<double>(step % period_steps) / static_cast<double>(period_steps);
        return min_factor + (1.0 - min_factor) * 0.5 * (1.0 + std::cos(t * std::numbers::pi));
    }
};

// Restart every max(epochs/4, 1) epochs.
inline CosineRestartSchedule default_schedule(int epochs, int steps_per_epoch,
                                              double min_factor = 0.01) {
    if (epochs < 1 || steps_per_epoch < 1)
        throw ConfigError("schedule needs positive epoch and step counts");
    long long period = static_cast<long long>(std::max(epochs / 4, 1)) * steps_per_epoch;
    return CosineRestartSchedule(period, min_factor);
}

// ---------------------------------------------------------------------------
// decoupled-weight-decay Adam
// ---------------------------------------------------------------------------

// First/second-moment state lines up index-for-index with registry entries.
// The effective step size per tensor is group LR x layer factor x the caller's
// schedule multiplier; weight decay is decoupled from the gradient and skipped
// for biases and normalization parameters (the registry's decay flag).
template <typename S>
struct AdamW {
    using Arr = typename Tensor4<S>::Arr;

    OptimConfig cfg;
    long long t = 0;
    std::vector<Arr> m, v;

    template <typename R>
    explicit AdamW(const R& reg, OptimConfig c = {}) : cfg(c) {
        m.reserve(reg.entries.size());
        v.reserve(reg.entries.size());
        for (const auto& e : reg.entries) {
            m.push_back(Arr::Zero(e.var->value.size()));
            v.push_back(Arr::Zero(e.var->value.size()));
        }
    }

    // Group LR scaled by the layer-wise factor; stage 4 is undecayed and each
    // shallower backbone stage multiplies by layer_decay once more.
    double entry_lr(const typename ParamRegistry<S>::Entry& e) const {
        switch (e.group) {
            case LrGroup::backbone:
                return cfg.lr_backbone * std::pow(cfg.layer_decay, 4 - e.stage);
            case LrGroup::fusion:
                return cfg.lr_fusion;
            case LrGroup::decoder:
                return cfg.lr_decoder;
        }
        throw ConfigError("unknown learning-rate group");
    }

    void step(ParamRegistry<S>& reg, double schedule_factor) {
        if (reg.entries.size() != m.size())
            throw ConfigError("optimizer state does not match the registry");
        ++t;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (size_t i = 0; i < reg.entries.size(); ++i) {
            auto& e = reg.entries[i];
            auto& w = e.var->value.data;
            e.var->ensure_grad();  // a never-touched grad reads as zero
            const Arr& g = e.var->grad;
            m[i] = S(cfg.beta1) * m[i] + S(1.0 - cfg.beta1) * g;
            v[i] = S(cfg.beta2) * v[i] + S(1.0 - cfg.beta2) * g.square();
            double lr = entry_lr(e) * schedule_factor;
            Arr mhat = m[i] / S(bc1);
            Arr vhat = v[i] / S(bc2);
            w -= S(lr) * (mhat / (vhat.sqrt() + S(cfg.eps)));
            if (e.decay) w -= S(lr * cfg.weight_decay) * w;
        }
    }

    // --- checkpoint plumbing: records named opt.m.<param> / opt.v.<param> ---

    template <typename R>
    void append_state(std::vector<TensorRecord>& out, const R& reg) const {
        TensorRecord step_rec;
        step_rec.name = "opt.t";
        step_rec.shape = {1, 1, 1, 1};
        step_rec.data = {static_cast<float>(t)};
        out.push_back(std::move(step_rec));
        for (size_t i = 0; i < reg.entries.size(); ++i) {
            const auto& val = reg.entries[i].var->value;
            Tensor4<S> tm(val.n, val.c, val.h, val.w), tv(val.n, val.c, val.h, val.w);
            tm.data = m[i];
            tv.data = v[i];
            out.push_back(record_from("opt.m." + reg.entries[i].name, tm));
            out.push_back(record_from("opt.v." + reg.entries[i].name, tv));
        }
    }

    template <typename R>
    void load_state(const Checkpoint& ck, const R& reg) {
        const TensorRecord* step_rec = ck.find("opt.t");
        if (!step_rec) throw CheckpointError("checkpoint carries no optimizer state");
        t = static_cast<long long>(step_rec->data.at(0));
        for (size_t i = 0; i < reg.entries.size(); ++i) {
            const std::string& name = reg.entries[i].name;
            const TensorRecord* rm = ck.find("opt.m." + name);
            const TensorRecord* rv = ck.find("opt.v." + name);
            if (!rm || !rv)
                throw CheckpointError("optimizer state missing for " + name);
            if (static_cast<Eigen::Index>(rm->data.size()) != m[i].size() ||
                static_cast<Eigen::Index>(rv->data.size()) != v[i].size())
                throw CheckpointError("optimizer state size mismatch for " + name);
            for (Eigen::Index j = 0; j < m[i].size(); ++j) {
                m[i][j] = static_cast<S>(rm->data[static_cast<size_t>(j)]);
                v[i][j] = static_cast<S>(rv->data[static_cast<size_t>(j)]);
            }
        }
    }
};

// ---------------------------------------------------------------------------
// exponential moving average of the weights
// ---------------------------------------------------------------------------

// shadow = decay * shadow + (1 - decay) * weight after every optimizer step.
// apply() swaps the shadow into the live tensors (stashing the raw weights)
// so evaluation can run on the averaged model; restore() swaps back.
template <typename S>
struct EmaState {
    using Arr = typename Tensor4<S>::Arr;

    double decay = 0.999;
    std::vector<Arr> shadow;
    std::vector<Arr> stash;
    bool applied = false;

    template <typename R>
    explicit EmaState(const R& reg, double d = 0.999) : decay(d) {
        if (d < 0.0 || d >= 1.0) throw ConfigError("EMA decay outside [0, 1)");
        shadow.reserve(reg.entries.size());
        for (const auto& e : reg.entries) shadow.push_back(e.var->value.data);
    }

    template <typename R>
    void update(const R& reg) {
        if (applied) throw ConfigError("EMA update while shadow weights are applied");
        for (size_t i = 0; i < shadow.size(); ++i)
            shadow[i] = S(decay) * shadow[i] + S(1.0 - decay) * reg.entries[i].var->value.data;
    }

    template <typename R>
    void apply(R& reg) {
        if (applied) throw ConfigError("EMA shadow weights applied twice");
        stash.clear();
        stash.reserve(shadow.size());
        for (size_t i = 0; i < shadow.size(); ++i) {
            stash.push_back(reg.entries[i].var->value.data);
            reg.entries[i].var->value.data = shadow[i];
        }
        applied = true;
    }

    template <typename R>
    void restore(R& reg) {
        if (!applied) throw ConfigError("EMA restore without apply");
        for (size_t i = 0; i < shadow.size(); ++i)
            reg.entries[i].var->value.data = stash[i];
        applied = false;
    }

    template <typename R>
    void append_state(std::vector<TensorRecord>& out, const R& reg) const {
        for (size_t i = 0; i < shadow.size(); ++i) {
            const auto& val = reg.entries[i].var->value;
            Tensor4<S> ts(val.n, val.c, val.h, val.w);
            ts.data = shadow[i];
            out.push_back(record_from("ema." + reg.entries[i].name, ts));
        }
    }

    template <typename R>
    void load_state(const Checkpoint& ck, const R& reg) {
        for (size_t i = 0; i < shadow.size(); ++i) {
            const TensorRecord* r = ck.find("ema." + reg.entries[i].name);
            if (!r) throw CheckpointError("averaged weights missing: ema." + reg.entries[i].name);
            if (static_cast<Eigen::Index>(r->data.size()) != shadow[i].size())
                throw CheckpointError("EMA state size mismatch for " + reg.entries[i].name);
            for (Eigen::Index j = 0; j < shadow[i].size(); ++j)
                shadow[i][j] = static_cast<S>(r->data[static_cast<size_t>(j)]);
        }
    }
};

}  // namespace rtfseg
