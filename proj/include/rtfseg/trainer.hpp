#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rtfseg/config.hpp"
#include "rtfseg/data.hpp"
#include "rtfseg/losses.hpp"
#include "rtfseg/metrics.hpp"

namespace rtfseg {

// ---------------------------------------------------------------------------
// dataset plumbing
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<std::string> ids;
    std::vector<SegSample> samples;

    size_t size() const { return samples.size(); }
};

inline Dataset load_split(const std::string& dir) {
    Dataset ds;
    ds.ids = list_dataset(dir);
    ds.samples.reserve(ds.ids.size());
    for (const auto& id : ds.ids) ds.samples.push_back(load_sample(dir, id));
    for (size_t i = 1; i < ds.samples.size(); ++i)
        if (ds.samples[i].rgb.h != ds.samples[0].rgb.h ||
            ds.samples[i].rgb.w != ds.samples[0].rgb.w)
            throw DataError("sample " + ds.ids[i] + " has mismatched dimensions within its split");
    return ds;
}

// Label histogram over a whole split, feeding the class-weight computation.
inline std::vector<long long> label_histogram(const Dataset& ds, int classes, int ignore_index) {
    std::vector<long long> counts(static_cast<size_t>(classes), 0);
    for (const auto& s : ds.samples)
        for (Eigen::Index i = 0; i < s.labels.size(); ++i) {
            int v = s.labels.v[i];
            if (v == ignore_index) continue;
            if (v < 0 || v >= classes)
                throw DataError("label id " + std::to_string(v) + " outside [0," +
                                std::to_string(classes) + ")");
            counts[static_cast<size_t>(v)]++;
        }
    return counts;
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

struct Batch {
    Tensor4<float> rgb, ir;
    LabelMap labels;
};

// Stacks the picked samples, flipping each horizontally with the given
// probability. `rgb_only` zeroes the thermal plane so the network trains
// blind on that modality while keeping its shape.
inline Batch make_batch(const Dataset& ds, const std::vector<size_t>& order, size_t begin,
                        size_t end, double flip_prob, bool rgb_only, std::mt19937& rng) {
    int b = static_cast<int>(end - begin);
    const SegSample& first = ds.samples[order[begin]];
    Batch out{Tensor4<float>(b, 3, first.rgb.h, first.rgb.w),
              Tensor4<float>(b, 1, first.rgb.h, first.rgb.w),
              LabelMap(b, first.rgb.h, first.rgb.w)};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::Index hw = static_cast<Eigen::Index>(first.rgb.h) * first.rgb.w;
    for (int j = 0; j < b; ++j) {
        const SegSample& s = ds.samples[order[begin + static_cast<size_t>(j)]];
        bool flip = flip_prob > 0.0 && unit(rng) < flip_prob;
        Tensor4<float> rgb = flip ? hflip(s.rgb) : s.rgb;
        Tensor4<float> ir = flip ? hflip(s.thermal) : s.thermal;
        LabelMap lab = flip ? hflip(s.labels) : s.labels;
        out.rgb.data.segment(static_cast<Eigen::Index>(j) * 3 * hw, 3 * hw) = rgb.data;
        out.ir.data.segment(static_cast<Eigen::Index>(j) * hw, hw) = ir.data;
        out.labels.v.segment(static_cast<Eigen::Index>(j) * hw, hw) = lab.v;
    }
    if (rgb_only) out.ir.data.setZero();
    return out;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    double loss = 0, ce = 0, dice = 0, lovasz = 0, ohem = 0, boundary = 0, focal = 0, aux = 0;
    double miou = 0;
    double lr = 0;  // decoder-group rate after the schedule, end of epoch
};

inline std::string format_epoch_log(int epoch, const EpochStats& s) {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    os << "epoch=" << epoch << " loss=" << s.loss << " ce=" << s.ce << " dice=" << s.dice
       << " lovasz=" << s.lovasz << " ohem=" << s.ohem << " boundary=" << s.boundary
       << " focal=" << s.focal << " aux=" << s.aux << " miou=" << s.miou;
    os << std::setprecision(8) << std::scientific << " lr=" << s.lr;
    return os.str();
}

class Trainer {
  public:
    TrainConfig cfg;
    LossWeights lw;
    FusionModel<float> model;
    AdamW<float> opt;
    std::optional<EmaState<float>> ema;
    CosineRestartSchedule sched;
    std::vector<double> class_weights;
    std::mt19937 rng;
    long long global_step = 0;
    int epochs_done = 0;

    Trainer(const TrainConfig& c, const Dataset& train)
        : cfg(validated(c)),
          model(model_config_from(c), c.seed),
          opt(model.params, optim_config_from(c)),
          sched(make_schedule(c, train)),
          rng(c.seed) {
        class_weights = class_weights_from_frequencies(
            label_histogram(train, cfg.classes, cfg.ignore_index));
        if (cfg.ema) ema.emplace(model.params, cfg.ema_decay);
    }

    // One optimizer step on an assembled batch; returns the loss breakdown.
    LossBreakdown<float> train_step(const Batch& batch) {
        LossBreakdown<float> b;
        try {
            ForwardResult<float> fwd = model.forward(batch.rgb, batch.ir, true);
            b = composite_loss(fwd.out.main, fwd.out.aux, fwd.out.deep, batch.labels, lw,
                               class_weights, cfg.ignore_index);
            last_pred_ = argmax_labels(fwd.out.main->value);
        } catch (const NumericError& e) {
            // the loss layer flags non-finite values; report where the run died
            throw DivergenceError("training left the finite range at epoch " +
                                  std::to_string(epochs_done + 1) + ", step " +
                                  std::to_string(global_step + 1) + " (" + e.what() + ")");
        }
        if (!std::isfinite(static_cast<double>(b.total)))
            throw DivergenceError("training left the finite range at epoch " +
                                  std::to_string(epochs_done + 1) + ", step " +
                                  std::to_string(global_step + 1));
        backward(b.total_var);
        opt.step(model.params, sched.factor(global_step));
        ++global_step;
        if (ema) ema->update(model.params);
        return b;
    }

    EpochStats run_epoch(const Dataset& train) {
        std::vector<size_t> order(train.size());
        std::iota(order.begin(), order.end(), size_t{0});
        std::shuffle(order.begin(), order.end(), rng);

        EpochStats s;
        ConfusionMatrix cm(cfg.classes);
        int steps = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
            Batch batch = make_batch(train, order, begin, end, cfg.flip_prob, cfg.rgb_only, rng);
            LossBreakdown<float> b = train_step(batch);
            s.loss += b.total;
            s.ce += b.ce;
            s.dice += b.dice;
            s.lovasz += b.lovasz;
            s.ohem += b.ohem;
            s.boundary += b.boundary;
            s.focal += b.focal;
            s.aux += b.aux;
            accumulate(cm, last_pred_, batch.labels, cfg.ignore_index);
            ++steps;
        }
        s.loss /= steps;
        s.ce /= steps;
        s.dice /= steps;
        s.lovasz /= steps;
        s.ohem /= steps;
        s.boundary /= steps;
        s.focal /= steps;
        s.aux /= steps;
        s.miou = miou(cm);
        s.lr = cfg.lr_decoder * sched.factor(global_step > 0 ? global_step - 1 : 0);
        ++epochs_done;
        return s;
    }

    // Full run: one machine-parseable line per epoch on the given stream.
    std::vector<EpochStats> train(const Dataset& data, std::ostream& log) {
        std::vector<EpochStats> history;
        for (int e = 0; e < cfg.epochs; ++e) {
            EpochStats s = run_epoch(data);
            log << format_epoch_log(epochs_done, s) << "\n";
            history.push_back(s);
        }
        return history;
    }

    Checkpoint snapshot() const {
        Checkpoint ck;
        ck.epoch = epochs_done;
        ck.config_text = serialize_train_config(cfg);
        append_registry(ck.tensors, model.params, "model.");
        opt.append_state(ck.tensors, model.params);
        if (ema) ema->append_state(ck.tensors, model.params);
        return ck;
    }

  private:
    static TrainConfig validated(const TrainConfig& c) {
        validate(c);
        return c;
    }

    static CosineRestartSchedule make_schedule(const TrainConfig& c, const Dataset& train) {
        if (train.samples.empty()) throw ConfigError("training split is empty");
        int steps_per_epoch = static_cast<int>(
            (train.size() + static_cast<size_t>(c.batch_size) - 1) /
            static_cast<size_t>(c.batch_size));
        int restart = c.restart_epochs > 0 ? c.restart_epochs : std::max(c.epochs / 4, 1);
        return CosineRestartSchedule(static_cast<long long>(restart) * steps_per_epoch,
                                     c.min_lr_factor);
    }

    LabelMap last_pred_{1, 1, 1};
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    std::vector<double> iou;  // per class; NaN marks classes absent everywhere
    double miou_present = 0;  // mean over classes that appear
    double miou_all = 0;      // absent classes scored as zero
    double pixel_acc = 0;
};

// Eval-mode sweep over a split, one sample at a time, optionally averaging
// each prediction with its horizontal mirror.
inline EvalReport evaluate_model(FusionModel<float>& model, const Dataset& ds, bool tta,
                                 bool rgb_only, int skip_class, int ignore_index) {
    if (ds.samples.empty()) throw ConfigError("evaluation split is empty");
    ConfusionMatrix cm(model.cfg.classes);
    auto infer = [&](const Tensor4<float>& rgb, const Tensor4<float>& ir) {
        return model.forward(rgb, ir, false).out.main->value;
    };
    for (const auto& s : ds.samples) {
        Tensor4<float> ir = s.thermal;
        if (rgb_only) ir.data.setZero();
        Tensor4<float> logits = tta ? tta_flip_infer(infer, s.rgb, ir) : infer(s.rgb, ir);
        accumulate(cm, argmax_labels(logits), s.labels, ignore_index);
    }
    EvalReport r;
    r.iou = iou_per_class(cm);
    r.miou_present = miou(cm, skip_class);
    r.miou_all = miou_all(cm, skip_class);
    r.pixel_acc = pixel_accuracy(cm);
    return r;
}

// Argmax label map for one image pair, with optional flip averaging.
inline LabelMap infer_labels(FusionModel<float>& model, const Tensor4<float>& rgb,
                             const Tensor4<float>& ir, bool tta) {
    auto infer = [&](const Tensor4<float>& r, const Tensor4<float>& t) {
        return model.forward(r, t, false).out.main->value;
    };
    return argmax_labels(tta ? tta_flip_infer(infer, rgb, ir) : infer(rgb, ir));
}

// ---------------------------------------------------------------------------
// checkpoint loading for evaluation and inference
// ---------------------------------------------------------------------------

struct LoadedModel {
    TrainConfig cfg;
    long long epoch = 0;
    bool has_ema = false;
    std::unique_ptr<FusionModel<float>> model;
};

// Rebuilds the architecture recorded in the checkpoint and fills its weights.
// With use_ema the averaged weights are swapped in over the raw ones (batch
// normalization statistics always come from the raw model section).
inline LoadedModel load_model_checkpoint(const std::string& path, bool use_ema) {
    Checkpoint ck = load_checkpoint(path);
    LoadedModel out;
    out.cfg = parse_train_config(ck.config_text);
    out.epoch = ck.epoch;
    out.has_ema = ck.has_section("ema.");
    out.model = std::make_unique<FusionModel<float>>(model_config_from(out.cfg), out.cfg.seed);
    load_into_registry(out.model->params, ck, "model.");
    if (use_ema) {
        if (!out.has_ema)
            throw CheckpointError("averaged weights requested but the checkpoint has none");
        EmaState<float> shadow(out.model->params, 0.5);
        shadow.load_state(ck, out.model->params);
        shadow.apply(out.model->params);
    }
    return out;
}

}  // namespace rtfseg
