#pragma once

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rtfseg/trainer.hpp"

namespace rtfseg {

namespace detail {

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Label PGM plus a fixed-palette color rendering for quick visual checks.
inline void write_prediction(const std::string& label_path, const LabelMap& pred) {
    write_label_pgm(label_path, pred);
    Tensor4<float> color(1, 3, pred.h, pred.w);
    for (int y = 0; y < pred.h; ++y)
        for (int x = 0; x < pred.w; ++x) {
            std::array<unsigned char, 3> rgb = class_palette(pred.at(0, y, x));
            for (int c = 0; c < 3; ++c)
                color.at(0, c, y, x) = static_cast<float>(rgb[static_cast<size_t>(c)]) / 255.0f;
        }
    std::string color_path = label_path;
    size_t dot = color_path.find_last_of('.');
    if (dot != std::string::npos) color_path.resize(dot);
    write_ppm(color_path + "_color.ppm", color);
}

inline void print_report(std::ostream& os, const std::string& tag, const EvalReport& r) {
    os << "[" << tag << "]\n";
    for (size_t c = 0; c < r.iou.size(); ++c) {
        os << "  class " << c << " iou=";
        if (std::isnan(r.iou[c]))
            os << "absent";
        else
            os << std::fixed << std::setprecision(4) << r.iou[c];
        os << "\n";
    }
    os << std::fixed << std::setprecision(4);
    os << "  miou=" << r.miou_present << " miou_all=" << r.miou_all
       << " pixel_acc=" << r.pixel_acc << "\n";
}

}  // namespace detail

inline int cmd_train(const std::string& config_path, const std::string& data_dir,
                     const std::string& out_dir) {
    TrainConfig cfg = parse_train_config(detail::read_text_file(config_path));
    Dataset train_set = load_split(data_dir);
    std::cout << "samples=" << train_set.size() << " params=";
    Trainer trainer(cfg, train_set);
    std::cout << trainer.model.param_count() << "\n";

    std::filesystem::create_directories(out_dir);
    std::ofstream log(out_dir + "/train.log");
    if (!log) throw DataError("cannot write to " + out_dir);
    for (int e = 0; e < cfg.epochs; ++e) {
        EpochStats s = trainer.run_epoch(train_set);
        std::string line = format_epoch_log(e + 1, s);
        std::cout << line << "\n";
        log << line << "\n";
    }
    std::string ckpt = out_dir + "/model.ckpt";
    save_checkpoint(ckpt, trainer.snapshot());
    std::cout << "checkpoint=" << ckpt << "\n";
    return 0;
}

inline int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, bool tta, bool ema,
                    int ignore_class) {
    LoadedModel lm = load_model_checkpoint(ckpt_path, ema);
    Dataset ds = load_split(data_dir);
    std::cout << "samples=" << ds.size() << " epoch=" << lm.epoch
              << " weights=" << (ema ? "averaged" : "raw") << "\n";
    EvalReport plain = evaluate_model(*lm.model, ds, false, lm.cfg.rgb_only, ignore_class,
                                      lm.cfg.ignore_index);
    detail::print_report(std::cout, "no tta", plain);
    if (tta) {
        EvalReport mirrored = evaluate_model(*lm.model, ds, true, lm.cfg.rgb_only, ignore_class,
                                             lm.cfg.ignore_index);
        detail::print_report(std::cout, "with tta", mirrored);
    }
    return 0;
}

inline int cmd_infer(const std::string& ckpt_path, const std::string& rgb_path,
                     const std::string& ir_path, const std::string& out_path, bool tta,
                     bool ema) {
    LoadedModel lm = load_model_checkpoint(ckpt_path, ema);
    Tensor4<float> rgb = read_image(rgb_path);
    Tensor4<float> ir = read_image(ir_path);
    if (rgb.c != 3) throw DataError(rgb_path + " is not a 3-channel image");
    if (ir.c != 1) throw DataError(ir_path + " is not grayscale");
    if (lm.cfg.rgb_only) ir.data.setZero();
    LabelMap pred = infer_labels(*lm.model, rgb, ir, tta);
    detail::write_prediction(out_path, pred);
    std::cout << "labels=" << out_path << "\n";
    return 0;
}

inline int cmd_ablate(const std::string& config_path, const std::string& variant) {
    TrainConfig base = config_path.empty() ? TrainConfig{}
                                           : parse_train_config(detail::read_text_file(config_path));
    std::cout << "selected=" << variant << " (base width " << base.base_width << ")\n";
    apply_variant(base, variant);  // validates the name before the sweep
    for (const std::string name : {"full", "all_freq", "no_deepsup", "fpn"}) {
        TrainConfig cfg = apply_variant(base, name);
        FusionModel<float> model(model_config_from(cfg), cfg.seed);
        std::cout << (name == variant ? "> " : "  ") << name << " params=" << model.param_count()
                  << " fusion=" << cfg.fusion << " decoder=" << cfg.decoder
                  << " deep_supervision=" << (cfg.deep_supervision ? 1 : 0) << "\n";
    }
    return 0;
}

inline int cmd_gendata(const std::string& out_dir, int count, unsigned seed, int size,
                       int classes, double night_prob) {
    SceneConfig sc;
    sc.h = size;
    sc.w = size;
    sc.classes = classes;
    sc.night_prob = night_prob;
    std::vector<std::string> ids = save_dataset(out_dir, sc, count, seed);
    std::cout << "wrote " << ids.size() << " samples to " << out_dir << "\n";
    return 0;
}

// Full command-line surface; returns a process exit code.
inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"RGB-thermal fusion segmentation"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, ckpt_path, rgb_path, ir_path, out_path, variant;
    bool tta = false, ema = false;
    int ignore_class = -1;
    int count = 16, size = 64, classes = 5;
    unsigned seed = 1;
    double night_prob = 0.0;

    CLI::App* train = app.add_subcommand("train", "train a model on a sample directory");
    train->add_option("--config", config_path, "key=value training configuration")->required();
    train->add_option("--data", data_dir, "directory of *_rgb.ppm/_ir.pgm/_label.pgm samples")
        ->required();
    train->add_option("--out", out_dir, "output directory for checkpoint and log")->required();

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a sample directory");
    eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "directory of samples")->required();
    eval->add_flag("--tta", tta, "also report flip-averaged predictions");
    eval->add_flag("--ema", ema, "evaluate the averaged weights");
    eval->add_option("--ignore-class", ignore_class, "class id to drop from the mean IoU");

    CLI::App* infer = app.add_subcommand("infer", "segment one rgb/thermal pair");
    infer->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    infer->add_option("--rgb", rgb_path, "input PPM")->required();
    infer->add_option("--ir", ir_path, "input PGM")->required();
    infer->add_option("--out", out_path, "output label PGM path")->required();
    infer->add_flag("--tta", tta, "average with the mirrored prediction");
    infer->add_flag("--ema", ema, "use the averaged weights");

    CLI::App* ablate = app.add_subcommand("ablate", "compare architecture variants");
    ablate->add_option("--variant", variant, "full | all_freq | no_deepsup | fpn")->required();
    ablate->add_option("--config", config_path, "base configuration (defaults apply if omitted)");

    CLI::App* gendata = app.add_subcommand("gendata", "write a synthetic sample directory");
    gendata->add_option("--out", out_dir, "target directory")->required();
    gendata->add_option("--count", count, "number of samples");
    gendata->add_option("--seed", seed, "seed of the first sample");
    gendata->add_option("--size", size, "square image size, multiple of 32");
    gendata->add_option("--classes", classes, "number of classes including background");
    gendata->add_option("--night-prob", night_prob, "probability a scene is darkened");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (train->parsed()) return cmd_train(config_path, data_dir, out_dir);
        if (eval->parsed()) return cmd_eval(ckpt_path, data_dir, tta, ema, ignore_class);
        if (infer->parsed()) return cmd_infer(ckpt_path, rgb_path, ir_path, out_path, tta, ema);
        if (ablate->parsed()) return cmd_ablate(config_path, variant);
        if (gendata->parsed()) return cmd_gendata(out_dir, count, seed, size, classes, night_prob);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace rtfseg
