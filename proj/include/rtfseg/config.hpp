#pragma once

#include <iomanip>
#include <sstream>
#include <string>

#include "rtfseg/model.hpp"
#include "rtfseg/optim.hpp"

namespace rtfseg {

// ---------------------------------------------------------------------------
// training configuration
// ---------------------------------------------------------------------------

// Everything a run needs, expressible as flat key=value text. Defaults are the
// desk-scale recipe: 64x64 scenes, width 8, five classes, batch 2.
struct TrainConfig {
    int epochs = 30;
    int batch_size = 2;
    int base_width = 8;
    int classes = 5;
    int blocks_per_stage = 1;

    double lr_backbone = 5e-5;
    double lr_fusion = 2e-4;
    double lr_decoder = 3e-4;
    double layer_decay = 0.9;
    double weight_decay = 0.05;
    int restart_epochs = 0;  // 0: restart every max(epochs/4, 1) epochs
    double min_lr_factor = 0.01;

    bool ema = true;
    double ema_decay = 0.999;
    double flip_prob = 0.5;
    unsigned seed = 42;

    bool deep_supervision = true;
    std::string fusion = "freq,freq,sem,sem";  // per-stage mode, shallow to deep
    std::string decoder = "panet";             // panet | fpn
    bool rgb_only = false;                     // zero the thermal stream
    int ignore_index = 255;

    bool operator==(const TrainConfig&) const = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
    }
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("key '" + key + "' expects 0/1/true/false, got '" + v + "'");
}

inline std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace detail

// Per-stage fusion modes from a comma list like "freq,freq,sem,sem".
inline std::array<FusionMode, 4> parse_fusion_modes(const std::string& text) {
    std::array<FusionMode, 4> modes{};
    std::stringstream ss(text);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, ',')) {
        tok = detail::trim(tok);
        if (i >= 4) throw ConfigError("fusion list '" + text + "' has more than 4 stages");
        if (tok == "freq")
            modes[i] = FusionMode::freq;
        else if (tok == "sem")
            modes[i] = FusionMode::sem;
        else
            throw ConfigError("unknown fusion mode '" + tok + "' (expected freq or sem)");
        ++i;
    }
    if (i != 4) throw ConfigError("fusion list '" + text + "' must name exactly 4 stages");
    return modes;
}

inline DecoderVariant parse_decoder_variant(const std::string& text) {
    if (text == "panet") return DecoderVariant::panet;
    if (text == "fpn") return DecoderVariant::fpn;
    throw ConfigError("unknown decoder variant '" + text + "' (expected panet or fpn)");
}

inline void validate(const TrainConfig& c) {
    if (c.epochs < 1) throw ConfigError("epochs must be positive");
    if (c.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (c.base_width < 1) throw ConfigError("base_width must be positive");
    if (c.classes < 2) throw ConfigError("need at least 2 classes");
    if (c.blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be positive");
    if (c.layer_decay <= 0.0 || c.layer_decay > 1.0)
        throw ConfigError("layer_decay must be in (0, 1]");
    if (c.restart_epochs < 0) throw ConfigError("restart_epochs cannot be negative");
    if (c.min_lr_factor < 0.0 || c.min_lr_factor > 1.0)
        throw ConfigError("min_lr_factor must be in [0, 1]");
    if (c.ema_decay < 0.0 || c.ema_decay >= 1.0) throw ConfigError("ema_decay must be in [0, 1)");
    if (c.flip_prob < 0.0 || c.flip_prob > 1.0) throw ConfigError("flip_prob must be in [0, 1]");
    if (c.ignore_index >= 0 && c.ignore_index < c.classes)
        throw ConfigError("ignore_index collides with a real class id");
    parse_fusion_modes(c.fusion);
    parse_decoder_variant(c.decoder);
}

// One key=value assignment; unknown keys are rejected rather than ignored.
inline void set_key(TrainConfig& c, const std::string& key, const std::string& value) {
    using detail::to_bool;
    using detail::to_double;
    using detail::to_int;
    if (key == "epochs") c.epochs = to_int(key, value);
    else if (key == "batch_size") c.batch_size = to_int(key, value);
    else if (key == "base_width") c.base_width = to_int(key, value);
    else if (key == "classes") c.classes = to_int(key, value);
    else if (key == "blocks_per_stage") c.blocks_per_stage = to_int(key, value);
    else if (key == "lr_backbone") c.lr_backbone = to_double(key, value);
    else if (key == "lr_fusion") c.lr_fusion = to_double(key, value);
    else if (key == "lr_decoder") c.lr_decoder = to_double(key, value);
    else if (key == "layer_decay") c.layer_decay = to_double(key, value);
    else if (key == "weight_decay") c.weight_decay = to_double(key, value);
    else if (key == "restart_epochs") c.restart_epochs = to_int(key, value);
    else if (key == "min_lr_factor") c.min_lr_factor = to_double(key, value);
    else if (key == "ema") c.ema = to_bool(key, value);
    else if (key == "ema_decay") c.ema_decay = to_double(key, value);
    else if (key == "flip_prob") c.flip_prob = to_double(key, value);
    else if (key == "seed") c.seed = static_cast<unsigned>(to_int(key, value));
    else if (key == "deep_supervision") c.deep_supervision = to_bool(key, value);
    else if (key == "fusion") c.fusion = value;
    else if (key == "decoder") c.decoder = value;
    else if (key == "rgb_only") c.rgb_only = to_bool(key, value);
    else if (key == "ignore_index") c.ignore_index = to_int(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

// Flat key=value text, one pair per line; '#' starts a comment.
inline TrainConfig parse_train_config(const std::string& text) {
    TrainConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + " is not key=value: '" + line +
                              "'");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + " has an empty key");
        set_key(c, key, value);
    }
    validate(c);
    return c;
}

// Inverse of parse_train_config: every field, fixed order, full precision.
inline std::string serialize_train_config(const TrainConfig& c) {
    using detail::num;
    std::ostringstream os;
    os << "epochs=" << c.epochs << "\n";
    os << "batch_size=" << c.batch_size << "\n";
    os << "base_width=" << c.base_width << "\n";
    os << "classes=" << c.classes << "\n";
    os << "blocks_per_stage=" << c.blocks_per_stage << "\n";
    os << "lr_backbone=" << num(c.lr_backbone) << "\n";
    os << "lr_fusion=" << num(c.lr_fusion) << "\n";
    os << "lr_decoder=" << num(c.lr_decoder) << "\n";
    os << "layer_decay=" << num(c.layer_decay) << "\n";
    os << "weight_decay=" << num(c.weight_decay) << "\n";
    os << "restart_epochs=" << c.restart_epochs << "\n";
    os << "min_lr_factor=" << num(c.min_lr_factor) << "\n";
    os << "ema=" << (c.ema ? 1 : 0) << "\n";
    os << "ema_decay=" << num(c.ema_decay) << "\n";
    os << "flip_prob=" << num(c.flip_prob) << "\n";
    os << "seed=" << c.seed << "\n";
    os << "deep_supervision=" << (c.deep_supervision ? 1 : 0) << "\n";
    os << "fusion=" << c.fusion << "\n";
    os << "decoder=" << c.decoder << "\n";
    os << "rgb_only=" << (c.rgb_only ? 1 : 0) << "\n";
    os << "ignore_index=" << c.ignore_index << "\n";
    return os.str();
}

inline ModelConfig model_config_from(const TrainConfig& c) {
    ModelConfig m;
    m.base_width = c.base_width;
    m.classes = c.classes;
    m.blocks_per_stage = c.blocks_per_stage;
    m.fusion = parse_fusion_modes(c.fusion);
    m.decoder = parse_decoder_variant(c.decoder);
    m.deep_supervision = c.deep_supervision;
    return m;
}

inline OptimConfig optim_config_from(const TrainConfig& c) {
    OptimConfig o;
    o.lr_backbone = c.lr_backbone;
    o.lr_fusion = c.lr_fusion;
    o.lr_decoder = c.lr_decoder;
    o.layer_decay = c.layer_decay;
    o.weight_decay = c.weight_decay;
    return o;
}

// Named architecture variants for side-by-side comparison runs.
inline TrainConfig apply_variant(TrainConfig c, const std::string& variant) {
    if (variant == "full") return c;
    if (variant == "all_freq") {
        c.fusion = "freq,freq,freq,freq";
        return c;
    }
    if (variant == "no_deepsup") {
        c.deep_supervision = false;
        return c;
    }
    if (variant == "fpn") {
        c.decoder = "fpn";
        c.deep_supervision = false;
        return c;
    }
    throw ConfigError("unknown variant '" + variant +
                      "' (expected full, all_freq, no_deepsup, or fpn)");
}

}  // namespace rtfseg
