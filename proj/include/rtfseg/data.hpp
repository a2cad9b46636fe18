#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rtfseg/tensor.hpp"

namespace rtfseg {

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

// One aligned RGB-thermal-label triple. Values live in [0,1]; the label map
// holds one class id per pixel.
struct SegSample {
    Tensor4<float> rgb;      // (1, 3, H, W)
    Tensor4<float> thermal;  // (1, 1, H, W)
    LabelMap labels;         // (1, H, W)
    bool night = false;
};

struct SceneConfig {
    unsigned seed = 0;
    int h = 64, w = 64;
    int classes = 5;        // class 0 is the background
    int min_objects = 3;    // rectangles/ellipses per scene
    int max_objects = 6;
    double night_prob = 0.0;
    double rgb_noise = 0.02;
    double ir_noise = 0.02;
};

// Fixed color per class id, used both when painting scenes and when
// colorizing predictions, so outputs are comparable across runs.
inline std::array<unsigned char, 3> class_palette(int k) {
    static const std::array<unsigned char, 3> table[] = {
        {40, 40, 48},    // background: dark slate
        {200, 60, 50},   // red
        {60, 170, 80},   // green
        {60, 100, 210},  // blue
        {220, 180, 50},  // yellow
        {170, 70, 190},  // purple
        {70, 190, 190},  // cyan
        {230, 130, 40},  // orange
    };
    if (k >= 0 && k < static_cast<int>(std::size(table))) return table[k];
    unsigned v = static_cast<unsigned>(k) * 2654435761u;
    return {static_cast<unsigned char>(64 + v % 160), static_cast<unsigned char>(64 + (v >> 8) % 160),
            static_cast<unsigned char>(64 + (v >> 16) % 160)};
}

// Evenly spaced emission level per class: thermal separates classes even when
// the night transform has crushed the RGB contrast.
inline float thermal_level(int k, int classes) {
    return (2.0f * k + 1.0f) / (2.0f * classes);
}

// Paints min..max random rectangles and ellipses over a background. Each
// object takes its class's palette color (plus a small jitter) and its class's
// thermal level; later objects occlude earlier ones. A "night" sample keeps
// geometry, labels, and thermal identical to the day sample of the same seed
// (the night branch draws from a second generator) and multiplies the RGB
// contrast by a factor in [0.05, 0.2] before adding sensor noise.
inline SegSample generate_scene(const SceneConfig& cfg) {
    if (cfg.h <= 0 || cfg.w <= 0 || cfg.h % 32 != 0 || cfg.w % 32 != 0)
        throw ConfigError("scene dims must be positive multiples of 32, got " +
                          std::to_string(cfg.h) + "x" + std::to_string(cfg.w));
    if (cfg.classes < 2) throw ConfigError("scenes need at least 2 classes");
    if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects)
        throw ConfigError("bad object count range");
    if (cfg.night_prob < 0.0 || cfg.night_prob > 1.0)
        throw ConfigError("night probability outside [0, 1]");

    std::mt19937 rng(cfg.seed);
    SegSample s;
    s.rgb = Tensor4<float>(1, 3, cfg.h, cfg.w);
    s.thermal = Tensor4<float>(1, 1, cfg.h, cfg.w);
    s.labels = LabelMap(1, cfg.h, cfg.w);

    auto paint = [&](int y, int x, int k, const std::array<float, 3>& color, float heat) {
        for (int j = 0; j < 3; ++j) s.rgb.at(0, j, y, x) = color[j];
        s.thermal.at(0, 0, y, x) = heat;
        s.labels.at(0, y, x) = k;
    };

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto jittered_color = [&](int k) {
        auto base = class_palette(k);
        std::array<float, 3> c;
        for (int j = 0; j < 3; ++j)
            c[j] = std::clamp(base[j] / 255.0f + static_cast<float>(unit(rng) - 0.5) * 0.1f,
                              0.0f, 1.0f);
        return c;
    };

    // background
    auto bg_color = jittered_color(0);
    float bg_heat = thermal_level(0, cfg.classes);
    for (int y = 0; y < cfg.h; ++y)
        for (int x = 0; x < cfg.w; ++x) paint(y, x, 0, bg_color, bg_heat);

    // objects
    std::uniform_int_distribution<int> count_d(cfg.min_objects, cfg.max_objects);
    std::uniform_int_distribution<int> class_d(1, cfg.classes - 1);
    int objects = count_d(rng);
    for (int o = 0; o < objects; ++o) {
        int k = class_d(rng);
        bool ellipse = unit(rng) < 0.5;
        int cy = static_cast<int>(unit(rng) * (cfg.h - 1));
        int cx = static_cast<int>(unit(rng) * (cfg.w - 1));
        int ry = 2 + static_cast<int>(unit(rng) * (cfg.h / 4));
        int rx = 2 + static_cast<int>(unit(rng) * (cfg.w / 4));
        auto color = jittered_color(k);
        float heat = std::clamp(
            thermal_level(k, cfg.classes) + static_cast<float>(unit(rng) - 0.5) * 0.06f, 0.0f,
            1.0f);
        for (int y = std::max(0, cy - ry); y <= std::min(cfg.h - 1, cy + ry); ++y)
            for (int x = std::max(0, cx - rx); x <= std::min(cfg.w - 1, cx + rx); ++x) {
                if (ellipse) {
                    double dy = (y - cy) / static_cast<double>(ry);
                    double dx = (x - cx) / static_cast<double>(rx);
                    if (dy * dy + dx * dx > 1.0) continue;
                }
                paint(y, x, k, color, heat);
            }
    }

    // per-modality sensor noise, shared by the day and night versions
    std::normal_distribution<double> noise(0.0, 1.0);
    for (Eigen::Index i = 0; i < s.rgb.size(); ++i)
        s.rgb.data[i] = std::clamp(
            s.rgb.data[i] + static_cast<float>(noise(rng) * cfg.rgb_noise), 0.0f, 1.0f);
    for (Eigen::Index i = 0; i < s.thermal.size(); ++i)
        s.thermal.data[i] = std::clamp(
            s.thermal.data[i] + static_cast<float>(noise(rng) * cfg.ir_noise), 0.0f, 1.0f);

    // The night decision and transform draw from their own generator so that
    // toggling night_prob cannot perturb the scene itself.
    std::mt19937 night_rng(cfg.seed ^ 0x9e3779b9u);
    s.night = unit(night_rng) < cfg.night_prob;
    if (s.night) {
        float f = 0.05f + 0.15f * static_cast<float>(unit(night_rng));
        for (Eigen::Index i = 0; i < s.rgb.size(); ++i)
            s.rgb.data[i] = std::clamp(
                s.rgb.data[i] * f + static_cast<float>(noise(night_rng) * cfg.rgb_noise), 0.0f,
                1.0f);
    }
    return s;
}

// ---------------------------------------------------------------------------
// NetPBM files (binary P6 / P5, maxval 255)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

// Header tokenizer: skips whitespace and '#' comments, remembers where the
// last token started so errors can point at it.
struct PnmScanner {
    const std::string& buf;
    size_t pos = 0;
    size_t token_start = 0;

    explicit PnmScanner(const std::string& b) : buf(b) {}

    void skip_space() {
        while (pos < buf.size()) {
            if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
                ++pos;
            } else if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    }

    std::string token(const std::string& what) {
        skip_space();
        token_start = pos;
        while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])) &&
               buf[pos] != '#')
            ++pos;
        if (pos == token_start)
            throw ParseError("missing " + what, static_cast<long long>(token_start));
        return buf.substr(token_start, pos - token_start);
    }

    long parse_int(const std::string& what, long lo, long hi) {
        std::string t = token(what);
        long v = 0;
        for (char ch : t) {
            if (ch < '0' || ch > '9')
                throw ParseError("non-numeric " + what + " '" + t + "'",
                                 static_cast<long long>(token_start));
            v = v * 10 + (ch - '0');
            if (v > hi) break;
        }
        if (v < lo || v > hi)
            throw ParseError(what + " " + t + " outside [" + std::to_string(lo) + ", " +
                                 std::to_string(hi) + "]",
                             static_cast<long long>(token_start));
        return v;
    }
};

// Parses a full P5/P6 file and returns the raw bytes plus geometry.
struct RawImage {
    int channels = 0, h = 0, w = 0;
    size_t payload = 0;  // offset of the first pixel byte
    std::string bytes;
};

inline RawImage parse_pnm(const std::string& path) {
    RawImage img;
    img.bytes = read_file(path);
    PnmScanner sc(img.bytes);
    std::string magic = sc.token("magic number");
    if (magic == "P6")
        img.channels = 3;
    else if (magic == "P5")
        img.channels = 1;
    else
        throw ParseError("unsupported magic '" + magic + "' (want P5 or P6)",
                         static_cast<long long>(sc.token_start));
    img.w = static_cast<int>(sc.parse_int("width", 1, 1 << 20));
    img.h = static_cast<int>(sc.parse_int("height", 1, 1 << 20));
    sc.parse_int("maxval", 255, 255);  // only 8-bit data is supported
    if (sc.pos >= img.bytes.size() ||
        !std::isspace(static_cast<unsigned char>(img.bytes[sc.pos])))
        throw ParseError("expected single whitespace after maxval",
                         static_cast<long long>(sc.pos));
    img.payload = sc.pos + 1;
    size_t need = static_cast<size_t>(img.w) * img.h * img.channels;
    if (img.bytes.size() - img.payload < need)
        throw ParseError("truncated pixel data: need " + std::to_string(need) + " bytes, have " +
                             std::to_string(img.bytes.size() - img.payload),
                         static_cast<long long>(img.bytes.size()));
    return img;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + path);
}

inline unsigned char to_byte(float v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace detail

// Reads a P6 (RGB) or P5 (gray) file into a (1, C, H, W) tensor scaled to
// [0, 1]. Malformed or truncated files throw ParseError with a byte offset.
inline Tensor4<float> read_image(const std::string& path) {
    detail::RawImage img = detail::parse_pnm(path);
    Tensor4<float> t(1, img.channels, img.h, img.w);
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(img.bytes.data()) + img.payload;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int j = 0; j < img.channels; ++j)
                t.at(0, j, y, x) = *p++ / 255.0f;
    return t;
}

// Reads a P5 file as raw class ids (no scaling).
inline LabelMap read_label_pgm(const std::string& path) {
    detail::RawImage img = detail::parse_pnm(path);
    if (img.channels != 1)
        throw ParseError("label map must be P5 grayscale", 0);
    LabelMap m(1, img.h, img.w);
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(img.bytes.data()) + img.payload;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.v[i] = p[i];
    return m;
}

inline void write_ppm(const std::string& path, const Tensor4<float>& t) {
    if (t.n != 1 || t.c != 3) throw DataError("P6 writer expects one (1,3,H,W) image");
    std::string out = "P6\n" + std::to_string(t.w) + " " + std::to_string(t.h) + "\n255\n";
    out.reserve(out.size() + static_cast<size_t>(t.h) * t.w * 3);
    for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x)
            for (int j = 0; j < 3; ++j)
                out.push_back(static_cast<char>(detail::to_byte(t.at(0, j, y, x))));
    detail::write_file(path, out);
}

inline void write_pgm(const std::string& path, const Tensor4<float>& t) {
    if (t.n != 1 || t.c != 1) throw DataError("P5 writer expects one (1,1,H,W) image");
    std::string out = "P5\n" + std::to_string(t.w) + " " + std::to_string(t.h) + "\n255\n";
    for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x)
            out.push_back(static_cast<char>(detail::to_byte(t.at(0, 0, y, x))));
    detail::write_file(path, out);
}

// Class ids written verbatim as bytes; id 255 doubles as the ignore marker.
inline void write_label_pgm(const std::string& path, const LabelMap& m) {
    if (m.n != 1) throw DataError("P5 label writer expects one (1,H,W) map");
    std::string out = "P5\n" + std::to_string(m.w) + " " + std::to_string(m.h) + "\n255\n";
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        int id = m.v[i];
        if (id < 0 || id > 255)
            throw DataError("label id " + std::to_string(id) + " does not fit a byte");
        out.push_back(static_cast<char>(id));
    }
    detail::write_file(path, out);
}

// ---------------------------------------------------------------------------
// dataset directories: {id}_rgb.ppm + {id}_ir.pgm + {id}_label.pgm
// ---------------------------------------------------------------------------

struct SamplePaths {
    std::string rgb, ir, label;
};

inline SamplePaths sample_paths(const std::string& dir, const std::string& id) {
    return {dir + "/" + id + "_rgb.ppm", dir + "/" + id + "_ir.pgm",
            dir + "/" + id + "_label.pgm"};
}

inline void save_sample(const std::string& dir, const std::string& id, const SegSample& s) {
    std::filesystem::create_directories(dir);
    SamplePaths p = sample_paths(dir, id);
    write_ppm(p.rgb, s.rgb);
    write_pgm(p.ir, s.thermal);
    write_label_pgm(p.label, s.labels);
}

inline SegSample load_sample(const std::string& dir, const std::string& id) {
    SamplePaths p = sample_paths(dir, id);
    SegSample s;
    s.rgb = read_image(p.rgb);
    s.thermal = read_image(p.ir);
    s.labels = read_label_pgm(p.label);
    if (s.thermal.c != 1) throw DataError(p.ir + " is not grayscale");
    if (s.rgb.h != s.thermal.h || s.rgb.w != s.thermal.w || s.rgb.h != s.labels.h ||
        s.rgb.w != s.labels.w)
        throw DataError("sample '" + id + "' modalities are misaligned");
    return s;
}

// Sorted sample ids; every listed id is guaranteed to have all three files.
inline std::vector<std::string> list_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("dataset directory missing: " + dir);
    std::vector<std::string> ids;
    const std::string suffix = "_rgb.ppm";
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string name = entry.path().filename().string();
        if (name.size() <= suffix.size() ||
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
            continue;
        std::string id = name.substr(0, name.size() - suffix.size());
        SamplePaths p = sample_paths(dir, id);
        if (!fs::exists(p.ir) || !fs::exists(p.label))
            throw DataError("sample '" + id + "' is missing its thermal or label file");
        ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw DataError("no samples found in " + dir);
    return ids;
}

// Generates `count` scenes (seeds base_seed, base_seed+1, ...) into dir.
inline std::vector<std::string> save_dataset(const std::string& dir, SceneConfig cfg, int count,
                                             unsigned base_seed) {
    if (count < 1) throw ConfigError("dataset needs at least one sample");
    std::vector<std::string> ids;
    for (int i = 0; i < count; ++i) {
        cfg.seed = base_seed + static_cast<unsigned>(i);
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%05u", cfg.seed);
        save_sample(dir, buf, generate_scene(cfg));
        ids.emplace_back(buf);
    }
    return ids;
}

}  // namespace rtfseg
