#include "dipformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dipformer/errors.hpp"
#include "dipformer/png_io.hpp"
#include "dipformer/rng.hpp"

namespace fs = std::filesystem;

namespace dip {

std::vector<DatasetEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open manifest: " + path);
    fs::path base = fs::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        return fs::path(p).is_absolute() ? p : (base / p).string();
    };
    std::vector<DatasetEntry> entries;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        size_t t1 = line.find('\t');
        size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos ||
            line.find('\t', t2 + 1) != std::string::npos)
            throw ConfigError("manifest line " + std::to_string(lineno) +
                              " is not three tab-separated paths: " + path);
        DatasetEntry e;
        e.rgb_path = resolve(line.substr(0, t1));
        e.depth_path = resolve(line.substr(t1 + 1, t2 - t1 - 1));
        e.label_path = resolve(line.substr(t2 + 1));
        if (e.rgb_path.empty() || e.depth_path.empty() || e.label_path.empty())
            throw ConfigError("manifest line " + std::to_string(lineno) + " has an empty path");
        entries.push_back(std::move(e));
    }
    if (entries.empty()) throw ConfigError("manifest is empty: " + path);
    return entries;
}

void write_manifest(const std::string& path, const std::vector<DatasetEntry>& entries) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw ConfigError("cannot open for writing: " + tmp);
        for (const auto& e : entries)
            f << e.rgb_path << '\t' << e.depth_path << '\t' << e.label_path << '\n';
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw ConfigError("cannot rename into place: " + path);
}

Sample load_sample(const DatasetEntry& entry) {
    PngImage rgb = read_png(entry.rgb_path);
    if (rgb.channels != 3 || rgb.bit_depth != 8)
        throw ConfigError("rgb image must be 8-bit color: " + entry.rgb_path);
    PngImage depth = read_png(entry.depth_path);
    if (depth.channels != 1 || depth.bit_depth != 16)
        throw ConfigError("depth image must be 16-bit grayscale: " + entry.depth_path);
    PngImage labels = read_png(entry.label_path);
    if (labels.channels != 1 || labels.bit_depth != 8)
        throw ConfigError("label image must be 8-bit grayscale: " + entry.label_path);
    if (depth.width != rgb.width || depth.height != rgb.height ||
        labels.width != rgb.width || labels.height != rgb.height)
        throw ConfigError("rgb/depth/label sizes disagree for " + entry.rgb_path);

    Sample s;
    s.height = rgb.height;
    s.width = rgb.width;
    size_t hw = static_cast<size_t>(s.height) * s.width;

    // interleaved RGB -> channel planes, scaled to [0,1]
    s.rgb.resize(3 * hw);
    for (size_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c)
            s.rgb[static_cast<size_t>(c) * hw + i] = rgb.data8[3 * i + c] / 255.0f;

    // min-max over valid pixels; zeros mean "missing" and stay zero. A single
    // valid level normalizes to the information-free midpoint.
    uint16_t lo = 65535, hi = 0;
    bool any = false;
    for (uint16_t v : depth.data16) {
        if (v == 0) continue;
        any = true;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    s.depth.assign(hw, 0.0f);
    if (any) {
        float span = static_cast<float>(hi - lo);
        for (size_t i = 0; i < hw; ++i) {
            uint16_t v = depth.data16[i];
            if (v == 0) continue;
            s.depth[i] = span > 0 ? (v - lo) / span : 0.5f;
        }
    }

    s.labels.resize(hw);
    for (size_t i = 0; i < hw; ++i) s.labels[i] = labels.data8[i];
    return s;
}

void hflip(Sample& s) {
    int h = s.height, w = s.width;
    size_t hw = static_cast<size_t>(h) * w;
    for (int c = 0; c < 3; ++c) {
        float* plane = s.rgb.data() + static_cast<size_t>(c) * hw;
        for (int y = 0; y < h; ++y)
            std::reverse(plane + static_cast<size_t>(y) * w,
                         plane + static_cast<size_t>(y + 1) * w);
    }
    for (int y = 0; y < h; ++y) {
        std::reverse(s.depth.begin() + static_cast<size_t>(y) * w,
                     s.depth.begin() + static_cast<size_t>(y + 1) * w);
        std::reverse(s.labels.begin() + static_cast<size_t>(y) * w,
                     s.labels.begin() + static_cast<size_t>(y + 1) * w);
    }
}

namespace {

// Distinct object colors, chosen far apart in RGB, none equal to the road
// gray or the shared pair color.
constexpr std::array<std::array<uint8_t, 3>, 16> kDistinctColors = {{
    {220, 40, 40},  {40, 200, 60},   {60, 80, 220},  {230, 210, 60},
    {160, 60, 200}, {60, 200, 200},  {240, 140, 40}, {140, 90, 50},
    {210, 210, 210}, {20, 120, 20},  {120, 20, 120}, {20, 20, 140},
    {200, 120, 160}, {100, 160, 240}, {180, 220, 140}, {90, 40, 10},
}};
constexpr std::array<uint8_t, 3> kRoadColor = {84, 84, 92};
constexpr std::array<uint8_t, 3> kPairColor = {150, 120, 180};

uint16_t depth_to_u16(double d) {
    d = std::min(1.0, std::max(1.0 / 65535.0, d));
    return static_cast<uint16_t>(std::lround(d * 65535.0));
}

}  // namespace

std::array<uint8_t, 3> synth_class_color(int cls, int n_classes) {
    if (cls == 0) return kRoadColor;
    if (cls >= n_classes - 2) return kPairColor;
    return kDistinctColors[static_cast<size_t>(cls - 1) % kDistinctColors.size()];
}

const std::array<std::array<uint8_t, 3>, 19>& mask_palette() {
    static const std::array<std::array<uint8_t, 3>, 19> p = {{
        {128, 64, 128}, {244, 35, 232}, {70, 70, 70},   {102, 102, 156}, {190, 153, 153},
        {153, 153, 153}, {250, 170, 30}, {220, 220, 0}, {107, 142, 35},  {152, 251, 152},
        {70, 130, 180}, {220, 20, 60},  {255, 0, 0},    {0, 0, 142},     {0, 0, 70},
        {0, 60, 100},   {0, 80, 100},   {0, 0, 230},    {119, 11, 32},
    }};
    return p;
}

std::string generate_synthetic(const SynthConfig& cfg, const std::string& out_dir) {
    if (cfg.n_samples <= 0) throw ConfigError("synth: n_samples must be positive");
    if (cfg.height < 16 || cfg.width < 16)
        throw ConfigError("synth: images must be at least 16x16");
    if (cfg.n_classes < 3 || cfg.n_classes > 200)
        throw ConfigError("synth: n_classes must be in [3,200]");
    if (cfg.n_classes - 3 > static_cast<int>(kDistinctColors.size()))
        throw ConfigError("synth: at most " + std::to_string(kDistinctColors.size() + 3) +
                          " classes supported");
    if (cfg.depth_only_class_fraction < 0 || cfg.depth_only_class_fraction > 1)
        throw ConfigError("synth: depth_only_class_fraction must be in [0,1]");

    fs::create_directories(out_dir);
    Rng rng(cfg.seed);
    int h = cfg.height, w = cfg.width;
    size_t hw = static_cast<size_t>(h) * w;
    int pair_lo = cfg.n_classes - 2, pair_hi = cfg.n_classes - 1;
    int n_distinct = cfg.n_classes - 3;  // classes 1 .. n_distinct

    std::vector<DatasetEntry> entries;
    std::vector<uint8_t> rgb(3 * hw);
    std::vector<uint16_t> depth(hw);
    std::vector<uint8_t> labels(hw);

    for (int s = 0; s < cfg.n_samples; ++s) {
        // road backdrop: flat color, depth receding toward the top rows
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                size_t i = static_cast<size_t>(y) * w + x;
                rgb[3 * i] = kRoadColor[0];
                rgb[3 * i + 1] = kRoadColor[1];
                rgb[3 * i + 2] = kRoadColor[2];
                double grade = 0.78 + 0.22 * (1.0 - static_cast<double>(y) / (h - 1));
                depth[i] = depth_to_u16(grade + rng.uniform(-0.01, 0.01));
                labels[i] = 0;
            }

        int n_rects = rng.range_int(3, 5);
        for (int r = 0; r < n_rects; ++r) {
            // pair objects and distinct objects share the same geometry
            // distribution so shape never hints at the class
            int rw = rng.range_int(w / 5, std::max(w / 5 + 1, (2 * w) / 5));
            int rh = rng.range_int(h / 5, std::max(h / 5 + 1, (2 * h) / 5));
            int x0 = rng.range_int(0, w - rw);
            int y0 = rng.range_int(0, h - rh);

            int cls;
            bool from_pair = n_distinct == 0 || rng.coin(cfg.depth_only_class_fraction);
            if (from_pair)
                cls = rng.coin() ? pair_lo : pair_hi;
            else
                cls = 1 + rng.range_int(0, n_distinct - 1);

            double plane;
            if (cls == pair_lo) plane = 0.22 + rng.uniform(-0.06, 0.06);
            else if (cls == pair_hi) plane = 0.62 + rng.uniform(-0.06, 0.06);
            else plane = rng.uniform(0.34, 0.50);

            auto color = synth_class_color(cls, cfg.n_classes);
            for (int y = y0; y < y0 + rh; ++y)
                for (int x = x0; x < x0 + rw; ++x) {
                    size_t i = static_cast<size_t>(y) * w + x;
                    rgb[3 * i] = color[0];
                    rgb[3 * i + 1] = color[1];
                    rgb[3 * i + 2] = color[2];
                    depth[i] = depth_to_u16(plane + rng.uniform(-0.01, 0.01));
                    labels[i] = static_cast<uint8_t>(cls);
                }
        }

        // a sprinkle of dropped depth readings exercises the missing path
        size_t n_missing = hw / 1000;
        for (size_t m = 0; m < n_missing; ++m) depth[rng.below(hw)] = 0;

        char name[64];
        std::snprintf(name, sizeof(name), "rgb_%05d.png", s);
        std::string rgb_path = (fs::path(out_dir) / name).string();
        std::snprintf(name, sizeof(name), "depth_%05d.png", s);
        std::string depth_path = (fs::path(out_dir) / name).string();
        std::snprintf(name, sizeof(name), "labels_%05d.png", s);
        std::string label_path = (fs::path(out_dir) / name).string();
        write_png_rgb8(rgb_path, w, h, rgb);
        write_png_gray16(depth_path, w, h, depth);
        write_png_gray8(label_path, w, h, labels);

        // manifest rows stay relative so the tree can be moved wholesale
        DatasetEntry e;
        e.rgb_path = fs::path(rgb_path).filename().string();
        e.depth_path = fs::path(depth_path).filename().string();
        e.label_path = fs::path(label_path).filename().string();
        entries.push_back(std::move(e));
    }
    std::string manifest = (fs::path(out_dir) / "manifest.tsv").string();
    write_manifest(manifest, entries);
    return manifest;
}

}  // namespace dip
