#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dipformer/tensor.hpp"

namespace dip {

// One loaded example. rgb is channel-major [3,H,W] in [0,1]; depth is [H,W]
// min-max normalized over valid pixels with 0 kept as "missing"; labels are
// class ids with 255 ignored.
struct Sample {
    int height = 0, width = 0;
    std::vector<float> rgb;
    std::vector<float> depth;
    std::vector<int> labels;
};

struct DatasetEntry {
    std::string rgb_path, depth_path, label_path;
};

// Manifest rows are "rgb<TAB>depth<TAB>labels". Relative paths resolve
// against the manifest's directory.
std::vector<DatasetEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<DatasetEntry>& entries);

Sample load_sample(const DatasetEntry& entry);

// In-place joint horizontal flip of rgb, depth, and labels.
void hflip(Sample& s);

// Scene generator for the depth-separable benchmark. Class 0 is road with a
// row-wise depth gradient; rectangle objects take the remaining classes. The
// last two classes share one RGB color and differ only by depth plane, so
// their separation is impossible from color alone; depth_only_class_fraction
// is the probability that an object is drawn from that pair.
struct SynthConfig {
    int n_samples = 200;
    int height = 64, width = 64;
    int n_classes = 6;  // >= 3: road + optional distinct classes + the pair
    double depth_only_class_fraction = 0.5;
    uint64_t seed = 0;
};

// Writes rgb/depth/label PNG triplets plus manifest.tsv under out_dir and
// returns the manifest path. Byte-deterministic for a fixed config.
std::string generate_synthetic(const SynthConfig& cfg, const std::string& out_dir);

// The flat fill colors the generator uses, by class id (shared by the last
// two classes). Useful for colour-ambiguity analysis in tests.
std::array<uint8_t, 3> synth_class_color(int cls, int n_classes);

// Fixed 19-entry palette for rendering class masks; ids wrap around it.
const std::array<std::array<uint8_t, 3>, 19>& mask_palette();

// Stacks samples (by index) into network inputs: rgb [N,3,H,W],
// depth [N,1,H,W], labels concatenated row-major.
template <typename S>
struct Batch {
    Tensor<S> rgb, depth;
    std::vector<int> labels;
    int height = 0, width = 0;
};

template <typename S>
Batch<S> make_batch(const std::vector<Sample>& samples, const std::vector<size_t>& idx) {
    if (idx.empty()) throw ConfigError("make_batch: empty index list");
    const Sample& first = samples.at(idx[0]);
    int h = first.height, w = first.width;
    int n = static_cast<int>(idx.size());
    size_t hw = static_cast<size_t>(h) * w;
    std::vector<S> rgb(static_cast<size_t>(n) * 3 * hw);
    std::vector<S> depth(static_cast<size_t>(n) * hw);
    std::vector<int> labels(static_cast<size_t>(n) * hw);
    for (int b = 0; b < n; ++b) {
        const Sample& s = samples.at(idx[static_cast<size_t>(b)]);
        if (s.height != h || s.width != w)
            throw ConfigError("make_batch: mixed sample sizes in one batch");
        for (size_t i = 0; i < 3 * hw; ++i)
            rgb[static_cast<size_t>(b) * 3 * hw + i] = static_cast<S>(s.rgb[i]);
        for (size_t i = 0; i < hw; ++i)
            depth[static_cast<size_t>(b) * hw + i] = static_cast<S>(s.depth[i]);
        std::copy(s.labels.begin(), s.labels.end(),
                  labels.begin() + static_cast<size_t>(b) * hw);
    }
    Batch<S> out;
    out.rgb = Tensor<S>::from({n, 3, h, w}, std::move(rgb));
    out.depth = Tensor<S>::from({n, 1, h, w}, std::move(depth));
    out.labels = std::move(labels);
    out.height = h;
    out.width = w;
    return out;
}

}  // namespace dip
