#pragma once

#include <string>
#include <vector>

#include "dipformer/ops.hpp"

namespace dip {

template <typename S>
struct DecoderParams {
    int unify_channels = 0;           // C: common width after per-stage linear
    int hidden = 0;                   // M: fusion MLP width
    int n_cls = 0;
    std::vector<int> stage_channels;  // input width per consumed stage
    std::vector<Tensor<S>> unify_w;   // [C, C_l] per stage
    std::vector<Tensor<S>> unify_b;
    Tensor<S> fuse1_w, fuse1_b;       // [M, k*C]
    Tensor<S> fuse2_w, fuse2_b;       // [n_cls, M]
};

// All-MLP decode: every stage is linearly mapped to C channels, bilinearly
// rescaled onto the out_h x out_w grid (stage 1 shrinks, the deep stages
// grow), concatenated, and pushed through a per-pixel MLP kC -> M -> n_cls
// with one ReLU. Returns logits [N, n_cls, out_h, out_w].
template <typename S>
Tensor<S> decode(const std::vector<Tensor<S>>& features, const DecoderParams<S>& p,
                 int out_h, int out_w) {
    const size_t k = p.stage_channels.size();
    if (features.size() != k)
        throw ConfigError("decode: got " + std::to_string(features.size()) + " scales, params describe " +
                          std::to_string(k));
    if (k == 0 || out_h <= 0 || out_w <= 0) throw ConfigError("decode: empty configuration");
    const int n = features[0].dim(0);
    OpScope scope("decoder");
    std::vector<Tensor<S>> unified;
    unified.reserve(k);
    for (size_t l = 0; l < k; ++l) {
        const Tensor<S>& f = features[l];
        if (f.ndim() != 4 || f.dim(0) != n || f.dim(1) != p.stage_channels[l])
            throw ConfigError("decode: stage " + std::to_string(l + 1) + " feature is " +
                              shape_str(f.shape()) + ", expected batch " + std::to_string(n) +
                              " with " + std::to_string(p.stage_channels[l]) + " channels");
        OpScope s("unify" + std::to_string(l + 1));
        int h = f.dim(2), w = f.dim(3);
        auto tok = reshape(permute(f, {0, 2, 3, 1}), {n, h * w, p.stage_channels[l]});
        auto mapped = linear(tok, p.unify_w[l], p.unify_b[l]);
        auto img = permute(reshape(mapped, {n, h, w, p.unify_channels}), {0, 3, 1, 2});
        unified.push_back(bilinear_resize(img, out_h, out_w));
    }
    Tensor<S> cat = k == 1 ? unified[0] : concat_channels(unified);
    OpScope s("fuse");
    int kc = p.unify_channels * static_cast<int>(k);
    auto tok = reshape(permute(cat, {0, 2, 3, 1}), {n, out_h * out_w, kc});
    auto hid = relu(linear(tok, p.fuse1_w, p.fuse1_b));
    auto cls = linear(hid, p.fuse2_w, p.fuse2_b);
    return permute(reshape(cls, {n, out_h, out_w, p.n_cls}), {0, 3, 1, 2});
}

// Restores decoder logits to the loss/metric resolution. The architecture
// pins the decoder grid at a quarter of the input, so only exact 4x targets
// are legal.
template <typename S>
Tensor<S> upsample_logits(const Tensor<S>& logits, int h, int w) {
    if (logits.ndim() != 4) throw ConfigError("upsample_logits: logits are " +
                                              shape_str(logits.shape()));
    if (h != 4 * logits.dim(2) || w != 4 * logits.dim(3))
        throw ConfigError("upsample_logits: target " + std::to_string(h) + "x" +
                          std::to_string(w) + " is not 4x the decoder grid " +
                          std::to_string(logits.dim(2)) + "x" + std::to_string(logits.dim(3)));
    return bilinear_resize(logits, h, w);
}

}  // namespace dip
