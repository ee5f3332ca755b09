#pragma once

#include "dipformer/ops.hpp"

namespace dip {

// Largest divisor of c not exceeding 8. Keeps GroupNorm valid at toy widths
// while matching the usual 8-group setting whenever 8 divides c.
inline int gn_groups_for(int c) {
    for (int g = c < 8 ? c : 8; g > 1; --g)
        if (c % g == 0) return g;
    return 1;
}

// One shared-parameter embedding block. The same weights serve the RGB and
// the depth branch of a stage: sharing is what lets the block learn RGB-D
// correspondences instead of two unrelated feature extractors.
template <typename S>
struct ConvBlockParams {
    int in_channels = 0, out_channels = 0, groups = 1;
    Tensor<S> w1, b1, g1, be1;
    Tensor<S> w2, b2, g2, be2;
    Tensor<S> w3, b3, g3, be3;
};

// conv3x3+GN, then a 2x2/2 max-pool (the patch embedding step), two more
// conv3x3+GN, and a residual from the post-pool feature onto the last conv's
// output. Deliberately no activation: the block embeds, it does not gate.
template <typename S>
Tensor<S> conv_block_forward(const Tensor<S>& x, const ConvBlockParams<S>& p) {
    if (x.ndim() != 4 || x.dim(1) != p.in_channels)
        throw ConfigError("conv_block: input " + shape_str(x.shape()) + " wants " +
                          std::to_string(p.in_channels) + " channels");
    if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
        throw ConfigError("conv_block: spatial size " + shape_str(x.shape()) +
                          " must be even to halve");
    auto t = group_norm(conv2d(x, p.w1, p.b1, 1, 1), p.g1, p.be1, p.groups);
    auto pooled = max_pool2d(t, 2, 2);
    auto u = group_norm(conv2d(pooled, p.w2, p.b2, 1, 1), p.g2, p.be2, p.groups);
    auto v = group_norm(conv2d(u, p.w3, p.b3, 1, 1), p.g3, p.be3, p.groups);
    return add(v, pooled);
}

template <typename S>
struct SaoStageParams {
    ConvBlockParams<S> block;
    // 1x1 conv realizing the per-pixel linear map over (r_f + d_f)
    Tensor<S> fuse_w, fuse_b;
    int in_channels = 0, out_channels = 0;
};

template <typename S>
struct StagePair {
    Tensor<S> r_f, d_f, fused;
};

// One Depth SAO stage: both branches through the shared block, then
// fused = linear(r_f + d_f). Halves the spatial size.
template <typename S>
StagePair<S> sao_stage_forward(const Tensor<S>& r_in, const Tensor<S>& d_in,
                               const SaoStageParams<S>& p) {
    if (r_in.ndim() != 4 || d_in.ndim() != 4 || r_in.shape() != d_in.shape())
        throw ConfigError("sao_stage: branch shapes differ, " + shape_str(r_in.shape()) +
                          " vs " + shape_str(d_in.shape()));
    if (r_in.dim(1) != p.in_channels)
        throw ConfigError("sao_stage: input has " + std::to_string(r_in.dim(1)) +
                          " channels, params want " + std::to_string(p.in_channels));
    StagePair<S> out;
    out.r_f = conv_block_forward(r_in, p.block);
    out.d_f = conv_block_forward(d_in, p.block);
    {
        OpScope scope("fuse");
        out.fused = conv2d(add(out.r_f, out.d_f), p.fuse_w, p.fuse_b, 1, 0);
    }
    return out;
}

}  // namespace dip
