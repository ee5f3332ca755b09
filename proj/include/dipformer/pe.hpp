#pragma once

#include <cmath>
#include <string>

#include "dipformer/ops.hpp"

namespace dip {

// Position handling schemes. The first three are classic embeddings injected
// after stage 1; the depth kinds fuse the depth branch into the RGB branch at
// every stage instead. Exactly one kind is active per model.
enum class PeKind { SinCos, Learnable, Implicit, DepthAdd, DepthConcat, DepthSao };

inline const char* pe_kind_name(PeKind k) {
    switch (k) {
        case PeKind::SinCos: return "sincos";
        case PeKind::Learnable: return "learnable";
        case PeKind::Implicit: return "implicit";
        case PeKind::DepthAdd: return "depth_add";
        case PeKind::DepthConcat: return "depth_concat";
        case PeKind::DepthSao: return "depth_sao";
    }
    throw InternalError("pe_kind_name: bad enum value");
}

inline PeKind pe_kind_from(const std::string& name) {
    if (name == "sincos") return PeKind::SinCos;
    if (name == "learnable") return PeKind::Learnable;
    if (name == "implicit") return PeKind::Implicit;
    if (name == "depth_add") return PeKind::DepthAdd;
    if (name == "depth_concat") return PeKind::DepthConcat;
    if (name == "depth_sao") return PeKind::DepthSao;
    throw ConfigError("unknown pe kind '" + name + "'");
}

// Fixed 2-D sine/cosine table, shape [1,C,h,w]. The first C/2 channels encode
// the row index, the rest the column index; within each half, channel pair k
// carries sin/cos at frequency 10000^(-2k/C). Parameter-free and constant,
// so the tensor never requires grad.
template <typename S>
Tensor<S> sincos_pe(int h, int w, int c) {
    if (h <= 0 || w <= 0 || c <= 0) throw ConfigError("sincos_pe: non-positive dimension");
    if (c % 2 != 0) throw ConfigError("sincos_pe: channel count must be even, got " +
                                      std::to_string(c));
    Tensor<S> out = Tensor<S>::zeros({1, c, h, w}, false);
    S* po = out.value().data();
    int half = c / 2;
    for (int ch = 0; ch < c; ++ch) {
        int j = ch < half ? ch : ch - half;
        bool row_axis = ch < half;
        double freq = std::pow(10000.0, -2.0 * (j / 2) / c);
        bool use_sin = (j % 2) == 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double pos = row_axis ? y : x;
                double a = pos * freq;
                po[(static_cast<size_t>(ch) * h + y) * w + x] =
                    static_cast<S>(use_sin ? std::sin(a) : std::cos(a));
            }
    }
    return out;
}

// The trainable table itself, shape-checked against the requested geometry.
// Returning the parameter keeps it on the tape, so it receives gradients.
template <typename S>
Tensor<S> learnable_pe(int h, int w, int c, const Tensor<S>& table) {
    if (table.shape() != Shape{1, c, h, w})
        throw ConfigError("learnable_pe: table is " + shape_str(table.shape()) +
                          ", expected " + shape_str({1, c, h, w}));
    return table;
}

// x + depthwise3x3(x): each pixel gains an offset derived from its own
// neighborhood, which is what makes the encoding positional.
template <typename S>
Tensor<S> implicit_pe(const Tensor<S>& x, const Tensor<S>& dw_weight) {
    if (x.ndim() != 4) throw ConfigError("implicit_pe: input is " + shape_str(x.shape()));
    if (dw_weight.shape() != Shape{x.dim(1), 3, 3})
        throw ConfigError("implicit_pe: weight is " + shape_str(dw_weight.shape()) +
                          " for " + std::to_string(x.dim(1)) + " channels");
    return add(x, depthwise_conv3x3(x, dw_weight, Tensor<S>{}));
}

namespace detail {
template <typename S>
void check_fuse_inputs(const Tensor<S>& r, const Tensor<S>& d) {
    if (r.ndim() != 4 || d.ndim() != 4 || r.dim(0) != d.dim(0) || r.dim(2) != d.dim(2) ||
        r.dim(3) != d.dim(3))
        throw ConfigError("depth fuse: mismatched geometry " + shape_str(r.shape()) + " vs " +
                          shape_str(d.shape()));
}
}  // namespace detail

// Pixel-wise additive depth fusion: r + proj(d), proj a 1x1 conv lifting d to
// r's channel count.
template <typename S>
Tensor<S> depth_add_fuse(const Tensor<S>& r, const Tensor<S>& d, const Tensor<S>& proj_w,
                         const Tensor<S>& proj_b) {
    detail::check_fuse_inputs(r, d);
    if (proj_w.shape() != Shape{r.dim(1), d.dim(1), 1, 1})
        throw ConfigError("depth_add_fuse: proj weight is " + shape_str(proj_w.shape()));
    return add(r, conv2d(d, proj_w, proj_b, 1, 0));
}

// Concatenation fusion: linear(concat(r, proj(d))) back down to r's channels.
template <typename S>
Tensor<S> depth_concat_fuse(const Tensor<S>& r, const Tensor<S>& d, const Tensor<S>& proj_w,
                            const Tensor<S>& proj_b, const Tensor<S>& cat_w,
                            const Tensor<S>& cat_b) {
    detail::check_fuse_inputs(r, d);
    int c = r.dim(1);
    if (proj_w.shape() != Shape{c, d.dim(1), 1, 1})
        throw ConfigError("depth_concat_fuse: proj weight is " + shape_str(proj_w.shape()));
    if (cat_w.shape() != Shape{c, 2 * c, 1, 1})
        throw ConfigError("depth_concat_fuse: cat weight is " + shape_str(cat_w.shape()));
    Tensor<S> proj = conv2d(d, proj_w, proj_b, 1, 0);
    Tensor<S> both = concat_channels<S>({r, proj});
    return conv2d(both, cat_w, cat_b, 1, 0);
}

}  // namespace dip
