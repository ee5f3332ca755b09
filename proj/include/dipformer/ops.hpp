#pragma once

// Differentiable ops over Tensor<S>. Forward passes credit MACs to the
// active OpScope; backward closures are pure compute. Hot loops are written
// stride-1-inner so -O3 can vectorize them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dipformer/opcount.hpp"
#include "dipformer/tensor.hpp"

namespace dip {

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw InternalError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    auto out = detail::make_out<S>(a.shape());
    const S* pa = a.value().data();
    const S* pb = b.value().data();
    S* po = out->value.data();
    for (size_t i = 0; i < out->value.size(); ++i) po[i] = pa[i] + pb[i];
    detail::attach(out, {a.node(), b.node()}, [an = a.node(), bn = b.node()](Node<S>* o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] += o->grad[i];
    });
    return Tensor<S>(out);
}

// x is [N,C,H,W]; p holds one sample's worth of values ([C,H,W] or
// [1,C,H,W]) and broadcasts over the batch.
template <typename S>
Tensor<S> add_broadcast(const Tensor<S>& x, const Tensor<S>& p) {
    size_t per = numel(p.shape());
    if (x.size() % per != 0)
        throw InternalError("add_broadcast: " + shape_str(p.shape()) + " does not tile " +
                            shape_str(x.shape()));
    size_t n = x.size() / per;
    auto out = detail::make_out<S>(x.shape());
    const S* px = x.value().data();
    const S* pp = p.value().data();
    S* po = out->value.data();
    for (size_t b = 0; b < n; ++b)
        for (size_t i = 0; i < per; ++i) po[b * per + i] = px[b * per + i] + pp[i];
    detail::attach(out, {x.node(), p.node()},
                   [xn = x.node(), pn = p.node(), n, per](Node<S>* o) {
                       if (xn->requires_grad)
                           for (size_t i = 0; i < o->grad.size(); ++i)
                               xn->grad[i] += o->grad[i];
                       if (pn->requires_grad)
                           for (size_t b = 0; b < n; ++b)
                               for (size_t i = 0; i < per; ++i)
                                   pn->grad[i] += o->grad[b * per + i];
                   });
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw InternalError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    auto out = detail::make_out<S>(a.shape());
    const S* pa = a.value().data();
    const S* pb = b.value().data();
    S* po = out->value.data();
    for (size_t i = 0; i < out->value.size(); ++i) po[i] = pa[i] * pb[i];
    detail::attach(out, {a.node(), b.node()}, [an = a.node(), bn = b.node()](Node<S>* o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o->grad.size(); ++i)
                an->grad[i] += o->grad[i] * bn->value[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < o->grad.size(); ++i)
                bn->grad[i] += o->grad[i] * an->value[i];
    });
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, double k) {
    auto out = detail::make_out<S>(x.shape());
    const S* px = x.value().data();
    S* po = out->value.data();
    const S sk = static_cast<S>(k);
    for (size_t i = 0; i < out->value.size(); ++i) po[i] = px[i] * sk;
    detail::attach(out, {x.node()}, [xn = x.node(), sk](Node<S>* o) {
        for (size_t i = 0; i < o->grad.size(); ++i) xn->grad[i] += o->grad[i] * sk;
    });
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    auto out = detail::make_out<S>(x.shape());
    const S* px = x.value().data();
    S* po = out->value.data();
    for (size_t i = 0; i < out->value.size(); ++i) po[i] = px[i] > S(0) ? px[i] : S(0);
    detail::attach(out, {x.node()}, [xn = x.node()](Node<S>* o) {
        for (size_t i = 0; i < o->grad.size(); ++i)
            if (xn->value[i] > S(0)) xn->grad[i] += o->grad[i];
    });
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, const Shape& shape) {
    if (numel(shape) != x.size())
        throw InternalError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                            " changes element count");
    auto out = detail::make_out<S>(shape);
    out->value = x.value();
    detail::attach(out, {x.node()}, [xn = x.node()](Node<S>* o) {
        for (size_t i = 0; i < o->grad.size(); ++i) xn->grad[i] += o->grad[i];
    });
    return Tensor<S>(out);
}

namespace detail {
inline std::vector<size_t> strides_of(const Shape& s) {
    std::vector<size_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * static_cast<size_t>(s[i + 1]);
    return st;
}
}  // namespace detail

// General axis permutation, materialized.
template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& perm) {
    const Shape& in = x.shape();
    if (perm.size() != in.size()) throw InternalError("permute: rank mismatch");
    Shape os(in.size());
    for (size_t i = 0; i < perm.size(); ++i) os[i] = in[static_cast<size_t>(perm[i])];
    auto out = detail::make_out<S>(os);
    auto in_st = detail::strides_of(in);
    auto out_st = detail::strides_of(os);
    size_t rank = in.size(), total = x.size();
    // map output linear index -> input linear index
    std::vector<size_t> map(total);
    std::vector<int> idx(rank, 0);
    for (size_t lin = 0; lin < total; ++lin) {
        size_t src = 0;
        for (size_t d = 0; d < rank; ++d)
            src += static_cast<size_t>(idx[d]) * in_st[static_cast<size_t>(perm[d])];
        map[lin] = src;
        for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
            if (++idx[d] < os[d]) break;
            idx[d] = 0;
        }
    }
    const S* px = x.value().data();
    S* po = out->value.data();
    for (size_t i = 0; i < total; ++i) po[i] = px[map[i]];
    detail::attach(out, {x.node()}, [xn = x.node(), map = std::move(map)](Node<S>* o) {
        // output element i was read from input map[i]
        for (size_t i = 0; i < o->grad.size(); ++i) xn->grad[map[i]] += o->grad[i];
    });
    return Tensor<S>(out);
}

// Concatenation along axis 1 of NCHW inputs that agree on N, H, W.
template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& xs) {
    if (xs.empty()) throw InternalError("concat_channels: no inputs");
    int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
    int c_total = 0;
    for (const auto& t : xs) {
        if (t.ndim() != 4 || t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
            throw InternalError("concat_channels: incompatible input " + shape_str(t.shape()));
        c_total += t.dim(1);
    }
    auto out = detail::make_out<S>({n, c_total, h, w});
    size_t plane = static_cast<size_t>(h) * w;
    size_t out_per = static_cast<size_t>(c_total) * plane;
    std::vector<std::shared_ptr<Node<S>>> nodes;
    size_t c_off = 0;
    for (const auto& t : xs) {
        size_t in_per = static_cast<size_t>(t.dim(1)) * plane;
        for (int b = 0; b < n; ++b)
            std::copy_n(t.value().data() + b * in_per, in_per,
                        out->value.data() + b * out_per + c_off * plane);
        c_off += static_cast<size_t>(t.dim(1));
        nodes.push_back(t.node());
    }
    detail::attach(out, nodes, [nodes, n, plane, out_per](Node<S>* o) {
        size_t off = 0;
        for (const auto& xn : nodes) {
            size_t in_per = xn->value.size() / static_cast<size_t>(n);
            if (xn->requires_grad)
                for (int b = 0; b < n; ++b) {
                    const S* g = o->grad.data() + b * out_per + off * plane;
                    S* dst = xn->grad.data() + b * in_per;
                    for (size_t i = 0; i < in_per; ++i) dst[i] += g[i];
                }
            off += in_per / plane;
        }
    });
    return Tensor<S>(out);
}

// x [*, in] times w [out, in] transposed, plus optional bias [out]. Applied
// over the last axis; leading axes flatten to rows.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    int in = x.dim(x.ndim() - 1);
    if (w.ndim() != 2 || w.dim(1) != in)
        throw InternalError("linear: weight " + shape_str(w.shape()) + " vs input " +
                            shape_str(x.shape()));
    int outf = w.dim(0);
    size_t rows = x.size() / static_cast<size_t>(in);
    Shape os = x.shape();
    os.back() = outf;
    auto out = detail::make_out<S>(os);
    const S* px = x.value().data();
    const S* pw = w.value().data();
    const S* pb = b.defined() ? b.value().data() : nullptr;
    S* po = out->value.data();
    for (size_t r = 0; r < rows; ++r) {
        const S* xr = px + r * in;
        S* yr = po + r * outf;
        for (int o = 0; o < outf; ++o) {
            const S* wr = pw + static_cast<size_t>(o) * in;
            S acc = pb ? pb[o] : S(0);
            for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    }
    OpCounter::instance().add_macs(rows * static_cast<uint64_t>(in) * outf);
    detail::attach(out, {x.node(), w.node(), b.node()},
                   [xn = x.node(), wn = w.node(), bn = b.node(), rows, in, outf](Node<S>* o) {
                       const S* gy = o->grad.data();
                       if (bn && bn->requires_grad)
                           for (size_t r = 0; r < rows; ++r)
                               for (int j = 0; j < outf; ++j)
                                   bn->grad[j] += gy[r * outf + j];
                       if (xn->requires_grad)
                           for (size_t r = 0; r < rows; ++r) {
                               S* gx = xn->grad.data() + r * in;
                               const S* gr = gy + r * outf;
                               for (int j = 0; j < outf; ++j) {
                                   const S g = gr[j];
                                   const S* wr = wn->value.data() + static_cast<size_t>(j) * in;
                                   for (int i = 0; i < in; ++i) gx[i] += g * wr[i];
                               }
                           }
                       if (wn->requires_grad)
                           for (size_t r = 0; r < rows; ++r) {
                               const S* xr = xn->value.data() + r * in;
                               const S* gr = gy + r * outf;
                               for (int j = 0; j < outf; ++j) {
                                   const S g = gr[j];
                                   S* gw = wn->grad.data() + static_cast<size_t>(j) * in;
                                   for (int i = 0; i < in; ++i) gw[i] += g * xr[i];
                               }
                           }
                   });
    return Tensor<S>(out);
}

// x [N,Cin,H,W], w [Cout,Cin,kh,kw], optional bias [Cout]. Zero padding.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 int stride, int pad) {
    if (x.ndim() != 4 || w.ndim() != 4 || x.dim(1) != w.dim(1))
        throw InternalError("conv2d: " + shape_str(x.shape()) + " with " + shape_str(w.shape()));
    int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw InternalError("conv2d: empty output");
    auto out = detail::make_out<S>({n, cout, ho, wo});

    const S* px = x.value().data();
    const S* pw = w.value().data();
    S* po = out->value.data();
    size_t in_plane = static_cast<size_t>(h) * wd;
    size_t out_plane = static_cast<size_t>(ho) * wo;

    for (int bi = 0; bi < n; ++bi)
        for (int oc = 0; oc < cout; ++oc) {
            S* yp = po + (static_cast<size_t>(bi) * cout + oc) * out_plane;
            const S bias = b.defined() ? b.value()[oc] : S(0);
            for (size_t i = 0; i < out_plane; ++i) yp[i] = bias;
            for (int ic = 0; ic < cin; ++ic) {
                const S* xp = px + (static_cast<size_t>(bi) * cin + ic) * in_plane;
                const S* wp = pw + (static_cast<size_t>(oc) * cin + ic) * kh * kw;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const S wv = wp[ky * kw + kx];
                        if (stride == 1) {
                            int oy0 = std::max(0, pad - ky);
                            int oy1 = std::min(ho, h + pad - ky);
                            int ox0 = std::max(0, pad - kx);
                            int ox1 = std::min(wo, wd + pad - kx);
                            for (int oy = oy0; oy < oy1; ++oy) {
                                S* yr = yp + static_cast<size_t>(oy) * wo;
                                const S* xr = xp + static_cast<size_t>(oy - pad + ky) * wd +
                                              (ox0 - pad + kx);
                                for (int ox = ox0; ox < ox1; ++ox)
                                    yr[ox] += wv * xr[ox - ox0];
                            }
                        } else {
                            for (int oy = 0; oy < ho; ++oy) {
                                int iy = oy * stride - pad + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (int ox = 0; ox < wo; ++ox) {
                                    int ix = ox * stride - pad + kx;
                                    if (ix < 0 || ix >= wd) continue;
                                    yp[static_cast<size_t>(oy) * wo + ox] +=
                                        wv * xp[static_cast<size_t>(iy) * wd + ix];
                                }
                            }
                        }
                    }
            }
        }
    OpCounter::instance().add_macs(static_cast<uint64_t>(n) * cout * out_plane * cin * kh * kw);

    detail::attach(out, {x.node(), w.node(), b.node()},
                   [xn = x.node(), wn = w.node(), bn = b.node(), n, cin, h, wd, cout, kh, kw,
                    ho, wo, stride, pad, in_plane, out_plane](Node<S>* o) {
                       const S* gy = o->grad.data();
                       if (bn && bn->requires_grad)
                           for (int bi = 0; bi < n; ++bi)
                               for (int oc = 0; oc < cout; ++oc) {
                                   const S* gp = gy + (static_cast<size_t>(bi) * cout + oc) * out_plane;
                                   Acc s = 0;
                                   for (size_t i = 0; i < out_plane; ++i) s += gp[i];
                                   bn->grad[oc] += static_cast<S>(s);
                               }
                       for (int bi = 0; bi < n; ++bi)
                           for (int oc = 0; oc < cout; ++oc) {
                               const S* gp = gy + (static_cast<size_t>(bi) * cout + oc) * out_plane;
                               for (int ic = 0; ic < cin; ++ic) {
                                   const S* xp = xn->value.data() +
                                                 (static_cast<size_t>(bi) * cin + ic) * in_plane;
                                   S* gxp = xn->requires_grad
                                                ? xn->grad.data() +
                                                      (static_cast<size_t>(bi) * cin + ic) * in_plane
                                                : nullptr;
                                   const S* wp = wn->value.data() +
                                                 (static_cast<size_t>(oc) * cin + ic) * kh * kw;
                                   S* gwp = wn->requires_grad
                                                ? wn->grad.data() +
                                                      (static_cast<size_t>(oc) * cin + ic) * kh * kw
                                                : nullptr;
                                   for (int ky = 0; ky < kh; ++ky)
                                       for (int kx = 0; kx < kw; ++kx) {
                                           const S wv = wp[ky * kw + kx];
                                           S gw_acc = S(0);
                                           if (stride == 1) {
                                               int oy0 = std::max(0, pad - ky);
                                               int oy1 = std::min(ho, h + pad - ky);
                                               int ox0 = std::max(0, pad - kx);
                                               int ox1 = std::min(wo, wd + pad - kx);
                                               for (int oy = oy0; oy < oy1; ++oy) {
                                                   const S* gr = gp + static_cast<size_t>(oy) * wo;
                                                   size_t xoff =
                                                       static_cast<size_t>(oy - pad + ky) * wd +
                                                       (ox0 - pad + kx);
                                                   if (gxp) {
                                                       S* gxr = gxp + xoff;
                                                       for (int ox = ox0; ox < ox1; ++ox)
                                                           gxr[ox - ox0] += wv * gr[ox];
                                                   }
                                                   if (gwp) {
                                                       const S* xr = xn->value.data() +
                                                                     (static_cast<size_t>(bi) * cin + ic) *
                                                                         in_plane +
                                                                     xoff;
                                                       for (int ox = ox0; ox < ox1; ++ox)
                                                           gw_acc += gr[ox] * xr[ox - ox0];
                                                   }
                                               }
                                           } else {
                                               for (int oy = 0; oy < ho; ++oy) {
                                                   int iy = oy * stride - pad + ky;
                                                   if (iy < 0 || iy >= h) continue;
                                                   for (int ox = 0; ox < wo; ++ox) {
                                                       int ix = ox * stride - pad + kx;
                                                       if (ix < 0 || ix >= wd) continue;
                                                       const S g = gp[static_cast<size_t>(oy) * wo + ox];
                                                       if (gxp)
                                                           gxp[static_cast<size_t>(iy) * wd + ix] += wv * g;
                                                       if (gwp)
                                                           gw_acc += g * xp[static_cast<size_t>(iy) * wd + ix];
                                                   }
                                               }
                                           }
                                           if (gwp) gwp[ky * kw + kx] += gw_acc;
                                       }
                               }
                           }
                   });
    return Tensor<S>(out);
}

// Per-channel 3x3, stride 1, pad 1. w is [C,3,3], optional bias [C].
template <typename S>
Tensor<S> depthwise_conv3x3(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    if (x.ndim() != 4 || w.ndim() != 3 || w.dim(0) != x.dim(1) || w.dim(1) != 3 || w.dim(2) != 3)
        throw InternalError("depthwise_conv3x3: " + shape_str(x.shape()) + " with " +
                            shape_str(w.shape()));
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    auto out = detail::make_out<S>(x.shape());
    size_t plane = static_cast<size_t>(h) * wd;
    const S* px = x.value().data();
    const S* pw = w.value().data();
    S* po = out->value.data();
    for (int bi = 0; bi < n; ++bi)
        for (int ch = 0; ch < c; ++ch) {
            const S* xp = px + (static_cast<size_t>(bi) * c + ch) * plane;
            S* yp = po + (static_cast<size_t>(bi) * c + ch) * plane;
            const S* wp = pw + static_cast<size_t>(ch) * 9;
            const S bias = b.defined() ? b.value()[ch] : S(0);
            for (size_t i = 0; i < plane; ++i) yp[i] = bias;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const S wv = wp[ky * 3 + kx];
                    int oy0 = std::max(0, 1 - ky), oy1 = std::min(h, h + 1 - ky);
                    int ox0 = std::max(0, 1 - kx), ox1 = std::min(wd, wd + 1 - kx);
                    for (int oy = oy0; oy < oy1; ++oy) {
                        S* yr = yp + static_cast<size_t>(oy) * wd;
                        const S* xr = xp + static_cast<size_t>(oy - 1 + ky) * wd + (ox0 - 1 + kx);
                        for (int ox = ox0; ox < ox1; ++ox) yr[ox] += wv * xr[ox - ox0];
                    }
                }
        }
    OpCounter::instance().add_macs(static_cast<uint64_t>(n) * c * plane * 9);
    detail::attach(out, {x.node(), w.node(), b.node()},
                   [xn = x.node(), wn = w.node(), bn = b.node(), n, c, h, wd, plane](Node<S>* o) {
                       const S* gy = o->grad.data();
                       for (int bi = 0; bi < n; ++bi)
                           for (int ch = 0; ch < c; ++ch) {
                               const S* gp = gy + (static_cast<size_t>(bi) * c + ch) * plane;
                               const S* xp = xn->value.data() +
                                             (static_cast<size_t>(bi) * c + ch) * plane;
                               S* gxp = xn->requires_grad
                                            ? xn->grad.data() + (static_cast<size_t>(bi) * c + ch) * plane
                                            : nullptr;
                               const S* wp = wn->value.data() + static_cast<size_t>(ch) * 9;
                               S* gwp = wn->requires_grad
                                            ? wn->grad.data() + static_cast<size_t>(ch) * 9
                                            : nullptr;
                               if (bn && bn->requires_grad) {
                                   Acc s = 0;
                                   for (size_t i = 0; i < plane; ++i) s += gp[i];
                                   bn->grad[ch] += static_cast<S>(s);
                               }
                               for (int ky = 0; ky < 3; ++ky)
                                   for (int kx = 0; kx < 3; ++kx) {
                                       const S wv = wp[ky * 3 + kx];
                                       S gw_acc = S(0);
                                       int oy0 = std::max(0, 1 - ky), oy1 = std::min(h, h + 1 - ky);
                                       int ox0 = std::max(0, 1 - kx), ox1 = std::min(wd, wd + 1 - kx);
                                       for (int oy = oy0; oy < oy1; ++oy) {
                                           const S* gr = gp + static_cast<size_t>(oy) * wd;
                                           size_t xoff = static_cast<size_t>(oy - 1 + ky) * wd +
                                                         (ox0 - 1 + kx);
                                           if (gxp) {
                                               S* gxr = gxp + xoff;
                                               for (int ox = ox0; ox < ox1; ++ox)
                                                   gxr[ox - ox0] += wv * gr[ox];
                                           }
                                           if (gwp) {
                                               const S* xr = xp + xoff;
                                               for (int ox = ox0; ox < ox1; ++ox)
                                                   gw_acc += gr[ox] * xr[ox - ox0];
                                           }
                                       }
                                       if (gwp) gwp[ky * 3 + kx] += gw_acc;
                                   }
                           }
                   });
    return Tensor<S>(out);
}

// Normalizes each (sample, group) slab with biased variance; affine per
// channel. Statistics accumulate in double in both precision modes.
template <typename S>
Tensor<S> group_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     int groups, double eps = 1e-5) {
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c % groups != 0) throw InternalError("group_norm: channels not divisible by groups");
    int cpg = c / groups;
    size_t plane = static_cast<size_t>(h) * w;
    size_t slab = static_cast<size_t>(cpg) * plane;
    auto out = detail::make_out<S>(x.shape());
    std::vector<Acc> means(static_cast<size_t>(n) * groups), invs(static_cast<size_t>(n) * groups);
    const S* px = x.value().data();
    S* po = out->value.data();
    for (int bi = 0; bi < n; ++bi)
        for (int g = 0; g < groups; ++g) {
            const S* xp = px + (static_cast<size_t>(bi) * c + static_cast<size_t>(g) * cpg) * plane;
            Acc mean = 0;
            for (size_t i = 0; i < slab; ++i) mean += xp[i];
            mean /= static_cast<Acc>(slab);
            Acc var = 0;
            for (size_t i = 0; i < slab; ++i) {
                Acc d = xp[i] - mean;
                var += d * d;
            }
            var /= static_cast<Acc>(slab);
            Acc inv = 1.0 / std::sqrt(var + eps);
            means[static_cast<size_t>(bi) * groups + g] = mean;
            invs[static_cast<size_t>(bi) * groups + g] = inv;
            S* yp = po + (static_cast<size_t>(bi) * c + static_cast<size_t>(g) * cpg) * plane;
            for (int cc = 0; cc < cpg; ++cc) {
                int ch = g * cpg + cc;
                const S ga = gamma.value()[ch], be = beta.value()[ch];
                for (size_t i = 0; i < plane; ++i) {
                    size_t idx = static_cast<size_t>(cc) * plane + i;
                    yp[idx] = static_cast<S>((xp[idx] - mean) * inv) * ga + be;
                }
            }
        }
    OpCounter::instance().add_macs(2 * static_cast<uint64_t>(x.size()));
    detail::attach(
        out, {x.node(), gamma.node(), beta.node()},
        [xn = x.node(), gn = gamma.node(), bn = beta.node(), n, c, groups, cpg, plane, slab,
         means = std::move(means), invs = std::move(invs)](Node<S>* o) {
            const S* gy = o->grad.data();
            for (int bi = 0; bi < n; ++bi)
                for (int g = 0; g < groups; ++g) {
                    size_t base = (static_cast<size_t>(bi) * c + static_cast<size_t>(g) * cpg) * plane;
                    const Acc mean = means[static_cast<size_t>(bi) * groups + g];
                    const Acc inv = invs[static_cast<size_t>(bi) * groups + g];
                    // dL/dxhat = gy * gamma; accumulate the two slab means.
                    Acc sum_d = 0, sum_dx = 0;
                    for (int cc = 0; cc < cpg; ++cc) {
                        int ch = g * cpg + cc;
                        const Acc ga = gn->value[ch];
                        const S* gr = gy + base + static_cast<size_t>(cc) * plane;
                        const S* xr = xn->value.data() + base + static_cast<size_t>(cc) * plane;
                        for (size_t i = 0; i < plane; ++i) {
                            Acc d = gr[i] * ga;
                            sum_d += d;
                            sum_dx += d * (xr[i] - mean) * inv;
                        }
                    }
                    const Acc m1 = sum_d / static_cast<Acc>(slab);
                    const Acc m2 = sum_dx / static_cast<Acc>(slab);
                    for (int cc = 0; cc < cpg; ++cc) {
                        int ch = g * cpg + cc;
                        const Acc ga = gn->value[ch];
                        const S* gr = gy + base + static_cast<size_t>(cc) * plane;
                        const S* xr = xn->value.data() + base + static_cast<size_t>(cc) * plane;
                        if (gn->requires_grad || bn->requires_grad) {
                            Acc sg = 0, sb = 0;
                            for (size_t i = 0; i < plane; ++i) {
                                Acc xhat = (xr[i] - mean) * inv;
                                sg += gr[i] * xhat;
                                sb += gr[i];
                            }
                            if (gn->requires_grad) gn->grad[ch] += static_cast<S>(sg);
                            if (bn->requires_grad) bn->grad[ch] += static_cast<S>(sb);
                        }
                        if (xn->requires_grad) {
                            S* gx = xn->grad.data() + base + static_cast<size_t>(cc) * plane;
                            for (size_t i = 0; i < plane; ++i) {
                                Acc xhat = (xr[i] - mean) * inv;
                                Acc d = gr[i] * ga;
                                gx[i] += static_cast<S>(inv * (d - m1 - xhat * m2));
                            }
                        }
                    }
                }
        });
    return Tensor<S>(out);
}

// Max pooling; ties resolve to the first occurrence in row-major window scan
// order, which fixes where the gradient lands.
template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, int k, int stride) {
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
    if (ho <= 0 || wo <= 0) throw InternalError("max_pool2d: empty output");
    auto out = detail::make_out<S>({n, c, ho, wo});
    std::vector<uint32_t> arg(out->value.size());
    const S* px = x.value().data();
    S* po = out->value.data();
    size_t plane = static_cast<size_t>(h) * w;
    size_t oplane = static_cast<size_t>(ho) * wo;
    for (int bi = 0; bi < n; ++bi)
        for (int ch = 0; ch < c; ++ch) {
            const S* xp = px + (static_cast<size_t>(bi) * c + ch) * plane;
            S* yp = po + (static_cast<size_t>(bi) * c + ch) * oplane;
            uint32_t* ap = arg.data() + (static_cast<size_t>(bi) * c + ch) * oplane;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    S best{};
                    uint32_t bidx = 0;
                    bool first = true;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            uint32_t idx = static_cast<uint32_t>((oy * stride + ky) * w +
                                                                 ox * stride + kx);
                            S v = xp[idx];
                            if (first || v > best) {
                                best = v;
                                bidx = idx;
                                first = false;
                            }
                        }
                    yp[static_cast<size_t>(oy) * wo + ox] = best;
                    ap[static_cast<size_t>(oy) * wo + ox] = bidx;
                }
        }
    detail::attach(out, {x.node()},
                   [xn = x.node(), arg = std::move(arg), plane, oplane, n, c](Node<S>* o) {
                       for (size_t pc = 0; pc < static_cast<size_t>(n) * c; ++pc) {
                           S* gx = xn->grad.data() + pc * plane;
                           const S* gy = o->grad.data() + pc * oplane;
                           const uint32_t* ap = arg.data() + pc * oplane;
                           for (size_t i = 0; i < oplane; ++i) gx[ap[i]] += gy[i];
                       }
                   });
    return Tensor<S>(out);
}

// Output bin (i,j) averages rows [floor(iH/P), ceil((i+1)H/P)) and the
// matching column range.
template <typename S>
Tensor<S> adaptive_avg_pool2d(const Tensor<S>& x, int ph, int pw) {
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (ph <= 0 || pw <= 0 || ph > h || pw > w)
        throw InternalError("adaptive_avg_pool2d: bad target " + std::to_string(ph) + "x" +
                            std::to_string(pw) + " from " + shape_str(x.shape()));
    auto out = detail::make_out<S>({n, c, ph, pw});
    size_t plane = static_cast<size_t>(h) * w;
    size_t oplane = static_cast<size_t>(ph) * pw;
    const S* px = x.value().data();
    S* po = out->value.data();
    uint64_t adds = 0;
    for (int oy = 0; oy < ph; ++oy)
        for (int ox = 0; ox < pw; ++ox) {
            int y0 = (oy * h) / ph, y1 = ((oy + 1) * h + ph - 1) / ph;
            int x0 = (ox * w) / pw, x1 = ((ox + 1) * w + pw - 1) / pw;
            adds += static_cast<uint64_t>(y1 - y0) * (x1 - x0);
        }
    OpCounter::instance().add_macs(adds * static_cast<uint64_t>(n) * c);
    for (size_t pc = 0; pc < static_cast<size_t>(n) * c; ++pc) {
        const S* xp = px + pc * plane;
        S* yp = po + pc * oplane;
        for (int oy = 0; oy < ph; ++oy)
            for (int ox = 0; ox < pw; ++ox) {
                int y0 = (oy * h) / ph, y1 = ((oy + 1) * h + ph - 1) / ph;
                int x0 = (ox * w) / pw, x1 = ((ox + 1) * w + pw - 1) / pw;
                Acc acc = 0;
                for (int iy = y0; iy < y1; ++iy)
                    for (int ix = x0; ix < x1; ++ix)
                        acc += xp[static_cast<size_t>(iy) * w + ix];
                yp[static_cast<size_t>(oy) * pw + ox] =
                    static_cast<S>(acc / ((y1 - y0) * (x1 - x0)));
            }
    }
    detail::attach(out, {x.node()}, [xn = x.node(), n, c, h, w, ph, pw, plane, oplane](Node<S>* o) {
        for (size_t pc = 0; pc < static_cast<size_t>(n) * c; ++pc) {
            S* gx = xn->grad.data() + pc * plane;
            const S* gy = o->grad.data() + pc * oplane;
            for (int oy = 0; oy < ph; ++oy)
                for (int ox = 0; ox < pw; ++ox) {
                    int y0 = (oy * h) / ph, y1 = ((oy + 1) * h + ph - 1) / ph;
                    int x0 = (ox * w) / pw, x1 = ((ox + 1) * w + pw - 1) / pw;
                    const S g = gy[static_cast<size_t>(oy) * pw + ox] /
                                static_cast<S>((y1 - y0) * (x1 - x0));
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix)
                            gx[static_cast<size_t>(iy) * w + ix] += g;
                }
        }
    });
    return Tensor<S>(out);
}

// Max-subtracted softmax over the last axis.
template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
    int cols = x.dim(x.ndim() - 1);
    size_t rows = x.size() / static_cast<size_t>(cols);
    auto out = detail::make_out<S>(x.shape());
    const S* px = x.value().data();
    S* po = out->value.data();
    for (size_t r = 0; r < rows; ++r) {
        const S* xr = px + r * cols;
        S* yr = po + r * cols;
        S m = xr[0];
        for (int i = 1; i < cols; ++i) m = std::max(m, xr[i]);
        Acc z = 0;
        for (int i = 0; i < cols; ++i) z += std::exp(static_cast<Acc>(xr[i] - m));
        for (int i = 0; i < cols; ++i)
            yr[i] = static_cast<S>(std::exp(static_cast<Acc>(xr[i] - m)) / z);
    }
    detail::attach(out, {x.node()}, [xn = x.node(), rows, cols](Node<S>* o) {
        for (size_t r = 0; r < rows; ++r) {
            const S* y = o->value.data() + r * cols;
            const S* gy = o->grad.data() + r * cols;
            S* gx = xn->grad.data() + r * cols;
            Acc dot = 0;
            for (int i = 0; i < cols; ++i) dot += static_cast<Acc>(gy[i]) * y[i];
            for (int i = 0; i < cols; ++i)
                gx[i] += static_cast<S>(y[i] * (gy[i] - dot));
        }
    });
    return Tensor<S>(out);
}

// align_corners=false resampling with edge clamping; same-size calls
// reproduce the input exactly because the source coordinate lands on the
// pixel center with zero fraction.
template <typename S>
Tensor<S> bilinear_resize(const Tensor<S>& x, int ho, int wo) {
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    auto out = detail::make_out<S>({n, c, ho, wo});
    size_t plane = static_cast<size_t>(h) * w;
    size_t oplane = static_cast<size_t>(ho) * wo;
    // 4 taps per output cell, shared by every (n, c) plane.
    struct Tap {
        int y0, x0;
        Acc fy, fx;
    };
    std::vector<Tap> taps(oplane);
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
            Acc sy = (oy + 0.5) * static_cast<Acc>(h) / ho - 0.5;
            Acc sx = (ox + 0.5) * static_cast<Acc>(w) / wo - 0.5;
            Acc fy0 = std::floor(sy), fx0 = std::floor(sx);
            taps[static_cast<size_t>(oy) * wo + ox] = {static_cast<int>(fy0),
                                                       static_cast<int>(fx0), sy - fy0, sx - fx0};
        }
    auto clamp_idx = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    const S* px = x.value().data();
    S* po = out->value.data();
    for (size_t pc = 0; pc < static_cast<size_t>(n) * c; ++pc) {
        const S* xp = px + pc * plane;
        S* yp = po + pc * oplane;
        for (size_t i = 0; i < oplane; ++i) {
            const Tap& t = taps[i];
            int y0 = clamp_idx(t.y0, h), y1 = clamp_idx(t.y0 + 1, h);
            int x0 = clamp_idx(t.x0, w), x1 = clamp_idx(t.x0 + 1, w);
            Acc v = xp[static_cast<size_t>(y0) * w + x0] * (1 - t.fy) * (1 - t.fx) +
                    xp[static_cast<size_t>(y0) * w + x1] * (1 - t.fy) * t.fx +
                    xp[static_cast<size_t>(y1) * w + x0] * t.fy * (1 - t.fx) +
                    xp[static_cast<size_t>(y1) * w + x1] * t.fy * t.fx;
            yp[i] = static_cast<S>(v);
        }
    }
    OpCounter::instance().add_macs(4 * static_cast<uint64_t>(n) * c * oplane);
    detail::attach(out, {x.node()},
                   [xn = x.node(), taps = std::move(taps), n, c, h, w, plane, oplane,
                    clamp_idx](Node<S>* o) {
                       for (size_t pc = 0; pc < static_cast<size_t>(n) * c; ++pc) {
                           S* gx = xn->grad.data() + pc * plane;
                           const S* gy = o->grad.data() + pc * oplane;
                           for (size_t i = 0; i < oplane; ++i) {
                               const auto& t = taps[i];
                               int y0 = clamp_idx(t.y0, h), y1 = clamp_idx(t.y0 + 1, h);
                               int x0 = clamp_idx(t.x0, w), x1 = clamp_idx(t.x0 + 1, w);
                               const Acc g = gy[i];
                               gx[static_cast<size_t>(y0) * w + x0] +=
                                   static_cast<S>(g * (1 - t.fy) * (1 - t.fx));
                               gx[static_cast<size_t>(y0) * w + x1] +=
                                   static_cast<S>(g * (1 - t.fy) * t.fx);
                               gx[static_cast<size_t>(y1) * w + x0] +=
                                   static_cast<S>(g * t.fy * (1 - t.fx));
                               gx[static_cast<size_t>(y1) * w + x1] +=
                                   static_cast<S>(g * t.fy * t.fx);
                           }
                       }
                   });
    return Tensor<S>(out);
}

// a [B,M,K] times b [B,K,N].
template <typename S>
Tensor<S> bmm_nn(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw InternalError("bmm_nn: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    auto out = detail::make_out<S>({bs, m, n});
    const S* pa = a.value().data();
    const S* pb = b.value().data();
    S* po = out->value.data();
    std::fill(out->value.begin(), out->value.end(), S(0));
    for (int bi = 0; bi < bs; ++bi) {
        const S* A = pa + static_cast<size_t>(bi) * m * k;
        const S* B = pb + static_cast<size_t>(bi) * k * n;
        S* Y = po + static_cast<size_t>(bi) * m * n;
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                const S av = A[static_cast<size_t>(i) * k + p];
                const S* br = B + static_cast<size_t>(p) * n;
                S* yr = Y + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) yr[j] += av * br[j];
            }
    }
    OpCounter::instance().add_macs(static_cast<uint64_t>(bs) * m * k * n);
    detail::attach(out, {a.node(), b.node()},
                   [an = a.node(), bn = b.node(), bs, m, k, n](Node<S>* o) {
                       for (int bi = 0; bi < bs; ++bi) {
                           const S* A = an->value.data() + static_cast<size_t>(bi) * m * k;
                           const S* B = bn->value.data() + static_cast<size_t>(bi) * k * n;
                           const S* G = o->grad.data() + static_cast<size_t>(bi) * m * n;
                           if (an->requires_grad) {
                               S* GA = an->grad.data() + static_cast<size_t>(bi) * m * k;
                               for (int i = 0; i < m; ++i)
                                   for (int p = 0; p < k; ++p) {
                                       const S* gr = G + static_cast<size_t>(i) * n;
                                       const S* br = B + static_cast<size_t>(p) * n;
                                       S acc = S(0);
                                       for (int j = 0; j < n; ++j) acc += gr[j] * br[j];
                                       GA[static_cast<size_t>(i) * k + p] += acc;
                                   }
                           }
                           if (bn->requires_grad) {
                               S* GB = bn->grad.data() + static_cast<size_t>(bi) * k * n;
                               for (int i = 0; i < m; ++i)
                                   for (int p = 0; p < k; ++p) {
                                       const S av = A[static_cast<size_t>(i) * k + p];
                                       const S* gr = G + static_cast<size_t>(i) * n;
                                       S* gb = GB + static_cast<size_t>(p) * n;
                                       for (int j = 0; j < n; ++j) gb[j] += av * gr[j];
                                   }
                           }
                       }
                   });
    return Tensor<S>(out);
}

// a [B,M,K] times b [B,N,K] transposed on the right: rows dot rows.
template <typename S>
Tensor<S> bmm_nt(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
        throw InternalError("bmm_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    auto out = detail::make_out<S>({bs, m, n});
    const S* pa = a.value().data();
    const S* pb = b.value().data();
    S* po = out->value.data();
    for (int bi = 0; bi < bs; ++bi) {
        const S* A = pa + static_cast<size_t>(bi) * m * k;
        const S* B = pb + static_cast<size_t>(bi) * n * k;
        S* Y = po + static_cast<size_t>(bi) * m * n;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const S* ar = A + static_cast<size_t>(i) * k;
                const S* br = B + static_cast<size_t>(j) * k;
                S acc = S(0);
                for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
                Y[static_cast<size_t>(i) * n + j] = acc;
            }
    }
    OpCounter::instance().add_macs(static_cast<uint64_t>(bs) * m * k * n);
    detail::attach(out, {a.node(), b.node()},
                   [an = a.node(), bn = b.node(), bs, m, k, n](Node<S>* o) {
                       for (int bi = 0; bi < bs; ++bi) {
                           const S* A = an->value.data() + static_cast<size_t>(bi) * m * k;
                           const S* B = bn->value.data() + static_cast<size_t>(bi) * n * k;
                           const S* G = o->grad.data() + static_cast<size_t>(bi) * m * n;
                           if (an->requires_grad) {
                               S* GA = an->grad.data() + static_cast<size_t>(bi) * m * k;
                               for (int i = 0; i < m; ++i)
                                   for (int j = 0; j < n; ++j) {
                                       const S g = G[static_cast<size_t>(i) * n + j];
                                       const S* br = B + static_cast<size_t>(j) * k;
                                       S* ga = GA + static_cast<size_t>(i) * k;
                                       for (int p = 0; p < k; ++p) ga[p] += g * br[p];
                                   }
                           }
                           if (bn->requires_grad) {
                               S* GB = bn->grad.data() + static_cast<size_t>(bi) * n * k;
                               for (int i = 0; i < m; ++i)
                                   for (int j = 0; j < n; ++j) {
                                       const S g = G[static_cast<size_t>(i) * n + j];
                                       const S* ar = A + static_cast<size_t>(i) * k;
                                       S* gb = GB + static_cast<size_t>(j) * k;
                                       for (int p = 0; p < k; ++p) gb[p] += g * ar[p];
                                   }
                           }
                       }
                   });
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    auto out = detail::make_out<S>({1});
    Acc acc = 0;
    for (S v : x.value()) acc += v;
    out->value[0] = static_cast<S>(acc);
    detail::attach(out, {x.node()}, [xn = x.node()](Node<S>* o) {
        const S g = o->grad[0];
        for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    });
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
    return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// Fused softmax cross-entropy over NCHW logits with integer labels [N,H,W].
// Pixels labeled `ignore` contribute nothing; loss is the mean over the rest.
// Backward is (softmax - onehot) / valid_count.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels, int ignore) {
    int n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    size_t hw = static_cast<size_t>(h) * w;
    if (labels.size() != static_cast<size_t>(n) * hw)
        throw InternalError("cross_entropy: label count mismatch");
    auto out = detail::make_out<S>({1});
    // Probabilities are kept for the backward pass.
    std::vector<S> probs(logits.size());
    const S* pl = logits.value().data();
    Acc total = 0;
    long count = 0;
    for (int bi = 0; bi < n; ++bi)
        for (size_t i = 0; i < hw; ++i) {
            size_t base = static_cast<size_t>(bi) * k * hw + i;
            Acc m = pl[base];
            for (int cc = 1; cc < k; ++cc) m = std::max(m, static_cast<Acc>(pl[base + cc * hw]));
            Acc z = 0;
            for (int cc = 0; cc < k; ++cc) z += std::exp(pl[base + cc * hw] - m);
            for (int cc = 0; cc < k; ++cc)
                probs[base + cc * hw] = static_cast<S>(std::exp(pl[base + cc * hw] - m) / z);
            int lab = labels[static_cast<size_t>(bi) * hw + i];
            if (lab == ignore) continue;
            if (lab < 0 || lab >= k)
                throw ConfigError("cross_entropy: label " + std::to_string(lab) +
                                  " outside [0," + std::to_string(k) + ")");
            total -= pl[base + static_cast<size_t>(lab) * hw] - m - std::log(z);
            ++count;
        }
    out->value[0] = count ? static_cast<S>(total / count) : S(0);
    detail::attach(out, {logits.node()},
                   [ln = logits.node(), probs = std::move(probs), labels, ignore, n, k, hw,
                    count](Node<S>* o) {
                       if (!count) return;
                       const S g = o->grad[0] / static_cast<S>(count);
                       for (int bi = 0; bi < n; ++bi)
                           for (size_t i = 0; i < hw; ++i) {
                               int lab = labels[static_cast<size_t>(bi) * hw + i];
                               if (lab == ignore) continue;
                               size_t base = static_cast<size_t>(bi) * k * hw + i;
                               for (int cc = 0; cc < k; ++cc) {
                                   S p = probs[base + static_cast<size_t>(cc) * hw];
                                   ln->grad[base + static_cast<size_t>(cc) * hw] +=
                                       g * (p - (cc == lab ? S(1) : S(0)));
                               }
                           }
                   });
    return Tensor<S>(out);
}

// Plain argmax over the channel axis; ties pick the lowest class index.
template <typename S>
std::vector<int> argmax_channels(const Tensor<S>& logits) {
    int n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    size_t hw = static_cast<size_t>(h) * w;
    std::vector<int> pred(static_cast<size_t>(n) * hw);
    const S* pl = logits.value().data();
    for (int bi = 0; bi < n; ++bi)
        for (size_t i = 0; i < hw; ++i) {
            size_t base = static_cast<size_t>(bi) * k * hw + i;
            int best = 0;
            S bv = pl[base];
            for (int cc = 1; cc < k; ++cc) {
                S v = pl[base + static_cast<size_t>(cc) * hw];
                if (v > bv) {
                    bv = v;
                    best = cc;
                }
            }
            pred[static_cast<size_t>(bi) * hw + i] = best;
        }
    return pred;
}

// Per-pixel softmax probability of one class, for binary scoring.
template <typename S>
std::vector<double> class_prob(const Tensor<S>& logits, int cls) {
    int n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    size_t hw = static_cast<size_t>(h) * w;
    std::vector<double> prob(static_cast<size_t>(n) * hw);
    const S* pl = logits.value().data();
    for (int bi = 0; bi < n; ++bi)
        for (size_t i = 0; i < hw; ++i) {
            size_t base = static_cast<size_t>(bi) * k * hw + i;
            Acc m = pl[base];
            for (int cc = 1; cc < k; ++cc) m = std::max(m, static_cast<Acc>(pl[base + cc * hw]));
            Acc z = 0;
            for (int cc = 0; cc < k; ++cc) z += std::exp(pl[base + cc * hw] - m);
            prob[static_cast<size_t>(bi) * hw + i] =
                std::exp(pl[base + static_cast<size_t>(cls) * hw] - m) / z;
        }
    return prob;
}

}  // namespace dip
