#pragma once

// Independent loop references the engine is tested against. Everything here
// is deliberately naive: plain double loops, no shared code with the library.
// If a test disagrees with these, the engine is wrong until proven otherwise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline int conv_out(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// NCHW * [Cout,Cin,kh,kw] + [Cout], zero padding.
inline Vec conv2d(const Vec& x, int n, int c_in, int h, int w,
                  const Vec& wt, int c_out, int kh, int kw,
                  const Vec& bias, int stride, int pad) {
    int ho = conv_out(h, kh, stride, pad);
    int wo = conv_out(w, kw, stride, pad);
    Vec y(static_cast<size_t>(n) * c_out * ho * wo, 0.0);
    for (int b = 0; b < n; ++b)
        for (int oc = 0; oc < c_out; ++oc)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[oc];
                    for (int ic = 0; ic < c_in; ++ic)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                int iy = oy * stride - pad + ky;
                                int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += x[((static_cast<size_t>(b) * c_in + ic) * h + iy) * w + ix] *
                                       wt[((static_cast<size_t>(oc) * c_in + ic) * kh + ky) * kw + kx];
                            }
                    y[((static_cast<size_t>(b) * c_out + oc) * ho + oy) * wo + ox] = acc;
                }
    return y;
}

// Depthwise 3x3, stride 1, pad 1, one filter per channel: wt is [C,3,3].
inline Vec depthwise3x3(const Vec& x, int n, int c, int h, int w,
                        const Vec& wt, const Vec& bias) {
    Vec y(x.size(), 0.0);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < h; ++oy)
                for (int ox = 0; ox < w; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[ch];
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            int iy = oy - 1 + ky, ix = ox - 1 + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += x[((static_cast<size_t>(b) * c + ch) * h + iy) * w + ix] *
                                   wt[(static_cast<size_t>(ch) * 3 + ky) * 3 + kx];
                        }
                    y[((static_cast<size_t>(b) * c + ch) * h + oy) * w + ox] = acc;
                }
    return y;
}

// Biased variance over each (sample, group) slab.
inline Vec group_norm(const Vec& x, int n, int c, int h, int w, int groups,
                      const Vec& gamma, const Vec& beta, double eps) {
    Vec y(x.size(), 0.0);
    int cpg = c / groups;
    for (int b = 0; b < n; ++b)
        for (int g = 0; g < groups; ++g) {
            double mean = 0.0;
            long cnt = static_cast<long>(cpg) * h * w;
            for (int ch = g * cpg; ch < (g + 1) * cpg; ++ch)
                for (int i = 0; i < h * w; ++i)
                    mean += x[(static_cast<size_t>(b) * c + ch) * h * w + i];
            mean /= cnt;
            double var = 0.0;
            for (int ch = g * cpg; ch < (g + 1) * cpg; ++ch)
                for (int i = 0; i < h * w; ++i) {
                    double d = x[(static_cast<size_t>(b) * c + ch) * h * w + i] - mean;
                    var += d * d;
                }
            var /= cnt;
            double inv = 1.0 / std::sqrt(var + eps);
            for (int ch = g * cpg; ch < (g + 1) * cpg; ++ch)
                for (int i = 0; i < h * w; ++i) {
                    size_t idx = (static_cast<size_t>(b) * c + ch) * h * w + i;
                    y[idx] = (x[idx] - mean) * inv * gamma[ch] + beta[ch];
                }
        }
    return y;
}

// Rows [rows, in] times wt [out, in] transpose, plus bias.
inline Vec linear(const Vec& x, long rows, int in, const Vec& wt, int out,
                  const Vec& bias) {
    Vec y(static_cast<size_t>(rows) * out, 0.0);
    for (long r = 0; r < rows; ++r)
        for (int o = 0; o < out; ++o) {
            double acc = bias.empty() ? 0.0 : bias[o];
            for (int i = 0; i < in; ++i)
                acc += x[static_cast<size_t>(r) * in + i] * wt[static_cast<size_t>(o) * in + i];
            y[static_cast<size_t>(r) * out + o] = acc;
        }
    return y;
}

inline Vec max_pool2d(const Vec& x, int n, int c, int h, int w, int k, int stride) {
    int ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
    Vec y(static_cast<size_t>(n) * c * ho * wo, 0.0);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double best = -1e300;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            double v = x[((static_cast<size_t>(b) * c + ch) * h + oy * stride + ky) * w +
                                         ox * stride + kx];
                            if (v > best) best = v;
                        }
                    y[((static_cast<size_t>(b) * c + ch) * ho + oy) * wo + ox] = best;
                }
    return y;
}

// Bin edges: start = floor(i*H/P), end = ceil((i+1)*H/P).
inline Vec adaptive_avg_pool2d(const Vec& x, int n, int c, int h, int w, int ph, int pw) {
    Vec y(static_cast<size_t>(n) * c * ph * pw, 0.0);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < ph; ++oy)
                for (int ox = 0; ox < pw; ++ox) {
                    int y0 = (oy * h) / ph;
                    int y1 = ((oy + 1) * h + ph - 1) / ph;
                    int x0 = (ox * w) / pw;
                    int x1 = ((ox + 1) * w + pw - 1) / pw;
                    double acc = 0.0;
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix)
                            acc += x[((static_cast<size_t>(b) * c + ch) * h + iy) * w + ix];
                    y[((static_cast<size_t>(b) * c + ch) * ph + oy) * pw + ox] =
                        acc / ((y1 - y0) * (x1 - x0));
                }
    return y;
}

// Max-subtracted softmax over contiguous rows of length `cols`.
inline Vec softmax_rows(const Vec& x, long rows, int cols) {
    Vec y(x.size(), 0.0);
    for (long r = 0; r < rows; ++r) {
        const double* row = x.data() + static_cast<size_t>(r) * cols;
        double m = row[0];
        for (int i = 1; i < cols; ++i) m = std::max(m, row[i]);
        double z = 0.0;
        for (int i = 0; i < cols; ++i) z += std::exp(row[i] - m);
        for (int i = 0; i < cols; ++i)
            y[static_cast<size_t>(r) * cols + i] = std::exp(row[i] - m) / z;
    }
    return y;
}

// align_corners=false sampling with edge clamping; identity at equal size.
inline Vec bilinear_resize(const Vec& x, int n, int c, int h, int w, int ho, int wo) {
    Vec y(static_cast<size_t>(n) * c * ho * wo, 0.0);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double sy = (oy + 0.5) * static_cast<double>(h) / ho - 0.5;
                    double sx = (ox + 0.5) * static_cast<double>(w) / wo - 0.5;
                    int y0 = static_cast<int>(std::floor(sy));
                    int x0 = static_cast<int>(std::floor(sx));
                    double fy = sy - y0, fx = sx - x0;
                    auto at = [&](int iy, int ix) {
                        iy = std::clamp(iy, 0, h - 1);
                        ix = std::clamp(ix, 0, w - 1);
                        return x[((static_cast<size_t>(b) * c + ch) * h + iy) * w + ix];
                    };
                    double v = at(y0, x0) * (1 - fy) * (1 - fx) +
                               at(y0, x0 + 1) * (1 - fy) * fx +
                               at(y0 + 1, x0) * fy * (1 - fx) +
                               at(y0 + 1, x0 + 1) * fy * fx;
                    y[((static_cast<size_t>(b) * c + ch) * ho + oy) * wo + ox] = v;
                }
    return y;
}

// Mean over pixels with label != ignore of -log p[label]; logits are
// [n, n_cls, h, w], labels [n, h, w].
inline double cross_entropy(const Vec& logits, int n, int n_cls, int h, int w,
                            const std::vector<int>& labels, int ignore) {
    double total = 0.0;
    long count = 0;
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < h * w; ++i) {
            int lab = labels[static_cast<size_t>(b) * h * w + i];
            if (lab == ignore) continue;
            double m = -1e300;
            for (int k = 0; k < n_cls; ++k)
                m = std::max(m, logits[(static_cast<size_t>(b) * n_cls + k) * h * w + i]);
            double z = 0.0;
            for (int k = 0; k < n_cls; ++k)
                z += std::exp(logits[(static_cast<size_t>(b) * n_cls + k) * h * w + i] - m);
            total -= logits[(static_cast<size_t>(b) * n_cls + lab) * h * w + i] - m - std::log(z);
            ++count;
        }
    return count ? total / count : 0.0;
}

// Binary confusion by literal counting. prob >= threshold is a positive call;
// gt nonzero is a positive pixel; ignore pixels are skipped entirely.
struct Confusion {
    long tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Confusion count_confusion(const Vec& prob, const std::vector<int>& gt,
                                 double threshold, int ignore) {
    Confusion c;
    for (size_t i = 0; i < prob.size(); ++i) {
        if (gt[i] == ignore) continue;
        bool call = prob[i] >= threshold;
        bool pos = gt[i] != 0;
        if (call && pos) ++c.tp;
        else if (call && !pos) ++c.fp;
        else if (!call && pos) ++c.fn;
        else ++c.tn;
    }
    return c;
}

struct BinaryScores {
    double pre, rec, fpr, fnr, f1, iou;
};

// Percent scores from counts; empty denominators score 0.
inline BinaryScores scores_from(const Confusion& c) {
    BinaryScores s{};
    s.pre = (c.tp + c.fp) ? 100.0 * c.tp / (c.tp + c.fp) : 0.0;
    s.rec = (c.tp + c.fn) ? 100.0 * c.tp / (c.tp + c.fn) : 0.0;
    s.fpr = (c.fp + c.tn) ? 100.0 * c.fp / (c.fp + c.tn) : 0.0;
    s.fnr = (c.tp + c.fn) ? 100.0 * c.fn / (c.tp + c.fn) : 0.0;
    s.f1 = (s.pre + s.rec > 0) ? 2.0 * s.pre * s.rec / (s.pre + s.rec) : 0.0;
    s.iou = (c.tp + c.fp + c.fn) ? 100.0 * c.tp / (c.tp + c.fp + c.fn) : 0.0;
    return s;
}

// Per-class intersection/union counting for mIoU over classes present in gt
// (prediction-only classes do not add terms).
inline double miou_percent(const std::vector<int>& pred, const std::vector<int>& gt,
                           int n_cls, int ignore) {
    std::vector<long> inter(n_cls, 0), uni(n_cls, 0), seen(n_cls, 0);
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == ignore) continue;
        seen[gt[i]] = 1;
        if (pred[i] == gt[i]) ++inter[gt[i]];
        ++uni[gt[i]];
        if (pred[i] != gt[i]) ++uni[pred[i]];
    }
    double acc = 0.0;
    long n = 0;
    for (int k = 0; k < n_cls; ++k) {
        if (!seen[k]) continue;
        acc += uni[k] ? static_cast<double>(inter[k]) / uni[k] : 0.0;
        ++n;
    }
    return n ? 100.0 * acc / n : 0.0;
}

inline double macc_percent(const std::vector<int>& pred, const std::vector<int>& gt,
                           int n_cls, int ignore) {
    std::vector<long> hit(n_cls, 0), tot(n_cls, 0);
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == ignore) continue;
        if (pred[i] == gt[i]) ++hit[gt[i]];
        ++tot[gt[i]];
    }
    double acc = 0.0;
    long n = 0;
    for (int k = 0; k < n_cls; ++k) {
        if (!tot[k]) continue;
        acc += static_cast<double>(hit[k]) / tot[k];
        ++n;
    }
    return n ? 100.0 * acc / n : 0.0;
}

// 11-point interpolated average precision over recall levels 0,10,...,100.
// Inputs are percent (recall, precision) pairs from a threshold sweep. Exact
// comparisons: a representable boundary quotient divides exactly in IEEE.
inline double ap_11point(const std::vector<std::pair<double, double>>& rec_pre) {
    double total = 0.0;
    for (int i = 0; i <= 10; ++i) {
        double level = 10.0 * i;
        double best = 0.0;
        for (const auto& [r, p] : rec_pre)
            if (r >= level) best = std::max(best, p);
        total += best;
    }
    return total / 11.0;
}

// Reference AdamW: decoupled decay applied to the parameter before the moment
// update, bias-corrected moments, in double.
struct AdamWState {
    Vec m, v;
    long t = 0;
};

inline void adamw_step(Vec& param, const Vec& grad, AdamWState& st, double lr,
                       double beta1, double beta2, double eps, double wd) {
    if (st.m.empty()) {
        st.m.assign(param.size(), 0.0);
        st.v.assign(param.size(), 0.0);
    }
    st.t += 1;
    double bc1 = 1.0 - std::pow(beta1, st.t);
    double bc2 = 1.0 - std::pow(beta2, st.t);
    for (size_t i = 0; i < param.size(); ++i) {
        param[i] -= lr * wd * param[i];
        st.m[i] = beta1 * st.m[i] + (1 - beta1) * grad[i];
        st.v[i] = beta2 * st.v[i] + (1 - beta2) * grad[i] * grad[i];
        double mh = st.m[i] / bc1, vh = st.v[i] / bc2;
        param[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

// Linear warmup to lr0 over `warmup` steps, then cosine to zero at `total`.
inline double lr_at(long step, long warmup, long total, double lr0) {
    if (warmup > 0 && step < warmup)
        return lr0 * static_cast<double>(step) / warmup;
    if (step >= total) return 0.0;
    double prog = static_cast<double>(step - warmup) / (total - warmup);
    return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * prog));
}

// Exhaustive color-table classifier: the Bayes-optimal predictor for data
// whose label depends on RGB alone. Learns argmax_c count(c | color) over a
// pixel set, predicts by lookup; ties go to the lower class id.
struct ColorTable {
    std::map<uint32_t, std::vector<long>> hist;
    int n_cls = 0;
};

inline uint32_t rgb_key(float r, float g, float b) {
    auto q = [](float v) {
        long x = std::lround(static_cast<double>(v) * 255.0);
        return static_cast<uint32_t>(std::clamp(x, 0L, 255L));
    };
    return (q(r) << 16) | (q(g) << 8) | q(b);
}

// rgb is channel-planar [3*hw]; labels may contain the ignore value.
inline void color_table_add(ColorTable& t, const std::vector<float>& rgb,
                            const std::vector<int>& labels, int n_cls, int ignore) {
    t.n_cls = n_cls;
    size_t hw = labels.size();
    for (size_t i = 0; i < hw; ++i) {
        if (labels[i] == ignore) continue;
        uint32_t key = rgb_key(rgb[i], rgb[hw + i], rgb[2 * hw + i]);
        auto& counts = t.hist[key];
        if (counts.empty()) counts.assign(static_cast<size_t>(n_cls), 0);
        ++counts[static_cast<size_t>(labels[i])];
    }
}

inline std::vector<int> color_table_predict(const ColorTable& t,
                                            const std::vector<float>& rgb, size_t hw) {
    std::vector<int> pred(hw, 0);
    for (size_t i = 0; i < hw; ++i) {
        uint32_t key = rgb_key(rgb[i], rgb[hw + i], rgb[2 * hw + i]);
        auto it = t.hist.find(key);
        if (it == t.hist.end()) continue;
        const auto& counts = it->second;
        int best = 0;
        long bv = counts[0];
        for (int c = 1; c < t.n_cls; ++c)
            if (counts[static_cast<size_t>(c)] > bv) {
                bv = counts[static_cast<size_t>(c)];
                best = c;
            }
        pred[i] = best;
    }
    return pred;
}

// IoU of a single class in percent, counted literally.
inline double iou_of_class(const std::vector<int>& pred, const std::vector<int>& gt,
                           int cls, int ignore) {
    long inter = 0, uni = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == ignore) continue;
        bool in_gt = gt[i] == cls, in_pred = pred[i] == cls;
        if (in_gt && in_pred) ++inter;
        if (in_gt || in_pred) ++uni;
    }
    return uni ? 100.0 * inter / uni : 0.0;
}

}  // namespace oracle
