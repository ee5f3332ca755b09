#pragma once
// Verification-mode gradient suite: centered finite differences in double
// against every tape op, plus a reduced end-to-end model check. Library code
// rather than test code because the CLI exposes it as a verb.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dipformer/model.hpp"
#include "dipformer/ops.hpp"
#include "dipformer/rng.hpp"
#include "dipformer/tensor.hpp"
#include "dipformer/train.hpp"

namespace dip {

struct GradCheckResult {
    std::string op;
    double worst_rel = 0;
    int worst_input = 0;  // index of the input tensor holding the worst error
    bool pass = true;
};

namespace gcheck_detail {

using T = Tensor<double>;
using Build = std::function<T(const std::vector<T>&)>;

inline T rand_t(Rng& rng, const Shape& shape, double lo, double hi) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return T::from(shape, std::move(v), true);
}

// Uniform values bounded away from zero, for kink-free relu probing.
inline T rand_signed(Rng& rng, const Shape& shape, double margin) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) {
        x = margin + rng.uniform(0.0, 1.0);
        if (rng.coin()) x = -x;
    }
    return T::from(shape, std::move(v), true);
}

// Strictly distinct values so max-pool argmaxes sit away from ties.
inline T rand_distinct(Rng& rng, const Shape& shape) {
    std::vector<double> v(numel(shape));
    for (size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1.0, 1.0) + 1e-4 * double(i);
    return T::from(shape, std::move(v), true);
}

// One op under test. `scalar` marks builders whose output already is the
// loss; otherwise the output is contracted with fixed pseudo-random weights.
struct Probe {
    std::string name;
    std::vector<T> inputs;
    Build build;
    bool scalar = false;
};

inline double contract(const T& y, const std::vector<double>& wts) {
    double s = 0;
    const auto& v = y.value();
    for (size_t i = 0; i < v.size(); ++i) s += v[i] * wts[i];
    return s;
}

inline GradCheckResult run_probe(Probe& p, double tol, bool corrupt, double h = 1e-6) {
    T out = p.build(p.inputs);
    std::vector<double> wts(out.size());
    Rng wr(5000 + static_cast<uint64_t>(out.size()));
    for (auto& w : wts) w = wr.uniform(-1.0, 1.0);
    if (p.scalar) wts.assign(1, 1.0);

    for (auto& in : p.inputs) in.zero_grad();
    if (p.scalar) {
        backward(out);
    } else {
        auto w_t = T::from(out.shape(), wts);
        backward(sum_all(mul(out, w_t)));
    }
    std::vector<std::vector<double>> grads;
    for (auto& in : p.inputs) grads.push_back(in.grad());
    if (corrupt && !grads.empty() && !grads[0].empty())
        grads[0][0] += 0.01 * (std::abs(grads[0][0]) + 1.0);

    auto eval = [&p, &wts]() {
        NoGrad ng;
        return contract(p.build(p.inputs), wts);
    };

    GradCheckResult r{p.name, 0.0, 0, true};
    Rng pr(9000 + fnv1a64(p.name));
    for (size_t ti = 0; ti < p.inputs.size(); ++ti) {
        auto& vals = p.inputs[ti].value();
        size_t n = vals.size();
        size_t probes = n < 24 ? n : 24;
        for (size_t k = 0; k < probes; ++k) {
            size_t j = probes == n ? k : (k == 0 ? 0 : pr.below(n));
            double orig = vals[j];
            vals[j] = orig + h;
            double fp = eval();
            vals[j] = orig - h;
            double fm = eval();
            vals[j] = orig;
            double fd = (fp - fm) / (2.0 * h);
            double g = grads[ti][j];
            double rel = std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
            if (rel > r.worst_rel) {
                r.worst_rel = rel;
                r.worst_input = static_cast<int>(ti);
            }
        }
    }
    r.pass = r.worst_rel <= tol;
    return r;
}

}  // namespace gcheck_detail

// Checks every tape op. `corrupt_op` injects a deliberate error into that
// op's analytic gradient before comparison: the negative control proving the
// checker can fail.
inline std::vector<GradCheckResult> gradcheck_ops(double tol = 1e-5,
                                                  const std::string& corrupt_op = "") {
    using namespace gcheck_detail;
    Rng rng(31337);
    std::vector<Probe> probes;

    probes.push_back({"add",
                      {rand_t(rng, {3, 4}, -1, 1), rand_t(rng, {3, 4}, -1, 1)},
                      [](const std::vector<T>& in) { return add(in[0], in[1]); }});
    probes.push_back({"add_broadcast",
                      {rand_t(rng, {2, 3, 2, 2}, -1, 1), rand_t(rng, {1, 3, 2, 2}, -1, 1)},
                      [](const std::vector<T>& in) { return add_broadcast(in[0], in[1]); }});
    probes.push_back({"mul",
                      {rand_t(rng, {3, 4}, -1, 1), rand_t(rng, {3, 4}, -1, 1)},
                      [](const std::vector<T>& in) { return mul(in[0], in[1]); }});
    probes.push_back({"mul_scalar",
                      {rand_t(rng, {3, 4}, -1, 1)},
                      [](const std::vector<T>& in) { return mul_scalar(in[0], 1.37); }});
    probes.push_back({"relu",
                      {rand_signed(rng, {4, 5}, 0.05)},
                      [](const std::vector<T>& in) { return relu(in[0]); }});
    probes.push_back({"linear",
                      {rand_t(rng, {5, 4}, -1, 1), rand_t(rng, {3, 4}, -1, 1),
                       rand_t(rng, {3}, -1, 1)},
                      [](const std::vector<T>& in) { return linear(in[0], in[1], in[2]); }});
    probes.push_back({"conv2d",
                      {rand_t(rng, {1, 3, 5, 6}, -1, 1), rand_t(rng, {4, 3, 3, 3}, -1, 1),
                       rand_t(rng, {4}, -1, 1)},
                      [](const std::vector<T>& in) { return conv2d(in[0], in[1], in[2], 1, 1); }});
    probes.push_back({"conv2d_s2p0",
                      {rand_t(rng, {2, 2, 6, 6}, -1, 1), rand_t(rng, {3, 2, 2, 2}, -1, 1),
                       rand_t(rng, {3}, -1, 1)},
                      [](const std::vector<T>& in) { return conv2d(in[0], in[1], in[2], 2, 0); }});
    probes.push_back(
        {"depthwise_conv3x3",
         {rand_t(rng, {1, 4, 5, 5}, -1, 1), rand_t(rng, {4, 3, 3}, -1, 1),
          rand_t(rng, {4}, -1, 1)},
         [](const std::vector<T>& in) { return depthwise_conv3x3(in[0], in[1], in[2]); }});
    probes.push_back(
        {"group_norm",
         {rand_t(rng, {2, 6, 3, 3}, -1, 1), rand_t(rng, {6}, 0.5, 1.5),
          rand_t(rng, {6}, -0.5, 0.5)},
         [](const std::vector<T>& in) { return group_norm(in[0], in[1], in[2], 3); }});
    probes.push_back({"max_pool2d",
                      {rand_distinct(rng, {1, 3, 6, 6})},
                      [](const std::vector<T>& in) { return max_pool2d(in[0], 2, 2); }});
    probes.push_back(
        {"adaptive_avg_pool2d",
         {rand_t(rng, {1, 3, 7, 5}, -1, 1)},
         [](const std::vector<T>& in) { return adaptive_avg_pool2d(in[0], 3, 2); }});
    probes.push_back({"bilinear_resize",
                      {rand_t(rng, {1, 2, 4, 6}, -1, 1)},
                      [](const std::vector<T>& in) { return bilinear_resize(in[0], 7, 5); }});
    probes.push_back({"softmax_lastdim",
                      {rand_t(rng, {4, 6}, -2, 2)},
                      [](const std::vector<T>& in) { return softmax_lastdim(in[0]); }});
    probes.push_back({"bmm_nn",
                      {rand_t(rng, {3, 4, 5}, -1, 1), rand_t(rng, {3, 5, 2}, -1, 1)},
                      [](const std::vector<T>& in) { return bmm_nn(in[0], in[1]); }});
    probes.push_back({"bmm_nt",
                      {rand_t(rng, {3, 4, 5}, -1, 1), rand_t(rng, {3, 2, 5}, -1, 1)},
                      [](const std::vector<T>& in) { return bmm_nt(in[0], in[1]); }});
    probes.push_back({"permute",
                      {rand_t(rng, {2, 3, 4}, -1, 1)},
                      [](const std::vector<T>& in) { return permute(in[0], {2, 0, 1}); }});
    probes.push_back({"reshape",
                      {rand_t(rng, {3, 8}, -1, 1)},
                      [](const std::vector<T>& in) { return reshape(in[0], {2, 12}); }});
    probes.push_back(
        {"concat_channels",
         {rand_t(rng, {1, 2, 3, 3}, -1, 1), rand_t(rng, {1, 4, 3, 3}, -1, 1)},
         [](const std::vector<T>& in) {
             return concat_channels(std::vector<T>{in[0], in[1]});
         }});
    probes.push_back({"mean_all",
                      {rand_t(rng, {3, 7}, -1, 1)},
                      [](const std::vector<T>& in) { return mean_all(in[0]); },
                      true});
    probes.push_back({"sum_all",
                      {rand_t(rng, {3, 7}, -1, 1)},
                      [](const std::vector<T>& in) { return sum_all(in[0]); },
                      true});
    {
        std::vector<int> labels(2 * 16);
        Rng lr(17);
        for (auto& l : labels) l = static_cast<int>(lr.below(3));
        labels[5] = kIgnoreLabel;
        probes.push_back({"cross_entropy",
                          {rand_t(rng, {2, 3, 4, 4}, -2, 2)},
                          [labels](const std::vector<T>& in) {
                              return cross_entropy(in[0], labels, kIgnoreLabel);
                          },
                          true});
    }

    std::vector<GradCheckResult> out;
    for (auto& p : probes) out.push_back(run_probe(p, tol, p.name == corrupt_op));
    return out;
}

// Differentiates the cross-entropy loss of a one-stage model (Depth SAO
// fusion, LCA, MLP decoder) against finite differences at sampled parameter
// coordinates. Group-norm statistics make the composition stiff, hence the
// looser default tolerance.
inline GradCheckResult gradcheck_end_to_end(double tol = 1e-4, int n_probes = 20,
                                            double h = 1e-5) {
    ModelConfig c;
    c.stage_channels = {8};
    c.stage_heads = {2};
    c.n_stages = 1;
    c.pool_size = 7;
    c.n_cls = 3;
    c.decoder_c = 8;
    c.decoder_m = 8;
    c.seed = 12345;
    c.precision = Precision::F64;
    Model<double> m(c);

    Rng rng(777);
    auto rgb = gcheck_detail::rand_t(rng, {1, 3, 16, 16}, 0, 1);
    auto depth = gcheck_detail::rand_t(rng, {1, 1, 16, 16}, 0, 1);
    std::vector<int> labels(16 * 16);
    for (auto& l : labels) l = static_cast<int>(rng.below(3));
    labels[33] = kIgnoreLabel;

    auto loss_value = [&]() {
        NoGrad ng;
        return ce_loss(m.forward(rgb, depth), labels).item();
    };

    auto& entries = m.params().entries();
    for (auto& e : entries) e.tensor.zero_grad();
    backward(ce_loss(m.forward(rgb, depth), labels));

    GradCheckResult r{"end_to_end", 0.0, 0, true};
    for (int k = 0; k < n_probes; ++k) {
        size_t pi = rng.below(entries.size());
        auto& vals = entries[pi].tensor.value();
        size_t j = rng.below(vals.size());
        double g = entries[pi].tensor.grad()[j];
        double orig = vals[j];
        vals[j] = orig + h;
        double fp = loss_value();
        vals[j] = orig - h;
        double fm = loss_value();
        vals[j] = orig;
        double fd = (fp - fm) / (2.0 * h);
        double rel = std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
        r.worst_rel = std::max(r.worst_rel, rel);
    }
    r.pass = r.worst_rel <= tol;
    return r;
}

}  // namespace dip
