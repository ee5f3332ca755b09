#pragma once
// Training loop: AdamW with decoupled decay, linear-warmup cosine schedule,
// the evaluation pass, and the ablation runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dipformer/data.hpp"
#include "dipformer/metrics.hpp"
#include "dipformer/model.hpp"
#include "dipformer/ops.hpp"

namespace dip {

struct TrainConfig {
    double lr0 = 6e-5;
    double weight_decay = 0.05;
    int warmup_steps = 0;
    int total_steps = 1;
    int batch_size = 4;
    uint64_t seed = 0;
    int eval_every = 0;  // 0: evaluate only after the last step
    double flip_p = 0.5;

    void validate() const {
        if (!(lr0 > 0)) throw ConfigError("train: lr0 must be positive");
        if (warmup_steps < 0 || total_steps <= warmup_steps)
            throw ConfigError("train: need 0 <= warmup_steps < total_steps, got " +
                              std::to_string(warmup_steps) + "/" + std::to_string(total_steps));
        if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
        if (weight_decay < 0) throw ConfigError("train: negative weight_decay");
        if (flip_p < 0 || flip_p > 1) throw ConfigError("train: flip_p outside [0,1]");
        if (eval_every < 0) throw ConfigError("train: negative eval_every");
    }
};

// Linear 0 -> lr0 across the warmup, cosine lr0 -> 0 across the rest.
// Continuous at the joint: both pieces give exactly lr0 at step = warmup.
inline double lr_schedule(int step, const TrainConfig& c) {
    if (step < 0 || step > c.total_steps)
        throw ConfigError("lr_schedule: step " + std::to_string(step) + " outside 0.." +
                          std::to_string(c.total_steps));
    if (step < c.warmup_steps) return c.lr0 * static_cast<double>(step) / c.warmup_steps;
    double progress =
        static_cast<double>(step - c.warmup_steps) / (c.total_steps - c.warmup_steps);
    return c.lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Decoupled AdamW over the parameter registry. The decay term hits the
// parameter before the moment update is applied; moments are kept in double
// regardless of the model scalar, with bias correction.
template <typename S>
class AdamW {
  public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<ParamEntry<S>>& params, double lr, double wd) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i].tensor.size(), 0.0);
                v_[i].assign(params[i].tensor.size(), 0.0);
            }
        } else if (m_.size() != params.size()) {
            throw InternalError("adamw: parameter registry changed size");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& e = params[pi];
            auto& val = e.tensor.value();
            const auto& g = e.tensor.grad();
            if (g.size() != val.size())
                throw ConfigError("adamw: gradient shape mismatch for " + e.name);
            const double decay = e.decay ? wd : 0.0;
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (size_t i = 0; i < val.size(); ++i) {
                double p = val[i];
                double gi = g[i];
                p -= lr * decay * p;
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                p -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
                val[i] = static_cast<S>(p);
            }
        }
    }

    long steps_taken() const { return t_; }

  private:
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Mean cross-entropy over labeled pixels. A batch with nothing to learn from
// is an error, not a zero: a silent 0 would corrupt the loss curve.
template <typename S>
Tensor<S> ce_loss(const Tensor<S>& logits, const std::vector<int>& labels,
                  int ignore = kIgnoreLabel) {
    bool any = false;
    for (int l : labels)
        if (l != ignore) {
            any = true;
            break;
        }
    if (!any) throw ConfigError("cross_entropy: every pixel ignored, degenerate batch");
    return cross_entropy(logits, labels, ignore);
}

// Eval pass scores. Road detection treats class 0 as the positive class:
// binary gt is 1 where the label is 0, ignore stays ignore, everything else
// is negative. Pixels are pooled across the whole eval set before scoring.
struct EvalResult {
    double miou = 0, macc = 0;
    double max_f = 0, ap = 0, best_threshold = 0;
    BinaryMetrics at_best;
    MulticlassScores classes;
    long n_pixels = 0;

    std::string report(int n_cls) const {
        char buf[64];
        auto num = [&buf](double v) {
            std::snprintf(buf, sizeof buf, "%.9g", v);
            return std::string(buf);
        };
        std::string s;
        s += "miou=" + num(miou) + "\n";
        s += "macc=" + num(macc) + "\n";
        s += "max_f=" + num(max_f) + "\n";
        s += "ap=" + num(ap) + "\n";
        s += "best_threshold=" + num(best_threshold) + "\n";
        s += "pre=" + num(at_best.pre) + "\n";
        s += "rec=" + num(at_best.rec) + "\n";
        s += "fpr=" + num(at_best.fpr) + "\n";
        s += "fnr=" + num(at_best.fnr) + "\n";
        s += "n_pixels=" + std::to_string(n_pixels) + "\n";
        for (int k = 0; k < n_cls; ++k) {
            s += "iou_" + std::to_string(k) + "=" + num(classes.iou[k]) + "\n";
            s += "acc_" + std::to_string(k) + "=" + num(classes.acc[k]) + "\n";
            s += "present_" + std::to_string(k) + "=" +
                 (classes.present[k] ? "1" : "0") + "\n";
        }
        return s;
    }
};

template <typename S>
EvalResult evaluate(const Model<S>& model, const std::vector<Sample>& samples, int batch_size,
                    int n_thresholds = 256) {
    if (samples.empty()) throw ConfigError("eval: empty dataset");
    if (batch_size < 1) throw ConfigError("eval: batch_size must be positive");
    NoGrad ng;
    const int k = model.config().n_cls;
    std::vector<double> road_prob;
    std::vector<int> road_gt, pred_all, gt_all;
    for (size_t at = 0; at < samples.size(); at += batch_size) {
        std::vector<size_t> idx;
        for (size_t j = at; j < samples.size() && j < at + batch_size; ++j) idx.push_back(j);
        Batch<S> b = make_batch<S>(samples, idx);
        auto logits = model.forward(b.rgb, b.depth);
        const S* pl = logits.value().data();
        const size_t hw = static_cast<size_t>(b.height) * b.width;
        for (size_t bi = 0; bi < idx.size(); ++bi) {
            for (size_t i = 0; i < hw; ++i) {
                const size_t base = (bi * k) * hw + i;
                double m = pl[base];
                int arg = 0;
                for (int c = 1; c < k; ++c) {
                    double v = pl[base + c * hw];
                    if (v > m) {
                        m = v;
                        arg = c;
                    }
                }
                double z = 0;
                for (int c = 0; c < k; ++c) z += std::exp(pl[base + c * hw] - m);
                road_prob.push_back(std::exp(pl[base] - m) / z);
                pred_all.push_back(arg);
                const int lab = b.labels[bi * hw + i];
                gt_all.push_back(lab);
                road_gt.push_back(lab == kIgnoreLabel ? kIgnoreLabel : lab == 0 ? 1 : 0);
            }
        }
    }
    EvalResult r;
    auto sweep = threshold_sweep(road_prob, road_gt, n_thresholds);
    r.max_f = sweep.max_f;
    r.ap = sweep.ap;
    r.best_threshold = sweep.best_threshold;
    r.at_best = sweep.at_best;
    r.classes = multiclass_scores(pred_all, gt_all, k);
    r.miou = r.classes.miou;
    r.macc = r.classes.macc;
    r.n_pixels = static_cast<long>(gt_all.size());
    return r;
}

struct TrainResult {
    std::vector<double> losses;  // one per step
    std::vector<double> lrs;
    std::vector<std::pair<int, double>> evals;  // (step, miou), step 0-based
    double best_miou = -1;
    int best_step = -1;
    EvalResult final_eval;
    std::string history_csv;
};

// One seeded Rng drives epoch shuffles and per-sample flip coins, so the
// whole data order is a function of cfg.seed alone. Writes history.csv,
// final.dipf, and best.dipf (by eval mIoU) under out_dir when given.
template <typename S>
TrainResult run_training(Model<S>& model, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& eval_set, const TrainConfig& tc,
                         const std::string& out_dir = "", int n_thresholds = 256,
                         std::ostream* log = nullptr) {
    tc.validate();
    if (train_set.empty()) throw ConfigError("train: empty dataset");
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    Rng rng(tc.seed);
    AdamW<S> opt;
    auto& params = model.params().entries();

    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t cursor = order.size();  // empty: triggers the first shuffle

    TrainResult res;
    std::ostringstream hist;
    hist << "step,loss,lr,miou\n";
    char buf[64];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
    };

    for (int step = 0; step < tc.total_steps; ++step) {
        std::vector<size_t> picked;
        for (int i = 0; i < tc.batch_size; ++i) {
            if (cursor >= order.size()) {
                for (size_t j = order.size() - 1; j > 0; --j)
                    std::swap(order[j], order[rng.below(j + 1)]);
                cursor = 0;
            }
            picked.push_back(order[cursor++]);
        }
        std::vector<Sample> aug;
        aug.reserve(picked.size());
        for (size_t j : picked) {
            Sample s = train_set[j];
            if (rng.coin(tc.flip_p)) hflip(s);
            aug.push_back(std::move(s));
        }
        std::vector<size_t> all(aug.size());
        std::iota(all.begin(), all.end(), size_t{0});
        Batch<S> b = make_batch<S>(aug, all);

        const double lr = lr_schedule(step, tc);
        for (auto& e : params) e.tensor.zero_grad();
        auto logits = model.forward(b.rgb, b.depth);
        auto loss = ce_loss(logits, b.labels);
        const double lv = loss.item();
        if (!std::isfinite(lv)) {
            std::ostringstream d;
            d << "non-finite loss " << lv << " at step " << step << ", lr " << lr << "\n";
            d << "batch samples:";
            for (size_t j : picked) d << ' ' << j;
            d << "\n";
            auto span = [](const std::vector<S>& v) {
                double lo = v.empty() ? 0 : v[0], hi = lo;
                for (S x : v) {
                    lo = std::min(lo, double(x));
                    hi = std::max(hi, double(x));
                }
                return "[" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
            };
            d << "rgb range " << span(b.rgb.value()) << ", depth range "
              << span(b.depth.value()) << "\n";
            if (!out_dir.empty()) detail::write_atomic(out_dir + "/nan_dump.txt", d.str());
            if (log) *log << d.str();
            throw NumericError("training aborted: " + d.str(), step);
        }
        backward(loss);
        opt.step(params, lr, tc.weight_decay);

        res.losses.push_back(lv);
        res.lrs.push_back(lr);

        const bool last = step + 1 == tc.total_steps;
        const bool eval_now =
            !eval_set.empty() && (last || (tc.eval_every > 0 && (step + 1) % tc.eval_every == 0));
        if (eval_now) {
            auto ev = evaluate(model, eval_set, tc.batch_size, n_thresholds);
            res.evals.push_back({step, ev.miou});
            res.final_eval = ev;
            if (ev.miou > res.best_miou) {
                res.best_miou = ev.miou;
                res.best_step = step;
                if (!out_dir.empty()) model.save(out_dir + "/best.dipf");
            }
            hist << step << ',' << num(lv) << ',' << num(lr) << ',' << num(ev.miou) << '\n';
            if (log)
                *log << "step " << step << " loss " << num(lv) << " lr " << num(lr) << " miou "
                     << num(ev.miou) << "\n";
        } else {
            hist << step << ',' << num(lv) << ',' << num(lr) << ",\n";
            if (log && (step % 50 == 0))
                *log << "step " << step << " loss " << num(lv) << " lr " << num(lr) << "\n";
        }
    }

    res.history_csv = hist.str();
    if (!out_dir.empty()) {
        detail::write_atomic(out_dir + "/history.csv", res.history_csv);
        model.save(out_dir + "/final.dipf");
    }
    return res;
}

// Component and embedding arms. "baseline" is the RGB-only reference:
// implicit position embedding, no depth fusion, no cross-attention.
inline ModelConfig arm_config(ModelConfig base, const std::string& arm) {
    if (arm == "baseline" || arm == "implicit") {
        base.pe_kind = PeKind::Implicit;
        base.use_lca = false;
    } else if (arm == "sao") {
        base.pe_kind = PeKind::DepthSao;
        base.use_lca = false;
    } else if (arm == "lca") {
        base.pe_kind = PeKind::Implicit;
        base.use_lca = true;
    } else if (arm == "full") {
        base.pe_kind = PeKind::DepthSao;
        base.use_lca = true;
    } else if (arm == "add") {
        base.pe_kind = PeKind::DepthAdd;
        base.use_lca = false;
    } else if (arm == "concat") {
        base.pe_kind = PeKind::DepthConcat;
        base.use_lca = false;
    } else if (arm == "sincos") {
        base.pe_kind = PeKind::SinCos;
        base.use_lca = false;
    } else if (arm == "learnable") {
        base.pe_kind = PeKind::Learnable;
        base.use_lca = false;
    } else if (arm == "full_nodec") {
        base.pe_kind = PeKind::DepthSao;
        base.use_lca = true;
        base.use_mlp_decoder = false;
    } else {
        throw ConfigError("unknown ablation arm '" + arm + "'");
    }
    return base;
}

struct AblationRow {
    std::string arm;
    size_t params = 0;
    double miou = 0, macc = 0;
    EvalResult eval;
};

// Trains every arm from the same base config, seed, and data. Row order is
// the arm order given.
template <typename S>
std::vector<AblationRow> run_ablation(const ModelConfig& base,
                                      const std::vector<std::string>& arms,
                                      const std::vector<Sample>& train_set,
                                      const std::vector<Sample>& eval_set, const TrainConfig& tc,
                                      std::ostream* log = nullptr) {
    if (arms.size() < 2) throw ConfigError("ablation: need at least 2 arms");
    if (train_set.empty() || eval_set.empty())
        throw ConfigError("ablation: empty train or eval set");
    std::vector<AblationRow> rows;
    for (const auto& arm : arms) {
        ModelConfig cfg = arm_config(base, arm);
        if (cfg.pe_kind == PeKind::Learnable && cfg.input_height == 0) {
            cfg.input_height = train_set[0].height;
            cfg.input_width = train_set[0].width;
        }
        Model<S> m(cfg);
        if (log) *log << "arm " << arm << " (" << m.param_count() << " params)\n";
        auto res = run_training(m, train_set, eval_set, tc, "", 256, log);
        AblationRow row;
        row.arm = arm;
        row.params = m.param_count();
        row.miou = res.final_eval.miou;
        row.macc = res.final_eval.macc;
        row.eval = res.final_eval;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows, int n_cls) {
    char buf[64];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
    };
    std::string s = "arm,params,miou,macc";
    for (int k = 0; k < n_cls; ++k) s += ",iou_" + std::to_string(k);
    s += "\n";
    for (const auto& r : rows) {
        s += r.arm + "," + std::to_string(r.params) + "," + num(r.miou) + "," + num(r.macc);
        for (int k = 0; k < n_cls; ++k) s += "," + num(r.eval.classes.iou[k]);
        s += "\n";
    }
    return s;
}

}  // namespace dip
