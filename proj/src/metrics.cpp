#include "dipformer/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dipformer/errors.hpp"

namespace dip {

BinaryCounts binary_counts(const std::vector<double>& prob, const std::vector<int>& gt,
                           double threshold, int ignore) {
    if (prob.size() != gt.size())
        throw ConfigError("binary_counts: prob and gt sizes differ");
    BinaryCounts c;
    for (size_t i = 0; i < prob.size(); ++i) {
        if (gt[i] == ignore) continue;
        bool call = prob[i] >= threshold;
        bool pos = gt[i] != 0;
        if (call) {
            if (pos) ++c.tp;
            else ++c.fp;
        } else {
            if (pos) ++c.fn;
            else ++c.tn;
        }
    }
    return c;
}

BinaryMetrics binary_metrics_from(const BinaryCounts& c) {
    BinaryMetrics m;
    m.pre = (c.tp + c.fp) ? 100.0 * c.tp / (c.tp + c.fp) : 0.0;
    m.rec = (c.tp + c.fn) ? 100.0 * c.tp / (c.tp + c.fn) : 0.0;
    m.fpr = (c.fp + c.tn) ? 100.0 * c.fp / (c.fp + c.tn) : 0.0;
    m.fnr = (c.tp + c.fn) ? 100.0 * c.fn / (c.tp + c.fn) : 0.0;
    m.f1 = (m.pre + m.rec > 0) ? 2.0 * m.pre * m.rec / (m.pre + m.rec) : 0.0;
    m.iou = (c.tp + c.fp + c.fn) ? 100.0 * c.tp / (c.tp + c.fp + c.fn) : 0.0;
    return m;
}

BinaryMetrics binary_metrics(const std::vector<double>& prob, const std::vector<int>& gt,
                             double threshold, int ignore) {
    return binary_metrics_from(binary_counts(prob, gt, threshold, ignore));
}

double f1_from_pre_rec(double pre, double rec) {
    return (pre + rec > 0) ? 2.0 * pre * rec / (pre + rec) : 0.0;
}

SweepResult threshold_sweep(const std::vector<double>& prob, const std::vector<int>& gt,
                            int n_thresholds, int ignore) {
    if (n_thresholds < 2) throw ConfigError("threshold_sweep: need at least 2 thresholds");
    SweepResult r;
    r.thresholds.reserve(n_thresholds);
    r.pre.reserve(n_thresholds);
    r.rec.reserve(n_thresholds);
    r.f1.reserve(n_thresholds);
    int best_i = 0;
    BinaryMetrics best{};
    for (int i = 0; i < n_thresholds; ++i) {
        double t = static_cast<double>(i) / (n_thresholds - 1);
        BinaryMetrics m = binary_metrics(prob, gt, t, ignore);
        r.thresholds.push_back(t);
        r.pre.push_back(m.pre);
        r.rec.push_back(m.rec);
        r.f1.push_back(m.f1);
        if (m.f1 > r.max_f) {
            r.max_f = m.f1;
            best_i = i;
            best = m;
        }
    }
    r.best_threshold = r.thresholds[best_i];
    r.at_best = best;
    // 11-point interpolation: at each recall level take the best precision
    // among sweep points reaching it.
    double total = 0.0;
    for (int i = 0; i <= 10; ++i) {
        double level = 10.0 * i;  // recall in percent
        double bp = 0.0;
        for (int j = 0; j < n_thresholds; ++j)
            if (r.rec[j] >= level) bp = std::max(bp, r.pre[j]);
        total += bp;
    }
    r.ap = total / 11.0;
    return r;
}

double miou(const std::vector<int>& pred, const std::vector<int>& gt, int n_cls, int ignore) {
    if (pred.size() != gt.size()) throw ConfigError("miou: pred and gt sizes differ");
    std::vector<long long> inter(n_cls, 0), uni(n_cls, 0);
    std::vector<char> seen(n_cls, 0);
    for (size_t i = 0; i < gt.size(); ++i) {
        int g = gt[i];
        if (g == ignore) continue;
        if (g < 0 || g >= n_cls) throw ConfigError("miou: gt label out of range");
        int p = pred[i];
        if (p < 0 || p >= n_cls) throw ConfigError("miou: pred label out of range");
        seen[g] = 1;
        if (p == g) {
            ++inter[g];
            ++uni[g];
        } else {
            ++uni[g];
            ++uni[p];
        }
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

MulticlassScores multiclass_scores(const std::vector<int>& pred, const std::vector<int>& gt,
                                   int n_cls, int ignore) {
    if (pred.size() != gt.size())
        throw ConfigError("multiclass_scores: pred and gt sizes differ");
    std::vector<long long> inter(n_cls, 0), uni(n_cls, 0), hit(n_cls, 0), tot(n_cls, 0);
    for (size_t i = 0; i < gt.size(); ++i) {
        int g = gt[i];
        if (g == ignore) continue;
        if (g < 0 || g >= n_cls) throw ConfigError("multiclass_scores: gt label out of range");
        int p = pred[i];
        if (p < 0 || p >= n_cls) throw ConfigError("multiclass_scores: pred label out of range");
        ++tot[g];
        if (p == g) {
            ++inter[g];
            ++uni[g];
            ++hit[g];
        } else {
            ++uni[g];
            ++uni[p];
        }
    }
    MulticlassScores out;
    out.iou.assign(n_cls, 0.0);
    out.acc.assign(n_cls, 0.0);
    out.present.assign(n_cls, false);
    // Means repeat the miou()/macc() accumulation order so the fields match
    // those functions exactly.
    double iou_sum = 0.0, acc_sum = 0.0;
    long n = 0;
    for (int k = 0; k < n_cls; ++k) {
        if (!tot[k]) continue;
        out.present[k] = true;
        out.iou[k] = uni[k] ? 100.0 * inter[k] / uni[k] : 0.0;
        out.acc[k] = 100.0 * hit[k] / tot[k];
        iou_sum += uni[k] ? static_cast<double>(inter[k]) / uni[k] : 0.0;
        acc_sum += static_cast<double>(hit[k]) / tot[k];
        ++n;
    }
    out.miou = n ? 100.0 * iou_sum / n : 0.0;
    out.macc = n ? 100.0 * acc_sum / n : 0.0;
    return out;
}

double macc(const std::vector<int>& pred, const std::vector<int>& gt, int n_cls, int ignore) {
    if (pred.size() != gt.size()) throw ConfigError("macc: pred and gt sizes differ");
    std::vector<long long> hit(n_cls, 0), tot(n_cls, 0);
    for (size_t i = 0; i < gt.size(); ++i) {
        int g = gt[i];
        if (g == ignore) continue;
        if (g < 0 || g >= n_cls) throw ConfigError("macc: gt label out of range");
        if (pred[i] == g) ++hit[g];
        ++tot[g];
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

}  // namespace dip
