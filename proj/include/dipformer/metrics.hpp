#pragma once

#include <cstdint>
#include <vector>

namespace dip {

constexpr int kIgnoreLabel = 255;

struct BinaryCounts {
    long long tp = 0, fp = 0, tn = 0, fn = 0;
};

// All scores are percentages. Empty denominators score 0.
struct BinaryMetrics {
    double pre = 0, rec = 0, fpr = 0, fnr = 0, f1 = 0, iou = 0;
};

// A pixel is called positive when prob >= threshold; gt nonzero marks a
// positive pixel; gt == ignore skips the pixel.
BinaryCounts binary_counts(const std::vector<double>& prob, const std::vector<int>& gt,
                           double threshold, int ignore = kIgnoreLabel);

BinaryMetrics binary_metrics_from(const BinaryCounts& c);

BinaryMetrics binary_metrics(const std::vector<double>& prob, const std::vector<int>& gt,
                             double threshold, int ignore = kIgnoreLabel);

// F-measure from published precision/recall pairs (percent in, percent out).
double f1_from_pre_rec(double pre, double rec);

struct SweepResult {
    double max_f = 0;          // percent
    double best_threshold = 0; // lowest threshold attaining max_f
    double ap = 0;             // 11-point interpolated average precision, percent
    BinaryMetrics at_best;     // full scores at best_threshold
    std::vector<double> thresholds, pre, rec, f1;
};

// Evaluates n_thresholds uniform cut points i/(n-1) over [0,1] by direct
// counting at each, then reads MaxF and AP off the curve.
SweepResult threshold_sweep(const std::vector<double>& prob, const std::vector<int>& gt,
                            int n_thresholds = 256, int ignore = kIgnoreLabel);

// Mean IoU over the classes present in gt, percent. Union for class k counts
// pixels predicted k as well, but classes never appearing in gt are excluded
// from the mean.
double miou(const std::vector<int>& pred, const std::vector<int>& gt, int n_cls,
            int ignore = kIgnoreLabel);

// Mean per-class pixel accuracy over classes present in gt, percent.
double macc(const std::vector<int>& pred, const std::vector<int>& gt, int n_cls,
            int ignore = kIgnoreLabel);

// Per-class breakdown behind miou/macc. iou[k] and acc[k] are percentages;
// classes absent from gt report present=false and score 0. The miou/macc
// fields equal the standalone functions bit-for-bit.
struct MulticlassScores {
    std::vector<double> iou, acc;
    std::vector<bool> present;
    double miou = 0, macc = 0;
};

MulticlassScores multiclass_scores(const std::vector<int>& pred, const std::vector<int>& gt,
                                   int n_cls, int ignore = kIgnoreLabel);

}  // namespace dip
