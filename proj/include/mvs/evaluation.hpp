#pragma once

#include "mvs/dataset.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mvs {

/// One scored test unit (a subject for multi-view, an image for single-view).
struct PredictionRecord {
  std::string unit_id;
  int fold = 0;
  /// Class index under the task encoding (binary: 0 negative, 1 positive).
  int true_label = 0;
  std::vector<double> scores;
};

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Rows are true classes, columns predicted classes. For K = 2, index 1 is
/// the positive class.
struct ConfusionMatrix {
  CountMatrix counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes) : counts(CountMatrix::Zero(classes, classes)) {}
  explicit ConfusionMatrix(CountMatrix m) : counts(std::move(m)) {}
  /// Binary matrix from TP, FN, TN, FP.
  static ConfusionMatrix binary(std::int64_t tp, std::int64_t fn, std::int64_t tn, std::int64_t fp);

  int classes() const { return int(counts.rows()); }
  std::int64_t total() const { return counts.sum(); }
  std::int64_t tp() const { return counts(1, 1); }
  std::int64_t fn() const { return counts(1, 0); }
  std::int64_t fp() const { return counts(0, 1); }
  std::int64_t tn() const { return counts(0, 0); }

  friend bool operator==(const ConfusionMatrix& a, const ConfusionMatrix& b) {
    return a.counts.rows() == b.counts.rows() && a.counts.cols() == b.counts.cols() && a.counts == b.counts;
  }
};

/// Positive iff the positive-class score is >= cutoff.
ConfusionMatrix confusion_binary(std::span<const PredictionRecord> preds, double cutoff = 0.5);
/// Argmax prediction; ties go to the lowest class index.
ConfusionMatrix confusion_multiclass(std::span<const PredictionRecord> preds);
ConfusionMatrix one_vs_rest(const ConfusionMatrix& cm, int positive_class);
/// Element-wise sum of per-fold matrices.
ConfusionMatrix accumulate(std::span<const ConfusionMatrix> cms);

struct MetricReport {
  std::string scope = "overall";
  double sensitivity = 0, specificity = 0, precision = 0, f1 = 0, accuracy = 0, auc = 0;
  double cutoff = 0.5;
  /// Names of metrics whose denominator was zero (reported as 0).
  std::vector<std::string> degenerate;
};

/// All metrics except AUC, from a binary matrix.
MetricReport metrics_from_cm(const ConfusionMatrix& cm);

struct RocCurve {
  /// (false positive rate, true positive rate), from (0,0) to (1,1).
  std::vector<std::pair<double, double>> points;
  double auc = 0;
};

/// Threshold sweep over all distinct scores with trapezoidal area; tied
/// scores form one diagonal step, so the area equals the pairwise rank
/// statistic with ties counted one half.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> positive);
RocCurve roc_auc(std::span<const PredictionRecord> preds, int positive_class);

struct Reconstruction {
  ConfusionMatrix cm;
  /// Both rates reproduced within +-0.0005.
  bool feasible = false;
  /// A rate times its count fell exactly half-way between two integers.
  bool ambiguous = false;
};

/// Rebuild an integer binary matrix from published sensitivity and
/// specificity. With `strict`, infeasible rates raise InfeasibleRates.
Reconstruction reconstruct_confusion(double sensitivity, double specificity, int n_pos, int n_neg, bool strict = true);

struct EvaluationReport {
  Task task = Task::Binary;
  double cutoff = 0.5;
  ConfusionMatrix accumulated;
  std::vector<ConfusionMatrix> per_fold;
  /// Binary: one "overall" scope. Multiclass: one scope per class.
  std::vector<MetricReport> scopes;
  std::vector<RocCurve> roc;
  /// Multiclass overall accuracy (equal to scopes[0].accuracy for binary).
  double accuracy = 0;
};

/// Fold-wise matrices pooled by accumulation; AUC from the pooled scores.
EvaluationReport evaluate(std::span<const PredictionRecord> preds, Task task, double cutoff = 0.5);

}  // namespace mvs
