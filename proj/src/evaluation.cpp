#include "mvs/evaluation.hpp"

#include "mvs/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace mvs {

ConfusionMatrix ConfusionMatrix::binary(std::int64_t tp, std::int64_t fn, std::int64_t tn, std::int64_t fp) {
  ConfusionMatrix cm(2);
  cm.counts(1, 1) = tp;
  cm.counts(1, 0) = fn;
  cm.counts(0, 0) = tn;
  cm.counts(0, 1) = fp;
  return cm;
}

ConfusionMatrix confusion_binary(std::span<const PredictionRecord> preds, double cutoff) {
  ConfusionMatrix cm(2);
  for (const auto& p : preds) {
    if (p.scores.size() != 2) throw Error(ErrorKind::ShapeMismatch, "binary confusion needs 2 scores per record");
    const int predicted = p.scores[1] >= cutoff ? 1 : 0;
    ++cm.counts(p.true_label, predicted);
  }
  return cm;
}

ConfusionMatrix confusion_multiclass(std::span<const PredictionRecord> preds) {
  if (preds.empty()) return ConfusionMatrix(3);
  const int k = int(preds.front().scores.size());
  ConfusionMatrix cm(k);
  for (const auto& p : preds) {
    if (int(p.scores.size()) != k) throw Error(ErrorKind::ShapeMismatch, "inconsistent score vector length");
    // max_element returns the first maximum, i.e. the lowest index on ties.
    const auto predicted = std::max_element(p.scores.begin(), p.scores.end()) - p.scores.begin();
    ++cm.counts(p.true_label, predicted);
  }
  return cm;
}

ConfusionMatrix one_vs_rest(const ConfusionMatrix& cm, int c) {
  if (cm.classes() < 2 || c < 0 || c >= cm.classes()) throw Error(ErrorKind::InvalidArgument, "class out of range");
  const std::int64_t tp = cm.counts(c, c);
  const std::int64_t fn = cm.counts.row(c).sum() - tp;
  const std::int64_t fp = cm.counts.col(c).sum() - tp;
  const std::int64_t tn = cm.total() - tp - fn - fp;
  return ConfusionMatrix::binary(tp, fn, tn, fp);
}

ConfusionMatrix accumulate(std::span<const ConfusionMatrix> cms) {
  if (cms.empty()) throw Error(ErrorKind::InvalidArgument, "nothing to accumulate");
  ConfusionMatrix sum(cms.front().classes());
  for (const auto& cm : cms) {
    if (cm.classes() != sum.classes()) throw Error(ErrorKind::ShapeMismatch, "confusion matrices differ in size");
    sum.counts += cm.counts;
  }
  return sum;
}

MetricReport metrics_from_cm(const ConfusionMatrix& cm) {
  if (cm.classes() != 2) throw Error(ErrorKind::ShapeMismatch, "metrics need a binary confusion matrix");
  if (cm.total() == 0) throw Error(ErrorKind::EmptyMatrix, "confusion matrix has no entries");
  MetricReport r;
  auto ratio = [&](std::int64_t num, std::int64_t den, const char* name) {
    if (den == 0) {
      r.degenerate.emplace_back(name);
      return 0.0;
    }
    return double(num) / double(den);
  };
  const auto tp = cm.tp(), fn = cm.fn(), tn = cm.tn(), fp = cm.fp();
  r.sensitivity = ratio(tp, tp + fn, "sensitivity");
  r.specificity = ratio(tn, tn + fp, "specificity");
  r.precision = ratio(tp, tp + fp, "precision");
  // Harmonic mean of precision and sensitivity, written in counts.
  r.f1 = ratio(2 * tp, 2 * tp + fp + fn, "f1");
  r.accuracy = ratio(tp + tn, cm.total(), "accuracy");
  return r;
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> positive) {
  if (scores.size() != positive.size()) throw Error(ErrorKind::ShapeMismatch, "scores and labels differ in length");
  std::int64_t n_pos = 0, n_neg = 0;
  for (int p : positive) (p ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorKind::DegenerateLabels, "ROC needs both positive and negative units");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.points.emplace_back(0.0, 0.0);
  std::int64_t tp = 0, fp = 0;
  // Twice the area in units of one positive-negative pair, kept in integers.
  std::int64_t twice_area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    const std::int64_t tp_before = tp, fp_before = fp;
    for (; i < order.size() && scores[order[i]] == threshold; ++i) (positive[order[i]] ? tp : fp)++;
    twice_area += (fp - fp_before) * (tp + tp_before);
    roc.points.emplace_back(double(fp) / double(n_neg), double(tp) / double(n_pos));
  }
  roc.auc = double(twice_area) / (2.0 * double(n_pos) * double(n_neg));
  return roc;
}

RocCurve roc_auc(std::span<const PredictionRecord> preds, int positive_class) {
  std::vector<double> scores;
  std::vector<int> positive;
  scores.reserve(preds.size());
  positive.reserve(preds.size());
  for (const auto& p : preds) {
    if (positive_class < 0 || positive_class >= int(p.scores.size()))
      throw Error(ErrorKind::ShapeMismatch, "positive class outside score vector");
    scores.push_back(p.scores[positive_class]);
    positive.push_back(p.true_label == positive_class ? 1 : 0);
  }
  return roc_curve(scores, positive);
}

Reconstruction reconstruct_confusion(double sensitivity, double specificity, int n_pos, int n_neg, bool strict) {
  if (n_pos <= 0 || n_neg <= 0) throw Error(ErrorKind::InvalidArgument, "class counts must be positive");
  if (sensitivity < 0 || sensitivity > 1 || specificity < 0 || specificity > 1)
    throw Error(ErrorKind::InvalidArgument, "rates must lie in [0,1]");
  constexpr double kTolerance = 0.0005;
  constexpr double kHalfEps = 1e-9;

  Reconstruction r;
  auto nearest = [&](double rate, int n) {
    const double exact = rate * n;
    if (std::abs(exact - std::floor(exact) - 0.5) < kHalfEps) r.ambiguous = true;
    return static_cast<std::int64_t>(std::llround(exact));
  };
  const auto tp = nearest(sensitivity, n_pos);
  const auto tn = nearest(specificity, n_neg);
  r.cm = ConfusionMatrix::binary(tp, n_pos - tp, tn, n_neg - tn);
  // The nearest integer is the only candidate that can lie within tolerance.
  r.feasible = std::abs(double(tp) / n_pos - sensitivity) <= kTolerance + 1e-12 &&
               std::abs(double(tn) / n_neg - specificity) <= kTolerance + 1e-12;
  if (strict && !r.feasible)
    throw Error(ErrorKind::InfeasibleRates, "no integer matrix reproduces the rates within 0.0005");
  return r;
}

EvaluationReport evaluate(std::span<const PredictionRecord> preds, Task task, double cutoff) {
  EvaluationReport report;
  report.task = task;
  report.cutoff = cutoff;
  const int k = num_outputs(task);

  std::map<int, std::vector<PredictionRecord>> by_fold;
  for (const auto& p : preds) by_fold[p.fold].push_back(p);
  for (const auto& [fold, records] : by_fold)
    report.per_fold.push_back(task == Task::Binary ? confusion_binary(records, cutoff) : confusion_multiclass(records));
  report.accumulated = report.per_fold.empty() ? ConfusionMatrix(k) : accumulate(report.per_fold);

  if (task == Task::Binary) {
    MetricReport m = metrics_from_cm(report.accumulated);
    RocCurve roc = roc_auc(preds, 1);
    m.auc = roc.auc;
    m.cutoff = cutoff;
    report.accuracy = m.accuracy;
    report.scopes.push_back(std::move(m));
    report.roc.push_back(std::move(roc));
    return report;
  }

  const auto& counts = report.accumulated.counts;
  report.accuracy = double(counts.trace()) / double(std::max<std::int64_t>(1, counts.sum()));
  for (int c = 0; c < k; ++c) {
    MetricReport m = metrics_from_cm(one_vs_rest(report.accumulated, c));
    RocCurve roc = roc_auc(preds, c);
    m.scope = std::string(label_name(static_cast<ClassLabel>(c)));
    m.auc = roc.auc;
    m.cutoff = cutoff;
    m.accuracy = report.accuracy;
    report.scopes.push_back(std::move(m));
    report.roc.push_back(std::move(roc));
  }
  return report;
}

}  // namespace mvs
