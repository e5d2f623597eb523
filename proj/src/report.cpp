#include "mvs/report.hpp"

#include "mvs/error.hpp"

#include <cstdio>
#include <set>

namespace mvs {

namespace {

struct Column {
  const char* header;
  const char* key;
  double MetricReport::*field;
};

constexpr Column kColumns[] = {
    {"Sensitivity", "sensitivity", &MetricReport::sensitivity},
    {"Specificity", "specificity", &MetricReport::specificity},
    {"Precision", "precision", &MetricReport::precision},
    {"F1-Score", "f1", &MetricReport::f1},
    {"AUC", "auc", &MetricReport::auc},
    {"Accuracy", "accuracy", &MetricReport::accuracy},
};

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

std::filesystem::path require(const std::filesystem::path& p) {
  if (!std::filesystem::is_regular_file(p)) throw Error(ErrorKind::SchemaViolation, "missing artifact " + p.string());
  return p;
}

}  // namespace

RunArtifacts load_run(const std::filesystem::path& dir) {
  RunArtifacts run;
  run.dir = dir;
  run.config = parse_run_config(read_text(require(dir / "run.json")), dir);
  for (int f = 0; f < run.config.folds; ++f) {
    const auto fold_dir = dir / "folds" / std::to_string(f);
    const auto preds = parse_predictions_csv(read_text(require(fold_dir / "predictions.csv")), f);
    run.predictions.insert(run.predictions.end(), preds.begin(), preds.end());
    run.curves.push_back(parse_curve_csv(read_text(require(fold_dir / "curve.csv"))));
  }
  return run;
}

std::string metrics_table(const EvaluationReport& report, std::string_view title) {
  constexpr std::size_t kScopeWidth = 10, kWidth = 13;
  std::string out(title);
  out += "\n" + pad("", kScopeWidth);
  for (const auto& c : kColumns) out += pad(c.header, kWidth);
  out += "\n";
  for (const auto& m : report.scopes) {
    out += pad(m.scope, kScopeWidth);
    for (const auto& c : kColumns) out += pad(fixed(m.*c.field, 3), kWidth);
    out += "\n";
  }
  out += "units: " + std::to_string(report.accumulated.total()) + ", cutoff: " + fixed(report.cutoff, 2) + "\n";
  return out;
}

std::string metrics_csv(const EvaluationReport& report) {
  std::string out = "scope";
  for (const auto& c : kColumns) out += std::string(",") + c.key;
  out += ",cutoff,degenerate\n";
  for (const auto& m : report.scopes) {
    out += m.scope;
    for (const auto& c : kColumns) out += "," + fixed(m.*c.field, 6);
    out += "," + fixed(m.cutoff, 6) + ",";
    for (std::size_t i = 0; i < m.degenerate.size(); ++i) out += (i ? ";" : "") + m.degenerate[i];
    out += "\n";
  }
  return out;
}

std::string roc_csv(const RocCurve& roc) {
  std::string out = "fpr,tpr\n";
  for (const auto& [fpr, tpr] : roc.points) out += fixed(fpr, 6) + "," + fixed(tpr, 6) + "\n";
  return out;
}

std::string curves_csv(std::span<const TrainingCurve> curves) {
  std::string out = "fold,epoch,loss,accuracy,seconds\n";
  for (std::size_t f = 0; f < curves.size(); ++f)
    for (const auto& e : curves[f].epochs)
      out += std::to_string(f) + "," + std::to_string(e.epoch) + "," + fixed(e.loss, 6) + "," + fixed(e.accuracy, 6) +
             "," + fixed(e.seconds, 3) + "\n";
  return out;
}

std::string radar_csv(std::span<const LabelledReport> reports) {
  std::string out = "metric,variant,value\n";
  for (const auto& r : reports)
    for (const auto& m : r.report.scopes)
      for (const auto& c : kColumns) {
        const std::string metric = m.scope == "overall" ? c.key : m.scope + ":" + c.key;
        out += metric + "," + r.variant + "," + fixed(m.*c.field, 6) + "\n";
      }
  return out;
}

std::string write_report(std::span<const RunArtifacts> runs, const std::filesystem::path& out_dir) {
  if (runs.empty()) throw Error(ErrorKind::InvalidArgument, "no runs to report");
  std::vector<LabelledReport> labelled;
  std::set<std::string> used;
  for (const auto& run : runs) {
    std::string label(variant_name(run.config.variant));
    if (used.count(label)) label += "-" + run.dir.filename().string();
    used.insert(label);
    labelled.push_back({label, evaluate(run.predictions, run.config.task, run.config.train.cutoff)});
  }

  std::string rendered;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& report = labelled[i].report;
    const auto dir = runs.size() == 1 ? out_dir : out_dir / labelled[i].variant;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::IOFailure, "cannot create " + dir.string() + ": " + ec.message());
    const std::string table = metrics_table(report, labelled[i].variant + " (" + runs[i].dir.string() + ")");
    rendered += table + "\n";
    write_text(dir / "report.txt", table);
    write_text(dir / "metrics.csv", metrics_csv(report));
    write_text(dir / "confusion.csv", confusion_to_csv(report.accumulated, runs[i].config.task));
    for (std::size_t s = 0; s < report.scopes.size(); ++s)
      write_text(dir / ("roc_" + report.scopes[s].scope + ".csv"), roc_csv(report.roc[s]));
    write_text(dir / "curves.csv", curves_csv(runs[i].curves));
  }
  if (runs.size() > 1) write_text(out_dir / "radar.csv", radar_csv(labelled));
  return rendered;
}

}  // namespace mvs
