#pragma once

#include "mvs/run.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mvs {

/// Everything a report needs, read back from a run directory.
struct RunArtifacts {
  std::filesystem::path dir;
  RunConfig config;
  std::vector<PredictionRecord> predictions;
  /// Indexed by fold.
  std::vector<TrainingCurve> curves;
};

/// Missing or malformed artifacts raise SchemaViolation naming the file.
RunArtifacts load_run(const std::filesystem::path& dir);

/// Column order: Sensitivity, Specificity, Precision, F1-Score, AUC, Accuracy.
std::string metrics_table(const EvaluationReport& report, std::string_view title);
std::string metrics_csv(const EvaluationReport& report);
std::string roc_csv(const RocCurve& roc);
/// fold,epoch,loss,accuracy,seconds
std::string curves_csv(std::span<const TrainingCurve> curves);

struct LabelledReport {
  std::string variant;
  EvaluationReport report;
};

/// metric,variant,value rows; multiclass metrics are prefixed with the class.
std::string radar_csv(std::span<const LabelledReport> reports);

/// Writes report.txt, metrics.csv, confusion.csv, roc_<scope>.csv and
/// curves.csv per run (in <out>/<variant>/ when several runs are given) and
/// radar.csv for two or more runs. Returns the rendered tables.
std::string write_report(std::span<const RunArtifacts> runs, const std::filesystem::path& out_dir);

}  // namespace mvs
