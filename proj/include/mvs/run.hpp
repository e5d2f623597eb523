#pragma once

#include "mvs/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace mvs {

/// Declarative description of one cross-validation run. Field names mirror
/// the JSON document; relative paths resolve against the config file's
/// directory.
struct RunConfig {
  Task task = Task::Binary;
  Variant variant = Variant::MultiView;
  std::string backbone = "tinyconv";
  std::optional<int> feature_dim;
  WeightInit weights = WeightInit::Random;
  std::optional<bool> backbone_trainable;
  bool share_backbone = true;
  int folds = 5;
  TrainConfig train;
  AugmentationPolicy augmentation;
  std::filesystem::path dataset;
  std::filesystem::path output;

  BackboneSpec backbone_spec() const;
};

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
/// Resolved config with absolute paths; parse_run_config reads it back.
std::string run_config_to_string(const RunConfig& config);

/// Value of the MVS_SEED override, if set. Throws SchemaViolation when it is
/// not an unsigned integer.
std::optional<std::uint64_t> parse_seed_override(const char* env_value);
/// Replaces the master seed with the MVS_SEED value when it is set.
void apply_seed_override(RunConfig& config, const char* env_value);

/// Runs cross-validation and writes the run directory:
/// run.json, fold_plan.json, metrics.json, confusion.csv and, per fold,
/// folds/<i>/{checkpoint.bin, checkpoint.json, curve.csv, predictions.csv}.
CrossValidationResult execute_run(const RunConfig& config, int jobs = 1,
                                  const std::function<void(const std::string&)>& log = {});

/// metrics.json text: scope -> metric values, cutoff and degenerate flags.
std::string metrics_to_string(const EvaluationReport& report);

std::string curve_to_csv(const TrainingCurve& curve);
std::string predictions_to_csv(std::span<const PredictionRecord> predictions);
/// Reads predictions.csv; `fold` is stamped on every record.
std::vector<PredictionRecord> parse_predictions_csv(std::string_view text, int fold);
TrainingCurve parse_curve_csv(std::string_view text);
std::string confusion_to_csv(const ConfusionMatrix& cm, Task task);

/// Keeps freed training buffers in the process instead of returning them to
/// the OS after every step. Only has an effect on glibc.
void retain_freed_memory();

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace mvs
