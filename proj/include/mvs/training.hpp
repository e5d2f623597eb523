#pragma once

#include "mvs/augment.hpp"
#include "mvs/evaluation.hpp"
#include "mvs/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mvs {

/// Quantity watched by early stopping or checkpoint selection. Loss is
/// minimized, accuracy maximized.
enum class Monitor : std::uint8_t { TrainingLoss, TrainingAccuracy };

std::string_view monitor_name(Monitor m);
std::optional<Monitor> parse_monitor(std::string_view name);

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 1e-5;
  int max_epochs = 300;
  int patience = 5;
  int augment_target_per_class = 1000;
  double cutoff = 0.5;
  std::uint64_t seed = 0;
  Monitor early_stop_monitor = Monitor::TrainingLoss;
  Monitor checkpoint_monitor = Monitor::TrainingAccuracy;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0;
  double accuracy = 0;
  double seconds = 0;
};

struct TrainingCurve {
  std::vector<EpochRecord> epochs;
};

/// Stops once `patience` consecutive epochs fail to strictly improve on the
/// best value seen so far.
class EarlyStopping {
public:
  EarlyStopping(Monitor monitor, int patience) : monitor_(monitor), patience_(patience) {}
  /// Returns true when training should stop after this epoch.
  bool update(const EpochRecord& record);
  int wait() const { return wait_; }

private:
  Monitor monitor_;
  int patience_;
  int wait_ = 0;
  bool has_best_ = false;
  double best_ = 0;
};

/// Tracks the epoch with the best monitored value; ties keep the earliest.
class CheckpointSelector {
public:
  explicit CheckpointSelector(Monitor monitor) : monitor_(monitor) {}
  /// Returns true when this epoch becomes the new best.
  bool update(const EpochRecord& record);
  int best_epoch() const { return best_epoch_; }

private:
  Monitor monitor_;
  int best_epoch_ = 0;
  bool has_best_ = false;
  double best_ = 0;
};

struct LoopOutcome {
  TrainingCurve curve;
  int best_epoch = 0;
  bool stopped_early = false;
};

/// Epoch driver shared by train_fold and tests. `run_epoch(e)` trains one
/// epoch and reports it; `on_best(e)` fires when epoch e becomes the checkpoint.
LoopOutcome run_epochs(const TrainConfig& config, const std::function<EpochRecord(int)>& run_epoch,
                       const std::function<void(int)>& on_best = {});

using TrainOutcome = LoopOutcome;

/// Mini-batch Adam on softmax cross-entropy. On return the model holds the
/// weights of the checkpoint epoch. `stream_key` separates the shuffle and
/// dropout streams of concurrent folds.
TrainOutcome train_fold(Model& model, std::span<const TrainingUnit> units, const TrainConfig& config, Task task,
                        std::uint64_t stream_key = 0);

/// Eval-mode class probabilities for each unit.
std::vector<PredictionRecord> predict(const Model& model, std::span<const TrainingUnit> units, Task task, int fold,
                                      int batch_size = 32);

void save_checkpoint(Model& model, const std::filesystem::path& path);
/// Parameter names and shapes must match the model exactly.
void load_checkpoint(Model& model, const std::filesystem::path& path);

enum class Variant : std::uint8_t { MultiView, SingleView };
std::string_view variant_name(Variant v);
std::optional<Variant> parse_variant(std::string_view name);

struct CrossValidationOptions {
  Task task = Task::Binary;
  Variant variant = Variant::MultiView;
  BackboneSpec backbone;
  bool share_backbone = true;
  TrainConfig train;
  AugmentationPolicy policy;
  int folds = 5;
  /// Number of folds trained concurrently.
  int jobs = 1;
  /// When set, checkpoints are written to <dir>/folds/<i>/.
  std::optional<std::filesystem::path> run_dir;
  std::function<void(const std::string&)> log;
};

struct FoldResult {
  int fold = 0;
  std::filesystem::path checkpoint;
  TrainingCurve curve;
  int best_epoch = 0;
  bool stopped_early = false;
  int train_units = 0;
  std::vector<PredictionRecord> predictions;
};

struct CrossValidationResult {
  FoldPlan plan;
  std::vector<FoldResult> folds;
  EvaluationReport report;
};

/// Seed for a derived consumer of the master seed.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys);

/// Patient-wise k-fold protocol: folds over completed subjects, fresh model
/// per fold, augmentation of the training portion only, prediction on the
/// untouched test portion, metrics from the accumulated confusion matrix.
CrossValidationResult cross_validate(const LoadedDataset& data, const CrossValidationOptions& options);

}  // namespace mvs
