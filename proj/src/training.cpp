#include "mvs/training.hpp"

#include "mvs/error.hpp"
#include "mvs/optim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace mvs {

namespace {

bool better(Monitor m, double candidate, double best) {
  return m == Monitor::TrainingLoss ? candidate < best : candidate > best;
}

double monitored(Monitor m, const EpochRecord& r) { return m == Monitor::TrainingLoss ? r.loss : r.accuracy; }

}  // namespace

std::string_view monitor_name(Monitor m) { return m == Monitor::TrainingLoss ? "loss" : "accuracy"; }

std::optional<Monitor> parse_monitor(std::string_view name) {
  if (name == "loss") return Monitor::TrainingLoss;
  if (name == "accuracy") return Monitor::TrainingAccuracy;
  return std::nullopt;
}

std::string_view variant_name(Variant v) { return v == Variant::MultiView ? "multi-view" : "single-view"; }

std::optional<Variant> parse_variant(std::string_view name) {
  if (name == "multi-view") return Variant::MultiView;
  if (name == "single-view") return Variant::SingleView;
  return std::nullopt;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorKind::InvalidArgument, "learning_rate must be positive");
  if (max_epochs < 1) throw Error(ErrorKind::InvalidArgument, "max_epochs must be positive");
  if (patience < 1 || patience > max_epochs)
    throw Error(ErrorKind::InvalidArgument, "patience must lie in [1, max_epochs]");
  if (augment_target_per_class < 1) throw Error(ErrorKind::InvalidArgument, "augment_target_per_class must be positive");
  if (!(cutoff > 0.0 && cutoff < 1.0)) throw Error(ErrorKind::InvalidArgument, "cutoff must lie in (0,1)");
}

bool EarlyStopping::update(const EpochRecord& record) {
  const double value = monitored(monitor_, record);
  if (!has_best_ || better(monitor_, value, best_)) {
    has_best_ = true;
    best_ = value;
    wait_ = 0;
    return false;
  }
  return ++wait_ >= patience_;
}

bool CheckpointSelector::update(const EpochRecord& record) {
  const double value = monitored(monitor_, record);
  if (has_best_ && !better(monitor_, value, best_)) return false;
  has_best_ = true;
  best_ = value;
  best_epoch_ = record.epoch;
  return true;
}

LoopOutcome run_epochs(const TrainConfig& config, const std::function<EpochRecord(int)>& run_epoch,
                       const std::function<void(int)>& on_best) {
  config.validate();
  LoopOutcome out;
  EarlyStopping stopper(config.early_stop_monitor, config.patience);
  CheckpointSelector selector(config.checkpoint_monitor);
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord record = run_epoch(epoch);
    record.epoch = epoch;
    if (!std::isfinite(record.loss))
      throw Error(ErrorKind::NonFiniteLoss, "non-finite training loss at epoch " + std::to_string(epoch));
    out.curve.epochs.push_back(record);
    if (selector.update(record)) {
      out.best_epoch = epoch;
      if (on_best) on_best(epoch);
    }
    if (stopper.update(record)) {
      out.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  return out;
}

TrainOutcome train_fold(Model& model, std::span<const TrainingUnit> units, const TrainConfig& config, Task task,
                        std::uint64_t stream_key) {
  config.validate();
  if (model.num_classes() != num_outputs(task))
    throw Error(ErrorKind::InvalidArgument, "model output width does not match the task");
  if (units.empty()) throw Error(ErrorKind::InvalidArgument, "no training units");

  const auto params = model.parameters();
  Adam<float> optimizer(config.learning_rate);
  auto dropout_rng = make_stream(config.seed, {tag(StreamTag::Dropout), stream_key});
  std::vector<nn::Matrix<float>> best_weights;
  auto snapshot = [&](int) {
    best_weights.clear();
    for (auto* p : params) best_weights.push_back(p->value);
  };

  std::vector<std::size_t> order(units.size());
  auto run_epoch = [&](int epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = make_stream(config.seed, {tag(StreamTag::Shuffle), stream_key, std::uint64_t(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0;
    std::size_t correct = 0;
    std::vector<Sample> batch;
    std::vector<int> targets;
    nn::Matrix<float> probs;
    for (std::size_t first = 0; first < order.size(); first += std::size_t(config.batch_size)) {
      const std::size_t last = std::min(order.size(), first + std::size_t(config.batch_size));
      batch.clear();
      targets.clear();
      for (std::size_t i = first; i < last; ++i) {
        const auto& unit = units[order[i]];
        batch.emplace_back(unit.views);
        targets.push_back(target_index(unit.label, task));
      }
      const float loss = model.loss_and_gradients(batch, targets, nn::Mode::Train, &dropout_rng, &probs);
      if (!std::isfinite(loss))
        throw Error(ErrorKind::NonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                                  std::to_string(first / config.batch_size + 1));
      optimizer.step(params);
      loss_sum += double(loss) * double(last - first);
      for (Eigen::Index b = 0; b < probs.rows(); ++b) {
        Eigen::Index predicted;
        probs.row(b).maxCoeff(&predicted);
        if (predicted == targets[b]) ++correct;
      }
    }
    EpochRecord record;
    record.loss = loss_sum / double(order.size());
    record.accuracy = double(correct) / double(order.size());
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return record;
  };

  TrainOutcome out = run_epochs(config, run_epoch, snapshot);
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_weights[i];
  return out;
}

std::vector<PredictionRecord> predict(const Model& model, std::span<const TrainingUnit> units, Task task, int fold,
                                      int batch_size) {
  std::vector<PredictionRecord> out;
  out.reserve(units.size());
  std::vector<Sample> batch;
  for (std::size_t first = 0; first < units.size(); first += std::size_t(batch_size)) {
    const std::size_t last = std::min(units.size(), first + std::size_t(batch_size));
    batch.clear();
    for (std::size_t i = first; i < last; ++i) batch.emplace_back(units[i].views);
    const nn::Matrix<float> probs = model.forward(batch, nn::Mode::Eval);
    for (std::size_t i = first; i < last; ++i) {
      PredictionRecord r;
      r.unit_id = units[i].unit_id;
      r.fold = fold;
      r.true_label = target_index(units[i].label, task);
      for (Eigen::Index c = 0; c < probs.cols(); ++c) r.scores.push_back(double(probs(Eigen::Index(i - first), c)));
      out.push_back(std::move(r));
    }
  }
  return out;
}

// Checkpoint layout: magic, parameter count, then per parameter
// (name length, name, rows, cols, row-major float32 values).
namespace {
constexpr char kCheckpointMagic[8] = {'M', 'V', 'S', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error(ErrorKind::IOFailure, "truncated checkpoint");
  return v;
}
}  // namespace

void save_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::IOFailure, "cannot write " + path.string());
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const auto params = model.parameters();
  put<std::uint32_t>(os, std::uint32_t(params.size()));
  for (auto* p : params) {
    put<std::uint32_t>(os, std::uint32_t(p->name.size()));
    os.write(p->name.data(), std::streamsize(p->name.size()));
    put<std::uint32_t>(os, std::uint32_t(p->value.rows()));
    put<std::uint32_t>(os, std::uint32_t(p->value.cols()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) put<float>(os, p->value(r, c));
  }
  if (!os) throw Error(ErrorKind::IOFailure, "failed writing " + path.string());
}

void load_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::MissingFile, path.string());
  char magic[sizeof kCheckpointMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw Error(ErrorKind::IOFailure, path.string() + " is not a checkpoint");
  const auto params = model.parameters();
  if (get<std::uint32_t>(is) != params.size())
    throw Error(ErrorKind::ShapeMismatch, "checkpoint parameter count differs from model");
  for (auto* p : params) {
    std::string name(get<std::uint32_t>(is), '\0');
    is.read(name.data(), std::streamsize(name.size()));
    const auto rows = get<std::uint32_t>(is), cols = get<std::uint32_t>(is);
    if (name != p->name || rows != p->value.rows() || cols != p->value.cols())
      throw Error(ErrorKind::ShapeMismatch, "checkpoint entry " + name + " does not match " + p->name);
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) p->value(r, c) = get<float>(is);
  }
}

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
  return make_stream(master, keys)();
}

namespace {

// Keys of derived seeds; distinct from the stream tags used below them.
constexpr std::uint64_t kFoldKey = 100;

struct FoldData {
  std::vector<TrainingUnit> train;
  std::vector<TrainingUnit> test;
};

FoldData split_fold(const LoadedDataset& data, const FoldPlan& plan, int fold, const CrossValidationOptions& opt,
                    std::uint64_t fold_seed) {
  std::vector<ImageSet> train_sets;
  std::vector<ImageSet> test_sets;
  for (const auto& set : data.sets) (plan.fold_of(set.subject_id) == fold ? test_sets : train_sets).push_back(set);

  FoldData out;
  if (opt.variant == Variant::MultiView) {
    const auto augmented =
        augment_to_target(std::span<const ImageSet>(train_sets), opt.policy, opt.train.augment_target_per_class,
                          fold_seed, opt.task);
    for (const auto& s : augmented) out.train.push_back(to_unit(s));
    for (const auto& s : test_sets) out.test.push_back(to_unit(s));
  } else {
    const auto units = single_view_units(train_sets);
    out.train = augment_to_target(std::span<const TrainingUnit>(units), opt.policy,
                                  opt.train.augment_target_per_class, fold_seed, opt.task);
    out.test = single_view_units(test_sets);
  }

  // Test purity: test units are unmodified originals and share no subject
  // with anything the model trains on.
  std::set<std::string> test_subjects;
  for (const auto& u : out.test) {
    if (u.augmented) throw Error(ErrorKind::InvalidArgument, "augmented unit in test split: " + u.unit_id);
    test_subjects.insert(u.subject_id);
  }
  for (const auto& u : out.train)
    if (test_subjects.count(u.subject_id))
      throw Error(ErrorKind::InvalidArgument, "test subject " + u.subject_id + " leaked into training");
  return out;
}

}  // namespace

CrossValidationResult cross_validate(const LoadedDataset& data, const CrossValidationOptions& opt) {
  opt.train.validate();
  opt.policy.validate();
  if (opt.jobs < 1) throw Error(ErrorKind::InvalidArgument, "jobs must be positive");
  check_buildable(opt.backbone);

  CrossValidationResult result;
  std::vector<SubjectLabel> subjects;
  for (const auto& s : data.sets) subjects.push_back({s.subject_id, s.label});
  result.plan = make_folds(subjects, opt.folds, opt.train.seed);
  result.folds.resize(std::size_t(opt.folds));

  const int classes = num_outputs(opt.task);
  std::mutex log_mutex;
  auto log = [&](const std::string& line) {
    if (!opt.log) return;
    std::lock_guard lock(log_mutex);
    opt.log(line);
  };

  auto run_fold = [&](int fold) {
    const std::uint64_t key = kFoldKey + std::uint64_t(fold);
    const FoldData split = split_fold(data, result.plan, fold, opt, derive_seed(opt.train.seed, {key}));
    ModelOptions model_opt{opt.share_backbone, derive_seed(opt.train.seed, {key, tag(StreamTag::Init)})};
    Model model = opt.variant == Variant::MultiView ? build<float>(opt.backbone, classes, model_opt)
                                                    : build_single_view<float>(opt.backbone, classes, model_opt);
    log("fold " + std::to_string(fold) + ": " + std::to_string(split.train.size()) + " training units, " +
        std::to_string(split.test.size()) + " test units");

    FoldResult& fr = result.folds[std::size_t(fold)];
    fr.fold = fold;
    fr.train_units = int(split.train.size());
    TrainOutcome outcome = train_fold(model, split.train, opt.train, opt.task, key);
    fr.curve = std::move(outcome.curve);
    fr.best_epoch = outcome.best_epoch;
    fr.stopped_early = outcome.stopped_early;
    fr.predictions = predict(model, split.test, opt.task, fold, opt.train.batch_size);
    if (opt.run_dir) {
      const auto dir = *opt.run_dir / "folds" / std::to_string(fold);
      std::filesystem::create_directories(dir);
      fr.checkpoint = dir / "checkpoint.bin";
      save_checkpoint(model, fr.checkpoint);
    }
    const auto& last = fr.curve.epochs.back();
    log("fold " + std::to_string(fold) + ": " + std::to_string(last.epoch) + " epochs, checkpoint epoch " +
        std::to_string(fr.best_epoch) + ", final loss " + std::to_string(last.loss));
  };

  if (opt.jobs == 1) {
    for (int f = 0; f < opt.folds; ++f) run_fold(f);
  } else {
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(std::size_t(opt.folds));
    std::vector<std::thread> workers;
    for (int w = 0; w < std::min(opt.jobs, opt.folds); ++w) {
      workers.emplace_back([&] {
        for (int f; (f = next++) < opt.folds;) {
          try {
            run_fold(f);
          } catch (...) {
            errors[std::size_t(f)] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<PredictionRecord> all;
  for (const auto& fr : result.folds) all.insert(all.end(), fr.predictions.begin(), fr.predictions.end());
  result.report = evaluate(all, opt.task, opt.train.cutoff);
  return result;
}

}  // namespace mvs
