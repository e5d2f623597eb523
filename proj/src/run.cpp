#include "mvs/run.hpp"

#include "mvs/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mvs {

using nlohmann::ordered_json;

namespace {

std::string_view task_name(Task t) { return t == Task::Binary ? "binary" : "multiclass"; }

Task parse_task(const std::string& name) {
  if (name == "binary") return Task::Binary;
  if (name == "multiclass") return Task::Multiclass;
  throw Error(ErrorKind::SchemaViolation, "task: expected binary or multiclass, got " + name);
}

template <typename Fn>
void for_each_key(const ordered_json& obj, const std::string& where, Fn&& fn) {
  if (!obj.is_object()) throw Error(ErrorKind::SchemaViolation, where + ": expected an object");
  for (const auto& [key, value] : obj.items())
    if (!fn(key, value)) throw Error(ErrorKind::SchemaViolation, where + key + ": unknown key");
}

void parse_train(const ordered_json& obj, TrainConfig& t) {
  for_each_key(obj, "train.", [&](const std::string& key, const ordered_json& v) {
    if (key == "batch_size") t.batch_size = v.get<int>();
    else if (key == "learning_rate") t.learning_rate = v.get<double>();
    else if (key == "max_epochs") t.max_epochs = v.get<int>();
    else if (key == "patience") t.patience = v.get<int>();
    else if (key == "augment_target_per_class") t.augment_target_per_class = v.get<int>();
    else if (key == "cutoff") t.cutoff = v.get<double>();
    else if (key == "early_stop_monitor" || key == "checkpoint_monitor") {
      const auto m = parse_monitor(v.get<std::string>());
      if (!m) throw Error(ErrorKind::SchemaViolation, "train." + key + ": expected loss or accuracy");
      (key == "early_stop_monitor" ? t.early_stop_monitor : t.checkpoint_monitor) = *m;
    } else return false;
    return true;
  });
}

void parse_augmentation(const ordered_json& obj, AugmentationPolicy& p) {
  for_each_key(obj, "augmentation.", [&](const std::string& key, const ordered_json& v) {
    if (key == "shift_frac") p.shift_frac = v.get<double>();
    else if (key == "shear_deg") p.shear_deg = v.get<double>();
    else if (key == "rotation_deg") p.rotation_deg = v.get<double>();
    else if (key == "zoom_frac") p.zoom_frac = v.get<double>();
    else if (key == "allow_flip") p.allow_flip = v.get<bool>();
    else if (key == "per_view_independent") p.per_view_independent = v.get<bool>();
    else return false;
    return true;
  });
}

void parse_backbone(const ordered_json& v, RunConfig& c) {
  if (v.is_string()) {
    c.backbone = v.get<std::string>();
    return;
  }
  for_each_key(v, "backbone.", [&](const std::string& key, const ordered_json& x) {
    if (key == "name") c.backbone = x.get<std::string>();
    else if (key == "feature_dim") c.feature_dim = x.get<int>();
    else if (key == "weights") {
      const auto w = x.get<std::string>();
      if (w == "random") c.weights = WeightInit::Random;
      else if (w == "imagenet") c.weights = WeightInit::PretrainedImageNet;
      else throw Error(ErrorKind::SchemaViolation, "backbone.weights: expected random or imagenet");
    } else if (key == "trainable") c.backbone_trainable = x.get<bool>();
    else if (key == "shared") c.share_backbone = x.get<bool>();
    else return false;
    return true;
  });
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

BackboneSpec RunConfig::backbone_spec() const {
  BackboneSpec spec = mvs::backbone_spec(backbone, feature_dim);
  spec.weight_init = weights;
  if (backbone_trainable) spec.trainable = *backbone_trainable;
  return spec;
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::SchemaViolation, e.what());
  }
  RunConfig c;
  bool has_dataset = false, has_output = false;
  try {
    for_each_key(doc, "", [&](const std::string& key, const ordered_json& v) {
      if (key == "task") c.task = parse_task(v.get<std::string>());
      else if (key == "variant") {
        const auto variant = parse_variant(v.get<std::string>());
        if (!variant) throw Error(ErrorKind::SchemaViolation, "variant: expected multi-view or single-view");
        c.variant = *variant;
      } else if (key == "backbone") parse_backbone(v, c);
      else if (key == "folds") c.folds = v.get<int>();
      else if (key == "train") parse_train(v, c.train);
      else if (key == "augmentation") parse_augmentation(v, c.augmentation);
      else if (key == "dataset") c.dataset = resolve(base_dir, v.get<std::string>()), has_dataset = true;
      else if (key == "output") c.output = resolve(base_dir, v.get<std::string>()), has_output = true;
      else if (key == "seed") c.train.seed = v.get<std::uint64_t>();
      else return false;
      return true;
    });
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, e.what());
  }
  if (!has_dataset) throw Error(ErrorKind::SchemaViolation, "dataset: required");
  if (!has_output) throw Error(ErrorKind::SchemaViolation, "output: required");
  if (c.folds < 2) throw Error(ErrorKind::SchemaViolation, "folds must be at least 2");
  c.train.validate();
  c.augmentation.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text(path), std::filesystem::absolute(path).parent_path());
}

std::string run_config_to_string(const RunConfig& c) {
  ordered_json doc;
  doc["task"] = task_name(c.task);
  doc["variant"] = variant_name(c.variant);
  const BackboneSpec spec = c.backbone_spec();
  doc["backbone"] = {{"name", spec.name},
                     {"feature_dim", spec.feature_dim},
                     {"weights", spec.weight_init == WeightInit::Random ? "random" : "imagenet"},
                     {"trainable", spec.trainable},
                     {"shared", c.share_backbone}};
  doc["folds"] = c.folds;
  const auto& t = c.train;
  doc["train"] = {{"batch_size", t.batch_size},
                  {"learning_rate", t.learning_rate},
                  {"max_epochs", t.max_epochs},
                  {"patience", t.patience},
                  {"augment_target_per_class", t.augment_target_per_class},
                  {"cutoff", t.cutoff},
                  {"early_stop_monitor", monitor_name(t.early_stop_monitor)},
                  {"checkpoint_monitor", monitor_name(t.checkpoint_monitor)}};
  const auto& a = c.augmentation;
  doc["augmentation"] = {{"shift_frac", a.shift_frac},     {"shear_deg", a.shear_deg},
                         {"rotation_deg", a.rotation_deg}, {"zoom_frac", a.zoom_frac},
                         {"allow_flip", a.allow_flip},     {"per_view_independent", a.per_view_independent}};
  doc["dataset"] = c.dataset.string();
  doc["output"] = c.output.string();
  doc["seed"] = t.seed;
  return doc.dump(2) + "\n";
}

std::optional<std::uint64_t> parse_seed_override(const char* env_value) {
  if (!env_value) return std::nullopt;
  const std::string_view text(env_value);
  std::uint64_t seed = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), seed);
  if (text.empty() || ec != std::errc() || end != text.data() + text.size())
    throw Error(ErrorKind::SchemaViolation, "MVS_SEED must be an unsigned integer");
  return seed;
}

void apply_seed_override(RunConfig& config, const char* env_value) {
  if (const auto seed = parse_seed_override(env_value)) config.train.seed = *seed;
}

std::string metrics_to_string(const EvaluationReport& report) {
  ordered_json doc = ordered_json::object();
  for (const auto& m : report.scopes) {
    doc[m.scope] = {{"sensitivity", m.sensitivity}, {"specificity", m.specificity}, {"precision", m.precision},
                    {"f1", m.f1},                   {"auc", m.auc},                 {"accuracy", m.accuracy},
                    {"cutoff", m.cutoff},           {"degenerate", m.degenerate}};
  }
  return doc.dump(2) + "\n";
}

std::string curve_to_csv(const TrainingCurve& curve) {
  std::string out = "epoch,loss,accuracy,seconds\n";
  for (const auto& e : curve.epochs)
    out += std::to_string(e.epoch) + "," + format_double(e.loss) + "," + format_double(e.accuracy) + "," +
           format_double(e.seconds) + "\n";
  return out;
}

TrainingCurve parse_curve_csv(std::string_view text) {
  TrainingCurve curve;
  std::istringstream in{std::string(text)};
  std::string line;
  std::getline(in, line);
  if (line != "epoch,loss,accuracy,seconds") throw Error(ErrorKind::SchemaViolation, "curve.csv: bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    char comma;
    std::istringstream row(line);
    if (!(row >> r.epoch >> comma >> r.loss >> comma >> r.accuracy >> comma >> r.seconds))
      throw Error(ErrorKind::SchemaViolation, "curve.csv: malformed row: " + line);
    curve.epochs.push_back(r);
  }
  return curve;
}

std::string predictions_to_csv(std::span<const PredictionRecord> predictions) {
  const std::size_t classes = predictions.empty() ? 2 : predictions.front().scores.size();
  std::string out = "subject_or_image_id,true_label";
  for (std::size_t c = 0; c < classes; ++c) out += ",score_" + std::to_string(c);
  out += "\n";
  for (const auto& p : predictions) {
    out += p.unit_id + "," + std::to_string(p.true_label);
    for (double s : p.scores) out += "," + format_double(s);
    out += "\n";
  }
  return out;
}

std::vector<PredictionRecord> parse_predictions_csv(std::string_view text, int fold) {
  std::vector<PredictionRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::getline(in, line);
  if (line.rfind("subject_or_image_id,true_label,score_0", 0) != 0)
    throw Error(ErrorKind::SchemaViolation, "predictions.csv: bad header");
  const auto classes = std::count(line.begin(), line.end(), ',') - 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    PredictionRecord r;
    r.fold = fold;
    std::string field;
    std::getline(row, r.unit_id, ',');
    try {
      std::getline(row, field, ',');
      r.true_label = std::stoi(field);
      while (std::getline(row, field, ',')) r.scores.push_back(std::stod(field));
    } catch (const std::exception&) {
      throw Error(ErrorKind::SchemaViolation, "predictions.csv: malformed row: " + line);
    }
    if (std::ssize(r.scores) != classes || r.true_label < 0 || r.true_label >= classes)
      throw Error(ErrorKind::SchemaViolation, "predictions.csv: malformed row: " + line);
    out.push_back(std::move(r));
  }
  return out;
}

std::string confusion_to_csv(const ConfusionMatrix& cm, Task task) {
  auto name = [&](int c) -> std::string {
    if (task == Task::Binary) return c == 1 ? "positive" : "negative";
    return std::string(label_name(static_cast<ClassLabel>(c)));
  };
  std::string out = "true\\predicted";
  for (int c = 0; c < cm.classes(); ++c) out += "," + name(c);
  out += "\n";
  for (int r = 0; r < cm.classes(); ++r) {
    out += name(r);
    for (int c = 0; c < cm.classes(); ++c) out += "," + std::to_string(cm.counts(r, c));
    out += "\n";
  }
  return out;
}

void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IOFailure, "cannot write " + path.string());
  out.write(text.data(), std::streamsize(text.size()));
  if (!out) throw Error(ErrorKind::IOFailure, "failed writing " + path.string());
}

CrossValidationResult execute_run(const RunConfig& config, int jobs,
                                  const std::function<void(const std::string&)>& log) {
  const DatasetManifest manifest = load_manifest(config.dataset);
  const LoadedDataset data = load_dataset(manifest);
  if (log)
    for (const auto& e : data.excluded) log("excluded " + e.subject_id + ": " + e.reason);

  std::error_code ec;
  std::filesystem::create_directories(config.output, ec);
  if (ec) throw Error(ErrorKind::IOFailure, "cannot create " + config.output.string() + ": " + ec.message());
  write_text(config.output / "run.json", run_config_to_string(config));

  CrossValidationOptions opt;
  opt.task = config.task;
  opt.variant = config.variant;
  opt.backbone = config.backbone_spec();
  opt.share_backbone = config.share_backbone;
  opt.train = config.train;
  opt.policy = config.augmentation;
  opt.folds = config.folds;
  opt.jobs = jobs;
  opt.run_dir = config.output;
  opt.log = log;
  CrossValidationResult result = cross_validate(data, opt);

  write_text(config.output / "fold_plan.json", fold_plan_to_string(result.plan));
  for (const auto& fr : result.folds) {
    const auto dir = config.output / "folds" / std::to_string(fr.fold);
    write_text(dir / "curve.csv", curve_to_csv(fr.curve));
    write_text(dir / "predictions.csv", predictions_to_csv(fr.predictions));
    const BackboneSpec& spec = opt.backbone;
    const int views = config.variant == Variant::MultiView ? int(kNumViews) : 1;
    const int classes = num_outputs(config.task);
    const std::int64_t bodies = config.share_backbone ? 1 : views;
    const ParameterCount params =
        bodies * backbone_parameters(spec) + ParameterCount{head_parameter_count(spec.feature_dim, views, classes), 0};
    ordered_json sidecar = {{"backbone", spec.name},
                            {"feature_dim", spec.feature_dim},
                            {"views", views},
                            {"classes", classes},
                            {"hidden_width", hidden_width_for(spec.feature_dim, views)},
                            {"dropout_rate", HeadConfig{}.dropout_rate},
                            {"shared", config.share_backbone},
                            {"seed", config.train.seed},
                            {"parameters",
                             {{"trainable", params.trainable},
                              {"non_trainable", params.non_trainable},
                              {"total", params.total()}}},
                            {"epoch", fr.best_epoch},
                            {"accuracy", fr.curve.epochs[std::size_t(fr.best_epoch - 1)].accuracy},
                            {"epochs_run", fr.curve.epochs.size()},
                            {"stopped_early", fr.stopped_early},
                            {"train_units", fr.train_units}};
    write_text(dir / "checkpoint.json", sidecar.dump(2) + "\n");
  }
  write_text(config.output / "metrics.json", metrics_to_string(result.report));
  write_text(config.output / "confusion.csv", confusion_to_csv(result.report.accumulated, config.task));
  return result;
}

}  // namespace mvs
