#include "doctest.h"
#include "support.hpp"

#include "mvs/synthetic.hpp"
#include "mvs/training.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <set>

using namespace mvs;
using mvs::test::TempDir;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an mvs::Error");
  return ErrorKind::InvalidArgument;
}

/// Replays a fixed sequence of (loss, accuracy) epochs through run_epochs.
LoopOutcome replay(const TrainConfig& config, const std::vector<std::pair<double, double>>& epochs,
                   std::vector<int>* bests = nullptr) {
  return run_epochs(
      config,
      [&](int e) {
        const auto& [loss, acc] = epochs.at(std::size_t(e - 1));
        return EpochRecord{0, loss, acc, 0.0};
      },
      [&](int e) {
        if (bests) bests->push_back(e);
      });
}

/// Units whose class is the brightness of every view, so a few epochs separate them.
std::vector<TrainingUnit> brightness_units(int per_class, int views, Rng& rng) {
  std::vector<TrainingUnit> units;
  std::normal_distribution<float> noise(0.f, 0.05f);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < per_class; ++i) {
      TrainingUnit u;
      u.unit_id = u.subject_id = "u" + std::to_string(c) + "_" + std::to_string(i);
      u.label = c ? ClassLabel::Stroke : ClassLabel::Control;
      for (int v = 0; v < views; ++v) {
        Image img(224, 224, c ? 0.7f : 0.3f);
        for (auto& ch : img.channels) ch += noise(rng);
        u.views.push_back(test::shared(std::move(img)));
      }
      units.push_back(std::move(u));
    }
  return units;
}

/// In-memory dataset; all subjects share the same four images per class so
/// large cohorts stay cheap.
LoadedDataset shared_image_dataset(std::array<int, kNumClasses> counts) {
  std::array<ImageRef, kNumClasses> img;
  for (int c = 0; c < int(kNumClasses); ++c) img[c] = test::shared(Image(224, 224, 0.2f + 0.3f * c));
  LoadedDataset data;
  for (int c = 0; c < int(kNumClasses); ++c)
    for (int i = 0; i < counts[c]; ++i) {
      ImageSet s;
      s.subject_id = std::string(label_name(kAllClasses[c])) + std::to_string(i);
      s.label = kAllClasses[c];
      s.images = {img[c], img[c], img[c], img[c]};
      data.sets.push_back(std::move(s));
    }
  return data;
}

}  // namespace

TEST_CASE("train config") {
  const TrainConfig c;
  CHECK(c.batch_size == 32);
  CHECK(c.learning_rate == 1e-5);
  CHECK(c.max_epochs == 300);
  CHECK(c.patience == 5);
  CHECK(c.augment_target_per_class == 1000);
  CHECK(c.cutoff == 0.5);
  CHECK(c.early_stop_monitor == Monitor::TrainingLoss);
  CHECK(c.checkpoint_monitor == Monitor::TrainingAccuracy);
  CHECK_NOTHROW(c.validate());

  auto bad = [](auto mutate) {
    TrainConfig t;
    mutate(t);
    return kind_of([&] { t.validate(); });
  };
  CHECK(bad([](TrainConfig& t) { t.batch_size = 0; }) == ErrorKind::InvalidArgument);
  CHECK(bad([](TrainConfig& t) { t.learning_rate = 0; }) == ErrorKind::InvalidArgument);
  CHECK(bad([](TrainConfig& t) { t.max_epochs = 3; }) == ErrorKind::InvalidArgument);
  CHECK(bad([](TrainConfig& t) { t.patience = 0; }) == ErrorKind::InvalidArgument);

  CHECK(parse_monitor("loss") == Monitor::TrainingLoss);
  CHECK(parse_monitor("accuracy") == Monitor::TrainingAccuracy);
  CHECK_FALSE(parse_monitor("val_loss"));
  CHECK(monitor_name(Monitor::TrainingAccuracy) == "accuracy");
  CHECK(parse_variant("single-view") == Variant::SingleView);
  CHECK(variant_name(Variant::MultiView) == "multi-view");
}

TEST_CASE("epoch loop") {
  SUBCASE("five-epoch plateau stops at its end") {
    TrainConfig c;
    std::vector<std::pair<double, double>> epochs{{1.0, 0.5}, {0.8, 0.6}};
    for (int i = 0; i < 5; ++i) epochs.push_back({0.8, 0.6});
    for (int i = 0; i < 300; ++i) epochs.push_back({0.1, 0.9});
    const auto out = replay(c, epochs);
    CHECK(out.stopped_early);
    CHECK(out.curve.epochs.size() == 7);
    CHECK(out.best_epoch == 2);
  }
  SUBCASE("a single epoch") {
    TrainConfig c;
    c.max_epochs = 1;
    c.patience = 1;
    const auto out = replay(c, {{2.0, 0.1}});
    CHECK(out.curve.epochs.size() == 1);
    CHECK(out.best_epoch == 1);
    CHECK_FALSE(out.stopped_early);
    CHECK(out.curve.epochs[0].epoch == 1);
  }
  SUBCASE("monitors can be swapped") {
    TrainConfig c;
    c.max_epochs = 6;
    c.patience = 2;
    c.early_stop_monitor = Monitor::TrainingAccuracy;
    c.checkpoint_monitor = Monitor::TrainingLoss;
    const auto out = replay(c, {{1.0, 0.5}, {0.5, 0.5}, {0.7, 0.5}, {0.1, 0.9}, {0.1, 0.9}, {0.1, 0.9}});
    CHECK(out.stopped_early);
    CHECK(out.curve.epochs.size() == 3);
    CHECK(out.best_epoch == 2);
  }
  SUBCASE("non-finite loss aborts") {
    TrainConfig c;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK(kind_of([&] { replay(c, {{1.0, 0.5}, {nan, 0.5}}); }) == ErrorKind::NonFiniteLoss);
    CHECK(kind_of([&] { replay(c, {{std::numeric_limits<double>::infinity(), 0.5}}); }) == ErrorKind::NonFiniteLoss);
  }
  SUBCASE("random curves") {
    auto rng = make_stream(31);
    for (int trial = 0; trial < 500; ++trial) {
      TrainConfig c;
      c.max_epochs = std::uniform_int_distribution<int>(1, 40)(rng);
      c.patience = std::uniform_int_distribution<int>(1, c.max_epochs)(rng);
      std::uniform_int_distribution<int> level(0, 6);
      std::vector<std::pair<double, double>> epochs;
      for (int e = 0; e < c.max_epochs; ++e) epochs.push_back({level(rng) / 6.0, level(rng) / 6.0});
      std::vector<int> bests;
      const auto out = replay(c, epochs, &bests);
      const auto& curve = out.curve.epochs;
      const int ran = int(curve.size());
      REQUIRE(ran >= 1);
      CHECK(ran <= c.max_epochs);
      for (int e = 0; e < ran; ++e) CHECK(curve[e].epoch == e + 1);

      // checkpoint: highest accuracy, earliest on ties
      const int b = out.best_epoch;
      REQUIRE(b >= 1);
      for (int e = 0; e < ran; ++e) {
        CHECK(curve[b - 1].accuracy >= curve[e].accuracy);
        if (e + 1 < b) CHECK(curve[e].accuracy < curve[b - 1].accuracy);
      }
      CHECK(bests.back() == b);

      // early stop: reference count of trailing non-improving epochs
      double best_loss = curve[0].loss;
      int wait = 0, first_stop = 0;
      for (int e = 1; e < ran && !first_stop; ++e) {
        if (curve[e].loss < best_loss) best_loss = curve[e].loss, wait = 0;
        else if (++wait >= c.patience) first_stop = e + 1;
      }
      if (out.stopped_early) {
        CHECK(ran == first_stop);
        CHECK(ran < c.max_epochs);
      } else {
        CHECK(ran == c.max_epochs);
        CHECK((first_stop == 0 || first_stop == c.max_epochs));
      }
    }
  }
}

TEST_CASE("train_fold and predict") {
  auto rng = make_stream(12);
  const auto units = brightness_units(6, 4, rng);
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.batch_size = 4;
  c.max_epochs = 6;
  c.patience = 6;
  c.seed = 3;

  auto model = build(backbone_spec("tinyconv", 8), 2, {.seed = 1});
  const auto out = train_fold(model, units, c, Task::Binary);
  REQUIRE(out.curve.epochs.size() == 6);
  for (const auto& e : out.curve.epochs) {
    CHECK(std::isfinite(e.loss));
    CHECK(e.accuracy >= 0);
    CHECK(e.accuracy <= 1);
    CHECK(e.seconds >= 0);
  }
  CHECK(out.curve.epochs.back().loss < out.curve.epochs.front().loss);
  const int b = out.best_epoch;
  for (const auto& e : out.curve.epochs) CHECK(out.curve.epochs[b - 1].accuracy >= e.accuracy);

  const auto preds = predict(model, units, Task::Binary, 3, 5);
  REQUIRE(preds.size() == units.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CHECK(preds[i].unit_id == units[i].unit_id);
    CHECK(preds[i].fold == 3);
    CHECK(preds[i].true_label == binary_label(units[i].label));
    REQUIRE(preds[i].scores.size() == 2);
    CHECK(std::abs(preds[i].scores[0] + preds[i].scores[1] - 1.0) < 1e-6);
  }

  SUBCASE("deterministic and restores the checkpoint epoch") {
    auto again = build(backbone_spec("tinyconv", 8), 2, {.seed = 1});
    const auto out2 = train_fold(again, units, c, Task::Binary);
    for (std::size_t e = 0; e < out.curve.epochs.size(); ++e) {
      CHECK(out2.curve.epochs[e].loss == out.curve.epochs[e].loss);
      CHECK(out2.curve.epochs[e].accuracy == out.curve.epochs[e].accuracy);
    }
    const auto preds2 = predict(again, units, Task::Binary, 3, 5);
    for (std::size_t i = 0; i < preds.size(); ++i) CHECK(preds2[i].scores == preds[i].scores);

    // Stopping right at the checkpoint epoch must leave the same weights.
    TrainConfig shorter = c;
    shorter.max_epochs = shorter.patience = b;
    auto truncated = build(backbone_spec("tinyconv", 8), 2, {.seed = 1});
    const auto out3 = train_fold(truncated, units, shorter, Task::Binary);
    CHECK(out3.best_epoch == b);
    const auto preds3 = predict(truncated, units, Task::Binary, 3, 5);
    for (std::size_t i = 0; i < preds.size(); ++i) CHECK(preds3[i].scores == preds[i].scores);
  }
  SUBCASE("checkpoint round trip") {
    TempDir dir("mvs-ckpt");
    save_checkpoint(model, dir / "model.bin");
    auto fresh = build(backbone_spec("tinyconv", 8), 2, {.seed = 99});
    load_checkpoint(fresh, dir / "model.bin");
    const auto reloaded = predict(fresh, units, Task::Binary, 3, 5);
    for (std::size_t i = 0; i < preds.size(); ++i) CHECK(reloaded[i].scores == preds[i].scores);

    auto wider = build(backbone_spec("tinyconv", 12), 2);
    CHECK(kind_of([&] { load_checkpoint(wider, dir / "model.bin"); }) == ErrorKind::ShapeMismatch);
    CHECK(kind_of([&] { load_checkpoint(fresh, dir / "absent.bin"); }) == ErrorKind::MissingFile);
  }
  SUBCASE("task mismatch") {
    auto three = build(backbone_spec("tinyconv", 8), 3);
    CHECK(kind_of([&] { train_fold(three, units, c, Task::Binary); }) == ErrorKind::InvalidArgument);
  }
}

TEST_CASE("tinyconv learns the noiseless synthetic task") {
  SynthSpec spec;
  spec.subjects_per_class = {16, 8, 8};
  spec.noise_sigma = 0;
  std::vector<TrainingUnit> units;
  std::size_t index = 0;
  for (auto label : kAllClasses)
    for (int i = 0; i < spec.subjects_per_class[class_index(label)]; ++i, ++index) {
      std::array<Image, kNumViews> images;
      const auto s = synthesize_subject(spec, index, label, &images);
      TrainingUnit u;
      u.unit_id = u.subject_id = s.record.id;
      u.label = label;
      for (auto& img : images) u.views.push_back(test::shared(std::move(img)));
      units.push_back(std::move(u));
    }
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 8;
  c.max_epochs = 50;
  c.patience = 10;
  auto model = build(backbone_spec("tinyconv"), 2, {.seed = 2});
  const auto out = train_fold(model, units, c, Task::Binary);
  double best = 0;
  for (const auto& e : out.curve.epochs) best = std::max(best, e.accuracy);
  CHECK(best >= 0.95);
}

TEST_CASE("cross_validate") {
  CrossValidationOptions opt;
  opt.backbone = backbone_spec("tinyconv", 8);
  opt.train.max_epochs = 1;
  opt.train.patience = 1;
  opt.train.learning_rate = 1e-3;
  opt.train.augment_target_per_class = 1;
  opt.train.seed = 4;

  SUBCASE("220 subjects: five folds, every subject tested once") {
    const auto data = shared_image_dataset({121, 73, 26});
    const auto result = cross_validate(data, opt);
    REQUIRE(result.folds.size() == 5);
    std::map<std::string, int> tested;
    for (const auto& fr : result.folds) {
      CHECK(fr.predictions.size() == 44);
      CHECK(fr.train_units == 176);
      for (const auto& p : fr.predictions) {
        ++tested[p.unit_id];
        CHECK(result.plan.fold_of(p.unit_id) == fr.fold);
        CHECK(p.fold == fr.fold);
      }
    }
    CHECK(tested.size() == 220);
    for (const auto& [id, n] : tested) CHECK(n == 1);
    CHECK(result.report.accumulated.total() == 220);
  }

  const auto data = shared_image_dataset({5, 5, 5});

  SUBCASE("augmentation only touches training folds") {
    opt.train.augment_target_per_class = 9;
    opt.task = Task::Multiclass;
    const auto result = cross_validate(data, opt);
    for (const auto& fr : result.folds) {
      CHECK(fr.train_units == 27);
      CHECK(fr.predictions.size() == 3);
      for (const auto& p : fr.predictions) CHECK(p.unit_id.find('#') == std::string::npos);
    }
    CHECK(result.report.accumulated.classes() == 3);
  }
  SUBCASE("single view predicts original images only") {
    LoadedDataset partial = data;
    partial.sets[0].provenance[1] = Provenance::MirroredFromContralateral;
    partial.sets[7].provenance[2] = Provenance::MirroredFromContralateral;
    opt.variant = Variant::SingleView;
    const auto result = cross_validate(partial, opt);
    std::size_t n = 0;
    std::set<std::string> ids;
    for (const auto& fr : result.folds) {
      n += fr.predictions.size();
      for (const auto& p : fr.predictions) ids.insert(p.unit_id);
    }
    CHECK(n == 15 * 4 - 2);
    CHECK(ids.size() == n);
    CHECK(ids.count(partial.sets[0].subject_id + "/R_v2") == 0);
    CHECK(result.report.accumulated.total() == 58);
  }
  SUBCASE("parallel folds reproduce the serial run") {
    TempDir dir("mvs-cv");
    opt.run_dir = dir.path();
    const auto serial = cross_validate(data, opt);
    opt.jobs = 3;
    opt.run_dir.reset();
    const auto parallel = cross_validate(data, opt);
    for (int f = 0; f < 5; ++f) {
      CHECK(std::filesystem::exists(serial.folds[f].checkpoint));
      CHECK(parallel.folds[f].checkpoint.empty());
      CHECK(serial.folds[f].predictions.size() == parallel.folds[f].predictions.size());
      for (std::size_t i = 0; i < serial.folds[f].predictions.size(); ++i)
        CHECK(serial.folds[f].predictions[i].scores == parallel.folds[f].predictions[i].scores);
    }
    CHECK(serial.report.accumulated == parallel.report.accumulated);
  }
  SUBCASE("too few subjects") {
    const auto tiny = shared_image_dataset({5, 3, 5});
    CHECK(kind_of([&] { cross_validate(tiny, opt); }) == ErrorKind::TooFewSubjectsInClass);
  }
}

TEST_CASE("derived seeds") {
  CHECK(derive_seed(1, {100}) == derive_seed(1, {100}));
  CHECK(derive_seed(1, {100}) != derive_seed(1, {101}));
  CHECK(derive_seed(1, {100}) != derive_seed(2, {100}));
}
