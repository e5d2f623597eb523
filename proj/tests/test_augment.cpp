#include "doctest.h"
#include "support.hpp"

#include "mvs/augment.hpp"
#include "mvs/error.hpp"

#include <map>
#include <set>

using namespace mvs;

namespace {

ImageSet make_set(const std::string& id, ClassLabel label, Eigen::Index side, Rng& rng) {
  ImageSet s;
  s.subject_id = id;
  s.label = label;
  for (auto& img : s.images) img = test::shared(test::random_image(side, side, rng));
  return s;
}

std::vector<ImageSet> make_sets(std::array<int, kNumClasses> counts, Eigen::Index side, Rng& rng) {
  std::vector<ImageSet> sets;
  for (int c = 0; c < int(kNumClasses); ++c)
    for (int i = 0; i < counts[c]; ++i)
      sets.push_back(make_set("c" + std::to_string(c) + "_" + std::to_string(i), kAllClasses[c], side, rng));
  return sets;
}

std::map<int, int> class_counts(std::span<const ImageSet> sets, Task task) {
  std::map<int, int> counts;
  for (const auto& s : sets) ++counts[target_index(s.label, task)];
  return counts;
}

}  // namespace

TEST_CASE("policy validation") {
  AugmentationPolicy p;
  CHECK(p.shift_frac == 0.10);
  CHECK(p.shear_deg == 10.0);
  CHECK(p.rotation_deg == 180.0);
  CHECK(p.zoom_frac == 0.10);
  CHECK(p.allow_flip);
  CHECK(p.per_view_independent);
  CHECK_NOTHROW(p.validate());
  p.rotation_deg = 181;
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.zoom_frac = 1.0;
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.shift_frac = -0.1;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("sample_transform") {
  SUBCASE("zero-magnitude policy draws the identity") {
    auto rng = make_stream(1);
    for (int i = 0; i < 20; ++i) {
      const TransformParams t = sample_transform(AugmentationPolicy::identity(), rng);
      CHECK(t == TransformParams{});
      CHECK(t.matrix(224, 224).isIdentity(1e-12));
    }
  }
  SUBCASE("replaying a stream replays the draw") {
    auto a = make_stream(5, {9}), b = make_stream(5, {9});
    for (int i = 0; i < 10; ++i) CHECK(sample_transform(AugmentationPolicy{}, a) == sample_transform(AugmentationPolicy{}, b));
  }
  SUBCASE("draws stay within the policy ranges") {
    AugmentationPolicy p;
    p.rotation_deg = 30;
    auto rng = make_stream(6);
    int flips = 0;
    for (int i = 0; i < 500; ++i) {
      const TransformParams t = sample_transform(p, rng);
      CHECK(std::abs(t.shift_x) <= p.shift_frac);
      CHECK(std::abs(t.shift_y) <= p.shift_frac);
      CHECK(std::abs(t.shear_deg) <= p.shear_deg);
      CHECK(std::abs(t.rotation_deg) <= 30);
      CHECK(std::abs(t.zoom_x - 1) <= p.zoom_frac);
      CHECK(std::abs(t.zoom_y - 1) <= p.zoom_frac);
      flips += t.flip;
    }
    CHECK(flips > 150);
    CHECK(flips < 350);
    p.allow_flip = false;
    for (int i = 0; i < 50; ++i) CHECK_FALSE(sample_transform(p, rng).flip);
  }
}

TEST_CASE("apply_transform") {
  auto rng = make_stream(2);
  const Image img = test::random_image(224, 224, rng);

  SUBCASE("shape is preserved and values stay in range") {
    auto draw = make_stream(3);
    for (int i = 0; i < 3; ++i) {
      const Image out = apply_transform(img, sample_transform(AugmentationPolicy{}, draw));
      CHECK(out.height() == 224);
      CHECK(out.width() == 224);
      CHECK(out.min_value() >= 0.f);
      CHECK(out.max_value() <= 1.f);
    }
  }
  SUBCASE("identity leaves pixels untouched") { CHECK(apply_transform(img, TransformParams{}) == img); }
  SUBCASE("180 degree rotation of a point-symmetric image") {
    Image sym(224, 224);
    for (int c = 0; c < 3; ++c)
      for (Eigen::Index y = 0; y < 224; ++y)
        for (Eigen::Index x = 0; x < 224; ++x) sym(c, y, x) = sym(c, 223 - y, 223 - x) = img(c, y, x);
    TransformParams t;
    t.rotation_deg = 180;
    CHECK(max_abs_difference(apply_transform(sym, t), sym) < 1e-5f);
    t.rotation_deg = -180;
    CHECK(max_abs_difference(apply_transform(sym, t), sym) < 1e-5f);
  }
  SUBCASE("flip alone equals the horizontal mirror") {
    TransformParams t;
    t.flip = true;
    CHECK(max_abs_difference(apply_transform(img, t), mirror_horizontal(img)) < 1e-5f);
  }
  SUBCASE("integer shift translates with reflected borders") {
    Image small = test::random_image(10, 10, rng);
    TransformParams t;
    t.shift_x = 0.2;  // two pixels right
    const Image out = apply_transform(small, t);
    for (Eigen::Index y = 0; y < 10; ++y) {
      for (Eigen::Index x = 2; x < 10; ++x) CHECK(std::abs(out(0, y, x) - small(0, y, x - 2)) < 1e-5f);
      CHECK(std::abs(out(0, y, 1) - small(0, y, 0)) < 1e-5f);
      CHECK(std::abs(out(0, y, 0) - small(0, y, 1)) < 1e-5f);
    }
  }
}

TEST_CASE("augment_to_target") {
  auto rng = make_stream(7);

  SUBCASE("three classes to 1000 each") {
    const auto sets = make_sets({12, 7, 4}, 8, rng);
    const auto out = augment_to_target(std::span<const ImageSet>(sets), AugmentationPolicy{}, 1000, 1);
    CHECK(out.size() == 3000);
    std::size_t images = 0;
    for (const auto& s : out) images += s.images.size();
    CHECK(images == 12000);
    for (auto [c, n] : class_counts(out, Task::Multiclass)) CHECK(n == 1000);
  }
  SUBCASE("originals come first and are untouched") {
    const auto sets = make_sets({3, 3, 3}, 8, rng);
    const auto out = augment_to_target(std::span<const ImageSet>(sets), AugmentationPolicy{}, 5, 1);
    REQUIRE(out.size() == 15);
    std::set<std::string> ids;
    for (const auto& s : sets) ids.insert(s.subject_id);
    int originals = 0;
    for (const auto& s : out) {
      CHECK(ids.count(s.subject_id) == 1);
      if (!s.augmented) {
        ++originals;
        const auto it = std::find_if(sets.begin(), sets.end(), [&](const ImageSet& o) { return o.subject_id == s.subject_id; });
        for (std::size_t v = 0; v < kNumViews; ++v) CHECK(s.images[v] == it->images[v]);
      }
    }
    CHECK(originals == 9);
  }
  SUBCASE("target equal to class size returns the originals") {
    const auto sets = make_sets({4, 4, 4}, 8, rng);
    const auto out = augment_to_target(std::span<const ImageSet>(sets), AugmentationPolicy{}, 4, 1);
    REQUIRE(out.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK_FALSE(out[i].augmented);
      CHECK(out[i].images == sets[i].images);
    }
  }
  SUBCASE("identity policy copies pixels exactly") {
    const auto sets = make_sets({2, 1, 3}, 16, rng);
    const auto out = augment_to_target(std::span<const ImageSet>(sets), AugmentationPolicy::identity(), 6, 2);
    int augmented = 0;
    for (const auto& s : out) {
      if (!s.augmented) continue;
      ++augmented;
      const auto it = std::find_if(sets.begin(), sets.end(), [&](const ImageSet& o) { return o.subject_id == s.subject_id; });
      CHECK(it->label == s.label);
      for (std::size_t v = 0; v < kNumViews; ++v) CHECK(*s.images[v] == *it->images[v]);
    }
    CHECK(augmented == 18 - 6);
  }
  SUBCASE("per-view transforms are independent unless locked") {
    ImageSet same;
    same.subject_id = "s";
    const auto img = test::shared(test::random_image(32, 32, rng));
    same.images = {img, img, img, img};
    std::vector<ImageSet> sets;
    for (auto label : kAllClasses) {
      same.label = label;
      sets.push_back(same);
    }
    AugmentationPolicy policy;
    const auto free = augment_to_target(std::span<const ImageSet>(sets), policy, 2, 3);
    policy.per_view_independent = false;
    const auto locked = augment_to_target(std::span<const ImageSet>(sets), policy, 2, 3);
    for (const auto& s : free)
      if (s.augmented) CHECK_FALSE(*s.images[0] == *s.images[1]);
    for (const auto& s : locked)
      if (s.augmented)
        for (std::size_t v = 1; v < kNumViews; ++v) CHECK(*s.images[v] == *s.images[0]);
  }
  SUBCASE("deterministic given the seed") {
    const auto sets = make_sets({2, 2, 2}, 12, rng);
    const auto a = augment_to_target(std::span<const ImageSet>(sets), AugmentationPolicy{}, 4, 11);
    const auto b = augment_to_target(std::span<const ImageSet>(sets), AugmentationPolicy{}, 4, 11);
    const auto c = augment_to_target(std::span<const ImageSet>(sets), AugmentationPolicy{}, 4, 12);
    REQUIRE(a.size() == b.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].subject_id == b[i].subject_id);
      for (std::size_t v = 0; v < kNumViews; ++v) {
        CHECK(*a[i].images[v] == *b[i].images[v]);
        differs |= !(*a[i].images[v] == *c[i].images[v]);
      }
    }
    CHECK(differs);
  }
  SUBCASE("binary task groups stroke and tia") {
    const auto sets = make_sets({5, 2, 2}, 8, rng);
    const auto out = augment_to_target(std::span<const ImageSet>(sets), AugmentationPolicy{}, 9, 1, Task::Binary);
    const auto counts = class_counts(out, Task::Binary);
    CHECK(counts.at(0) == 9);
    CHECK(counts.at(1) == 9);
  }
  SUBCASE("empty class") {
    const auto sets = make_sets({3, 0, 3}, 8, rng);
    try {
      augment_to_target(std::span<const ImageSet>(sets), AugmentationPolicy{}, 5, 1);
      FAIL("expected EmptyClass");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::EmptyClass);
    }
  }
  SUBCASE("class counts hit the target for random populations") {
    auto draw = make_stream(13);
    for (int trial = 0; trial < 30; ++trial) {
      std::uniform_int_distribution<int> n(1, 8);
      const auto sets = make_sets({n(draw), n(draw), n(draw)}, 4, draw);
      const int target = std::uniform_int_distribution<int>(8, 20)(draw);
      const Task task = trial % 2 ? Task::Binary : Task::Multiclass;
      AugmentationPolicy policy;
      policy.per_view_independent = trial % 3 != 0;
      const auto out = augment_to_target(std::span<const ImageSet>(sets), policy, target, draw(), task);
      const auto before = class_counts(sets, task);
      const auto counts = class_counts(out, task);
      CHECK(int(counts.size()) == num_outputs(task));
      for (auto [c, count] : counts) CHECK(count == std::max(target, before.at(c)));
    }
  }
}

TEST_CASE("training units") {
  auto rng = make_stream(8);
  ImageSet set = make_set("P1", ClassLabel::Tia, 8, rng);
  set.provenance[1] = Provenance::MirroredFromContralateral;

  const TrainingUnit unit = to_unit(set);
  CHECK(unit.unit_id == "P1");
  CHECK(unit.views.size() == 4);
  CHECK(unit.label == ClassLabel::Tia);

  const std::vector<ImageSet> sets{set};
  const auto singles = single_view_units(sets);
  REQUIRE(singles.size() == 3);
  CHECK(singles[0].unit_id == "P1/R_v1");
  CHECK(singles[1].unit_id == "P1/L_v1");
  CHECK(singles[2].unit_id == "P1/L_v2");
  for (const auto& u : singles) {
    CHECK(u.subject_id == "P1");
    CHECK(u.label == ClassLabel::Tia);
    CHECK(u.views.size() == 1);
  }

  std::vector<TrainingUnit> units;
  for (int c = 0; c < 3; ++c) {
    ImageSet s = make_set("S" + std::to_string(c), kAllClasses[c], 8, rng);
    const std::vector<ImageSet> one{s};
    for (auto& u : single_view_units(one)) units.push_back(u);
  }
  const auto out = augment_to_target(units, AugmentationPolicy{}, 6, 4);
  CHECK(out.size() == 18);
  std::set<std::string> ids;
  for (const auto& u : out) {
    CHECK(ids.insert(u.unit_id).second);
    CHECK(u.views.size() == 1);
    if (u.augmented) CHECK(u.unit_id.find("#aug") != std::string::npos);
  }
}
