#include "mvs/augment.hpp"

#include "mvs/error.hpp"

#include <cmath>
#include <numbers>

namespace mvs {

void AugmentationPolicy::validate() const {
  if (!(rotation_deg >= 0.0 && rotation_deg <= 180.0))
    throw Error(ErrorKind::InvalidArgument, "rotation_deg must lie in [0,180]");
  if (!(shift_frac >= 0.0 && shift_frac < 1.0)) throw Error(ErrorKind::InvalidArgument, "shift_frac must lie in [0,1)");
  if (!(zoom_frac >= 0.0 && zoom_frac < 1.0)) throw Error(ErrorKind::InvalidArgument, "zoom_frac must lie in [0,1)");
  if (!(shear_deg >= 0.0 && shear_deg < 90.0)) throw Error(ErrorKind::InvalidArgument, "shear_deg must lie in [0,90)");
}

AugmentationPolicy AugmentationPolicy::identity() {
  AugmentationPolicy p;
  p.shift_frac = 0;
  p.shear_deg = 0;
  p.rotation_deg = 0;
  p.zoom_frac = 0;
  p.allow_flip = false;
  return p;
}

Eigen::Matrix3d TransformParams::matrix(Eigen::Index width, Eigen::Index height) const {
  const double deg = std::numbers::pi / 180.0;
  const double cx = (double(width) - 1) / 2, cy = (double(height) - 1) / 2;

  Eigen::Matrix3d to_centre = Eigen::Matrix3d::Identity(), from_centre = Eigen::Matrix3d::Identity();
  to_centre.col(2).head<2>() << -cx, -cy;
  from_centre.col(2).head<2>() << cx + shift_x * double(width), cy + shift_y * double(height);

  Eigen::Matrix3d rotate = Eigen::Matrix3d::Identity();
  const double c = std::cos(rotation_deg * deg), s = std::sin(rotation_deg * deg);
  rotate.topLeftCorner<2, 2>() << c, -s, s, c;

  Eigen::Matrix3d shear = Eigen::Matrix3d::Identity();
  shear(0, 1) = std::tan(shear_deg * deg);

  Eigen::Matrix3d zoom = Eigen::Vector3d(zoom_x, zoom_y, 1.0).asDiagonal();
  Eigen::Matrix3d mirror = Eigen::Vector3d(flip ? -1.0 : 1.0, 1.0, 1.0).asDiagonal();

  return from_centre * rotate * shear * zoom * mirror * to_centre;
}

TransformParams sample_transform(const AugmentationPolicy& policy, Rng& rng) {
  TransformParams t;
  t.shift_x = uniform(rng, -policy.shift_frac, policy.shift_frac);
  t.shift_y = uniform(rng, -policy.shift_frac, policy.shift_frac);
  t.shear_deg = uniform(rng, -policy.shear_deg, policy.shear_deg);
  t.rotation_deg = uniform(rng, -policy.rotation_deg, policy.rotation_deg);
  t.zoom_x = uniform(rng, 1.0 - policy.zoom_frac, 1.0 + policy.zoom_frac);
  t.zoom_y = uniform(rng, 1.0 - policy.zoom_frac, 1.0 + policy.zoom_frac);
  const bool coin = std::bernoulli_distribution(0.5)(rng);
  t.flip = policy.allow_flip && coin;
  return t;
}

Image apply_transform(const Image& image, const TransformParams& params) {
  return warp_affine(image, params.matrix(image.width(), image.height()));
}

TrainingUnit to_unit(const ImageSet& set) {
  TrainingUnit unit;
  unit.unit_id = set.subject_id;
  unit.subject_id = set.subject_id;
  unit.label = set.label;
  unit.views.assign(set.images.begin(), set.images.end());
  unit.augmented = set.augmented;
  return unit;
}

std::vector<TrainingUnit> single_view_units(std::span<const ImageSet> sets) {
  std::vector<TrainingUnit> units;
  for (const auto& set : sets) {
    for (auto key : kCanonicalViews) {
      const auto i = view_index(key);
      if (set.provenance[i] != Provenance::Original) continue;
      TrainingUnit unit;
      unit.unit_id = set.subject_id + "/" + std::string(view_name(key));
      unit.subject_id = set.subject_id;
      unit.label = set.label;
      unit.views = {set.images[i]};
      unit.augmented = set.augmented;
      units.push_back(std::move(unit));
    }
  }
  return units;
}

namespace {

struct Draw {
  std::size_t source;
  std::vector<ImageRef> views;  // empty for an unmodified original
  int copy = 0;
};

std::vector<Draw> plan_augmentation(std::span<const ClassLabel> labels,
                                    const std::function<const std::vector<ImageRef>&(std::size_t)>& views_of,
                                    const AugmentationPolicy& policy, int target, std::uint64_t seed, Task task) {
  policy.validate();
  if (target < 1) throw Error(ErrorKind::InvalidArgument, "target_per_class must be positive");
  const int classes = num_outputs(task);
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) members[target_index(labels[i], task)].push_back(i);

  std::vector<Draw> draws;
  for (int c = 0; c < classes; ++c) {
    if (members[c].empty()) throw Error(ErrorKind::EmptyClass, "class " + std::to_string(c) + " has no training units");
    for (auto i : members[c]) draws.push_back({i, {}, 0});
    const int missing = target - static_cast<int>(members[c].size());
    auto rng = make_stream(seed, {tag(StreamTag::Augment), static_cast<std::uint64_t>(c)});
    std::uniform_int_distribution<std::size_t> pick(0, members[c].size() - 1);
    for (int k = 0; k < missing; ++k) {
      const std::size_t source = members[c][pick(rng)];
      const auto& views = views_of(source);
      Draw draw{source, {}, k + 1};
      const TransformParams shared = sample_transform(policy, rng);
      for (const auto& view : views) {
        const TransformParams t = policy.per_view_independent ? sample_transform(policy, rng) : shared;
        draw.views.push_back(std::make_shared<const Image>(apply_transform(*view, t)));
      }
      draws.push_back(std::move(draw));
    }
  }
  return draws;
}

}  // namespace

std::vector<TrainingUnit> augment_to_target(std::span<const TrainingUnit> units, const AugmentationPolicy& policy,
                                            int target_per_class, std::uint64_t seed, Task task) {
  std::vector<ClassLabel> labels;
  for (const auto& u : units) labels.push_back(u.label);
  auto draws = plan_augmentation(
      labels, [&](std::size_t i) -> const std::vector<ImageRef>& { return units[i].views; }, policy,
      target_per_class, seed, task);

  std::vector<TrainingUnit> out;
  out.reserve(draws.size());
  for (auto& d : draws) {
    TrainingUnit unit = units[d.source];
    if (!d.views.empty()) {
      unit.views = std::move(d.views);
      unit.augmented = true;
      unit.unit_id += "#aug" + std::to_string(d.copy);
    }
    out.push_back(std::move(unit));
  }
  return out;
}

std::vector<ImageSet> augment_to_target(std::span<const ImageSet> sets, const AugmentationPolicy& policy,
                                        int target_per_class, std::uint64_t seed, Task task) {
  std::vector<ClassLabel> labels;
  std::vector<std::vector<ImageRef>> views;
  for (const auto& s : sets) {
    labels.push_back(s.label);
    views.emplace_back(s.images.begin(), s.images.end());
  }
  auto draws = plan_augmentation(
      labels, [&](std::size_t i) -> const std::vector<ImageRef>& { return views[i]; }, policy, target_per_class,
      seed, task);

  std::vector<ImageSet> out;
  out.reserve(draws.size());
  for (auto& d : draws) {
    ImageSet set = sets[d.source];
    if (!d.views.empty()) {
      for (std::size_t v = 0; v < kNumViews; ++v) set.images[v] = std::move(d.views[v]);
      set.augmented = true;
    }
    out.push_back(std::move(set));
  }
  return out;
}

}  // namespace mvs
