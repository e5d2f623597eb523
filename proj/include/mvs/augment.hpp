#pragma once

#include "mvs/dataset.hpp"
#include "mvs/random.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace mvs {

struct AugmentationPolicy {
  /// Maximum translation as a fraction of width/height.
  double shift_frac = 0.10;
  double shear_deg = 10.0;
  /// Rotation angle drawn uniformly from [-rotation_deg, rotation_deg].
  double rotation_deg = 180.0;
  /// Scale factors drawn from [1 - zoom_frac, 1 + zoom_frac] per axis.
  double zoom_frac = 0.10;
  bool allow_flip = true;
  /// Draw a fresh transform for every view, or one transform per set.
  bool per_view_independent = true;

  void validate() const;
  static AugmentationPolicy identity();
};

struct TransformParams {
  double shift_x = 0, shift_y = 0;  // fractions of width / height
  double shear_deg = 0;
  double rotation_deg = 0;
  double zoom_x = 1, zoom_y = 1;
  bool flip = false;

  /// Forward pixel map about the image centre: shift * rotate * shear * zoom * flip.
  Eigen::Matrix3d matrix(Eigen::Index width, Eigen::Index height) const;
  friend bool operator==(const TransformParams&, const TransformParams&) = default;
};

TransformParams sample_transform(const AugmentationPolicy& policy, Rng& rng);

Image apply_transform(const Image& image, const TransformParams& params);

/// A training or test unit: one subject's four views (multi-view) or one
/// original image (single-view).
struct TrainingUnit {
  std::string unit_id;
  std::string subject_id;
  ClassLabel label = ClassLabel::Control;
  std::vector<ImageRef> views;
  bool augmented = false;
};

TrainingUnit to_unit(const ImageSet& set);
/// One unit per original (not mirror-filled) view of each set.
std::vector<TrainingUnit> single_view_units(std::span<const ImageSet> sets);

/// Per class (under the task's class encoding): all originals, then augmented
/// copies of originals drawn with replacement until the class holds
/// `target_per_class` units. Classes already at or above the target are
/// returned unchanged.
std::vector<TrainingUnit> augment_to_target(std::span<const TrainingUnit> units, const AugmentationPolicy& policy,
                                            int target_per_class, std::uint64_t seed, Task task = Task::Multiclass);

std::vector<ImageSet> augment_to_target(std::span<const ImageSet> sets, const AugmentationPolicy& policy,
                                        int target_per_class, std::uint64_t seed, Task task = Task::Multiclass);

}  // namespace mvs
