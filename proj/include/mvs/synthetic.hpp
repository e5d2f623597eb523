#pragma once

#include "mvs/dataset.hpp"
#include "mvs/random.hpp"

#include <array>
#include <filesystem>
#include <string_view>

namespace mvs {

/// Latent marker bit per view, indexed by view_index().
using ViewBits = std::array<int, kNumViews>;

/// Parameters of a synthetic cohort. The class signal lives in the XOR of
/// the two eyes' bits for one view type, so no single view carries it.
struct SynthSpec {
  std::array<int, kNumClasses> subjects_per_class{100, 100, 100};
  int image_side = 224;
  /// Per view type, probability that one (never both) of the eyes is missing.
  double missing_view_rate = 0.0;
  double marker_contrast = 0.8;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

SynthSpec parse_synth_spec(std::string_view json_text);
std::string synth_spec_to_string(const SynthSpec& spec);

/// control if b(R,v1) == b(L,v1); otherwise stroke if b(R,v2) == b(L,v2), else TIA.
ClassLabel oracle_label(const ViewBits& bits);

/// Uniformly draw bits consistent with `label`.
ViewBits draw_bits(ClassLabel label, Rng& rng);

/// Marker geometry, as fractions of the image side.
inline constexpr double kMarkerSize = 0.12;
inline constexpr double kMarkerOffset = 0.20;

/// Fundus-like disc with a diagonal illumination falloff and a bright square
/// in the top-left (bit 0) or bottom-right (bit 1) region.
Image render_view(ViewKey key, int bit, int side, double contrast, double noise_sigma, Rng& rng);

struct SyntheticSubject {
  SubjectRecord record;
  ViewBits bits{};
};

/// Deterministic per-subject draw; depends only on (spec, index, label).
SyntheticSubject synthesize_subject(const SynthSpec& spec, std::size_t index, ClassLabel label,
                                    std::array<Image, kNumViews>* images);

/// Writes images/, manifest.json and truth.json under `out_dir`.
DatasetManifest generate_cohort(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace mvs
