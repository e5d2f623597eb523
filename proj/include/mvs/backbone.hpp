#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mvs {

/// Trainable / non-trainable parameter tally of a layer or network.
struct ParameterCount {
  std::int64_t trainable = 0;
  std::int64_t non_trainable = 0;

  std::int64_t total() const { return trainable + non_trainable; }
  ParameterCount& operator+=(const ParameterCount& o) {
    trainable += o.trainable;
    non_trainable += o.non_trainable;
    return *this;
  }
  friend ParameterCount operator+(ParameterCount a, const ParameterCount& b) { return a += b; }
  friend ParameterCount operator*(std::int64_t k, const ParameterCount& c) {
    return {k * c.trainable, k * c.non_trainable};
  }
  friend bool operator==(const ParameterCount&, const ParameterCount&) = default;
};

/// Layer arithmetic used to describe backbone bodies.
namespace layers {

ParameterCount conv2d(int kernel_h, int kernel_w, int in_channels, int out_channels, bool bias);
/// Depthwise 3x3 (or k x k) followed by a 1x1 pointwise projection, no bias.
ParameterCount separable_conv2d(int kernel, int in_channels, int out_channels);
/// gamma and beta trainable (gamma optional), running mean and variance frozen.
ParameterCount batch_norm(int channels, bool scale = true);
ParameterCount group_norm(int channels);
ParameterCount dense(int in_features, int out_features);

}  // namespace layers

enum class WeightInit : std::uint8_t { Random, PretrainedImageNet };

/// Whether this artifact can run the backbone or only account for it.
enum class BackboneKind : std::uint8_t { TinyConv, Descriptor };

struct InputNormalization {
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev{0.25f, 0.25f, 0.25f};
};

struct BackboneSpec {
  std::string name;
  /// Per-view feature length after global average pooling (d_view).
  int feature_dim = 48;
  bool trainable = true;
  WeightInit weight_init = WeightInit::Random;
  BackboneKind kind = BackboneKind::TinyConv;
  InputNormalization normalization;
  /// Channel widths of the conv blocks; tinyconv only.
  std::vector<int> block_channels;
  /// Parameters of one body as published, before the `trainable` flag applies.
  ParameterCount body;
};

inline constexpr std::string_view kTinyConv = "tinyconv";
inline constexpr int kTinyConvDefaultDim = 48;

std::vector<std::string> registered_backbones();

/// Look up a registered backbone. `feature_dim` overrides d_view for tinyconv;
/// standard backbones have a fixed d_view and reject a conflicting override.
BackboneSpec backbone_spec(std::string_view name, std::optional<int> feature_dim = std::nullopt);

/// Body tally with the `trainable` flag applied (a frozen body is all non-trainable).
ParameterCount backbone_parameters(const BackboneSpec& spec);

/// Layer arithmetic of the tinyconv body for a given feature dimension.
ParameterCount tinyconv_body(int feature_dim);

}  // namespace mvs
