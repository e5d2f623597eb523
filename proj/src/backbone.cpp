#include "mvs/backbone.hpp"

#include "mvs/error.hpp"

#include <functional>

namespace mvs {
namespace layers {

ParameterCount conv2d(int kernel_h, int kernel_w, int in_channels, int out_channels, bool bias) {
  return {std::int64_t(kernel_h) * kernel_w * in_channels * out_channels + (bias ? out_channels : 0), 0};
}

ParameterCount separable_conv2d(int kernel, int in_channels, int out_channels) {
  return {std::int64_t(kernel) * kernel * in_channels + std::int64_t(in_channels) * out_channels, 0};
}

ParameterCount batch_norm(int channels, bool scale) { return {(scale ? 2 : 1) * std::int64_t(channels), 2 * std::int64_t(channels)}; }

ParameterCount group_norm(int channels) { return {2 * std::int64_t(channels), 0}; }

ParameterCount dense(int in_features, int out_features) {
  return {std::int64_t(in_features) * out_features + out_features, 0};
}

}  // namespace layers

namespace {

using namespace layers;

// Bodies below omit the classifier top. Convolution bias and normalization
// conventions follow the common Keras / BiT reference implementations.

ParameterCount vgg19_body() {
  const std::vector<std::pair<int, int>> convs{
      {3, 64},    {64, 64},   {64, 128},  {128, 128}, {128, 256}, {256, 256}, {256, 256}, {256, 256},
      {256, 512}, {512, 512}, {512, 512}, {512, 512}, {512, 512}, {512, 512}, {512, 512}, {512, 512}};
  ParameterCount p;
  for (auto [in, out] : convs) p += conv2d(3, 3, in, out, true);
  return p;
}

/// Post-activation bottleneck ResNet-50 with biased convolutions and batch norm.
ParameterCount resnet50_body() {
  ParameterCount p = conv2d(7, 7, 3, 64, true) + batch_norm(64);
  int in = 64;
  for (auto [mid, units] : std::vector<std::pair<int, int>>{{64, 3}, {128, 4}, {256, 6}, {512, 3}}) {
    const int out = 4 * mid;
    for (int u = 0; u < units; ++u) {
      if (u == 0) p += conv2d(1, 1, in, out, true) + batch_norm(out);
      p += conv2d(1, 1, in, mid, true) + batch_norm(mid);
      p += conv2d(3, 3, mid, mid, true) + batch_norm(mid);
      p += conv2d(1, 1, mid, out, true) + batch_norm(out);
      in = out;
    }
  }
  return p;
}

/// Pre-activation ResNet-50 with weight-standardized convolutions and group norm.
ParameterCount bit_r50x1_body() {
  ParameterCount p = conv2d(7, 7, 3, 64, false);
  int in = 64;
  for (auto [mid, units] : std::vector<std::pair<int, int>>{{64, 3}, {128, 4}, {256, 6}, {512, 3}}) {
    const int out = 4 * mid;
    for (int u = 0; u < units; ++u) {
      if (u == 0) p += conv2d(1, 1, in, out, false);
      p += group_norm(in) + conv2d(1, 1, in, mid, false);
      p += group_norm(mid) + conv2d(3, 3, mid, mid, false);
      p += group_norm(mid) + conv2d(1, 1, mid, out, false);
      in = out;
    }
  }
  return p + group_norm(2048);
}

ParameterCount densenet121_body() {
  constexpr int kGrowth = 32;
  ParameterCount p = conv2d(7, 7, 3, 64, false) + batch_norm(64);
  int c = 64;
  const std::array<int, 4> blocks{6, 12, 24, 16};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (int l = 0; l < blocks[b]; ++l) {
      p += batch_norm(c) + conv2d(1, 1, c, 4 * kGrowth, false);
      p += batch_norm(4 * kGrowth) + conv2d(3, 3, 4 * kGrowth, kGrowth, false);
      c += kGrowth;
    }
    if (b + 1 < blocks.size()) {
      p += batch_norm(c) + conv2d(1, 1, c, c / 2, false);
      c /= 2;
    }
  }
  return p + batch_norm(c);
}

/// Inception-v3 convolutions carry a shift-only batch norm.
ParameterCount inception_v3_body() {
  auto cbn = [](int kh, int kw, int in, int out) { return conv2d(kh, kw, in, out, false) + batch_norm(out, false); };
  ParameterCount p = cbn(3, 3, 3, 32) + cbn(3, 3, 32, 32) + cbn(3, 3, 32, 64) + cbn(1, 1, 64, 80) + cbn(3, 3, 80, 192);
  int c = 192;
  for (int pool : {32, 64, 64}) {
    p += cbn(1, 1, c, 64) + cbn(1, 1, c, 48) + cbn(5, 5, 48, 64);
    p += cbn(1, 1, c, 64) + cbn(3, 3, 64, 96) + cbn(3, 3, 96, 96) + cbn(1, 1, c, pool);
    c = 64 + 64 + 96 + pool;
  }
  p += cbn(3, 3, c, 384) + cbn(1, 1, c, 64) + cbn(3, 3, 64, 96) + cbn(3, 3, 96, 96);
  c += 384 + 96;
  for (int mid : {128, 160, 160, 192}) {
    p += cbn(1, 1, c, 192);
    p += cbn(1, 1, c, mid) + cbn(1, 7, mid, mid) + cbn(7, 1, mid, 192);
    p += cbn(1, 1, c, mid) + cbn(7, 1, mid, mid) + cbn(1, 7, mid, mid) + cbn(7, 1, mid, mid) + cbn(1, 7, mid, 192);
    p += cbn(1, 1, c, 192);
    c = 768;
  }
  p += cbn(1, 1, c, 192) + cbn(3, 3, 192, 320);
  p += cbn(1, 1, c, 192) + cbn(1, 7, 192, 192) + cbn(7, 1, 192, 192) + cbn(3, 3, 192, 192);
  c += 320 + 192;
  for (int i = 0; i < 2; ++i) {
    p += cbn(1, 1, c, 320);
    p += cbn(1, 1, c, 384) + cbn(1, 3, 384, 384) + cbn(3, 1, 384, 384);
    p += cbn(1, 1, c, 448) + cbn(3, 3, 448, 384) + cbn(1, 3, 384, 384) + cbn(3, 1, 384, 384);
    p += cbn(1, 1, c, 192);
    c = 320 + 768 + 768 + 192;
  }
  return p;
}

ParameterCount xception_body() {
  ParameterCount p = conv2d(3, 3, 3, 32, false) + batch_norm(32) + conv2d(3, 3, 32, 64, false) + batch_norm(64);
  int c = 64;
  for (int out : {128, 256, 728}) {
    p += conv2d(1, 1, c, out, false) + batch_norm(out);
    p += separable_conv2d(3, c, out) + batch_norm(out) + separable_conv2d(3, out, out) + batch_norm(out);
    c = out;
  }
  for (int block = 0; block < 8; ++block)
    for (int i = 0; i < 3; ++i) p += separable_conv2d(3, 728, 728) + batch_norm(728);
  p += conv2d(1, 1, 728, 1024, false) + batch_norm(1024);
  p += separable_conv2d(3, 728, 728) + batch_norm(728) + separable_conv2d(3, 728, 1024) + batch_norm(1024);
  p += separable_conv2d(3, 1024, 1536) + batch_norm(1536) + separable_conv2d(3, 1536, 2048) + batch_norm(2048);
  return p;
}

struct Entry {
  std::string_view name;
  int feature_dim;
  bool trainable;
  InputNormalization normalization;
  std::function<ParameterCount()> body;
};

constexpr InputNormalization kCaffe{{0.485f, 0.458f, 0.408f}, {1.f / 255, 1.f / 255, 1.f / 255}};
constexpr InputNormalization kTorch{{0.485f, 0.456f, 0.406f}, {0.229f, 0.224f, 0.225f}};
constexpr InputNormalization kSymmetric{{0.5f, 0.5f, 0.5f}, {0.5f, 0.5f, 0.5f}};
constexpr InputNormalization kUnit{{0.f, 0.f, 0.f}, {1.f, 1.f, 1.f}};

const std::vector<Entry>& standard_backbones() {
  static const std::vector<Entry> entries{
      {"bit_m_r50x1", 2048, false, kUnit, bit_r50x1_body},
      {"densenet121", 1024, true, kTorch, densenet121_body},
      {"inception_v3", 2048, true, kSymmetric, inception_v3_body},
      {"resnet50", 2048, true, kCaffe, resnet50_body},
      {"vgg19", 512, true, kCaffe, vgg19_body},
      {"xception", 2048, true, kSymmetric, xception_body},
  };
  return entries;
}

}  // namespace

ParameterCount tinyconv_body(int feature_dim) {
  return conv2d(4, 4, 3, 8, true) + conv2d(3, 3, 8, 16, true) + conv2d(3, 3, 16, feature_dim, true) +
         batch_norm(feature_dim);
}

std::vector<std::string> registered_backbones() {
  std::vector<std::string> names{std::string(kTinyConv)};
  for (const auto& e : standard_backbones()) names.emplace_back(e.name);
  return names;
}

BackboneSpec backbone_spec(std::string_view name, std::optional<int> feature_dim) {
  BackboneSpec spec;
  spec.name = std::string(name);
  if (name == kTinyConv) {
    spec.feature_dim = feature_dim.value_or(kTinyConvDefaultDim);
    if (spec.feature_dim < 1) throw Error(ErrorKind::InvalidArgument, "feature_dim must be positive");
    spec.kind = BackboneKind::TinyConv;
    spec.block_channels = {8, 16, spec.feature_dim};
    spec.body = tinyconv_body(spec.feature_dim);
    return spec;
  }
  for (const auto& e : standard_backbones()) {
    if (e.name != name) continue;
    if (feature_dim && *feature_dim != e.feature_dim)
      throw Error(ErrorKind::InvalidArgument, spec.name + " has a fixed feature dimension of " + std::to_string(e.feature_dim));
    spec.feature_dim = e.feature_dim;
    spec.trainable = e.trainable;
    spec.weight_init = WeightInit::PretrainedImageNet;
    spec.kind = BackboneKind::Descriptor;
    spec.normalization = e.normalization;
    spec.body = e.body();
    return spec;
  }
  throw Error(ErrorKind::UnknownBackbone, spec.name);
}

ParameterCount backbone_parameters(const BackboneSpec& spec) {
  if (spec.trainable) return spec.body;
  return {0, spec.body.total()};
}

}  // namespace mvs
