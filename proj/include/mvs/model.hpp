#pragma once

#include "mvs/backbone.hpp"
#include "mvs/dataset.hpp"
#include "mvs/error.hpp"
#include "mvs/nn.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <filesystem>
#include <span>
#include <vector>

namespace mvs {

/// Hidden width of the fused head: floor(V * d_view / 6).
constexpr int hidden_width_for(int d_view, int views) { return views * d_view / 6; }

/// Dense weights and biases of both head layers.
constexpr std::int64_t head_parameter_count(std::int64_t d_view, std::int64_t views, std::int64_t classes) {
  const std::int64_t d = views * d_view;
  const std::int64_t n = d / 6;
  return n * (d + 1 + classes) + classes;
}

struct HeadConfig {
  int num_views = 4;
  int num_classes = 2;
  int hidden_width = 0;
  double dropout_rate = 0.4;

  static HeadConfig for_backbone(const BackboneSpec& backbone, int views, int classes, double dropout = 0.4) {
    return {views, classes, hidden_width_for(backbone.feature_dim, views), dropout};
  }
};

struct ModelOptions {
  /// One backbone body applied to every view (default) or one body per view.
  bool share_backbone = true;
  std::uint64_t seed = 0;
};

/// The views of one input unit, in canonical order (4 for multi-view, 1 for single-view).
using Sample = std::span<const ImageRef>;

/// Multi-branch network: per-view backbone + global average pooling,
/// concatenation in canonical view order, then the dense head.
template <typename Scalar>
class MvsNet {
public:
  struct ForwardState {
    std::vector<typename nn::TinyConv<Scalar>::Cache> branch;  // sample-major, V per sample
    std::vector<typename nn::BatchNorm<Scalar>::Cache> norm;    // one per view
    typename nn::DenseHead<Scalar>::Cache head;
    nn::Matrix<Scalar> probabilities;  // C x B
  };

  MvsNet(BackboneSpec backbone, HeadConfig head, ModelOptions options)
      : backbone_(std::move(backbone)), config_(head), options_(options) {
    if (config_.num_views < 1) throw Error(ErrorKind::InvalidArgument, "num_views must be positive");
    if (config_.num_classes < 2) throw Error(ErrorKind::InvalidArgument, "num_classes must be at least 2");
    if (config_.hidden_width != hidden_width_for(backbone_.feature_dim, config_.num_views))
      throw Error(ErrorKind::InvalidArgument, "hidden width must equal floor(V*d_view/6)");
    if (config_.hidden_width < 1) throw Error(ErrorKind::InvalidArgument, "V*d_view too small for a hidden layer");
    if (!(config_.dropout_rate >= 0.0 && config_.dropout_rate < 1.0))
      throw Error(ErrorKind::InvalidArgument, "dropout_rate must lie in [0,1)");

    auto rng = make_stream(options_.seed, {tag(StreamTag::Init)});
    if (backbone_.kind == BackboneKind::TinyConv) {
      const int bodies = options_.share_backbone ? 1 : config_.num_views;
      for (int b = 0; b < bodies; ++b) {
        const std::string prefix = options_.share_backbone ? "backbone." : "backbone" + std::to_string(b) + ".";
        branches_.emplace_back(backbone_, prefix);
        branches_.back().init(rng);
      }
    }
    head_ = nn::DenseHead<Scalar>(config_.num_views * backbone_.feature_dim, config_.hidden_width,
                                  config_.num_classes, config_.dropout_rate);
    head_.init_glorot(rng);
    set_backbone_trainable(backbone_.trainable);
  }

  const BackboneSpec& backbone() const { return backbone_; }
  const HeadConfig& head_config() const { return config_; }
  const ModelOptions& options() const { return options_; }
  int num_views() const { return config_.num_views; }
  int num_classes() const { return config_.num_classes; }
  int hidden_width() const { return head_.hidden_width(); }
  bool executable() const { return backbone_.kind == BackboneKind::TinyConv; }
  /// Number of distinct backbone bodies holding weights.
  int backbone_bodies() const { return options_.share_backbone ? 1 : config_.num_views; }

  nn::DenseHead<Scalar>& head() { return head_; }
  const nn::DenseHead<Scalar>& head() const { return head_; }

  void set_backbone_trainable(bool trainable) {
    backbone_.trainable = trainable;
    for (auto& b : branches_)
      for (auto* p : b.parameters()) p->trainable = trainable && !p->statistic;
  }

  std::vector<nn::Parameter<Scalar>*> parameters() {
    std::vector<nn::Parameter<Scalar>*> out;
    for (auto& b : branches_)
      for (auto* p : b.parameters()) out.push_back(p);
    for (auto* p : head_.parameters()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Class probabilities, one row per sample (B x C).
  nn::Matrix<Scalar> forward(std::span<const Sample> batch, nn::Mode mode, Rng* dropout_rng = nullptr) const {
    return run(batch, mode, dropout_rng, nullptr).transpose();
  }

  /// Mean categorical cross-entropy over the batch; parameter gradients are
  /// overwritten with d(loss)/d(parameter).
  Scalar loss_and_gradients(std::span<const Sample> batch, std::span<const int> targets, nn::Mode mode,
                            Rng* dropout_rng = nullptr, nn::Matrix<Scalar>* probabilities = nullptr) {
    if (targets.size() != batch.size()) throw Error(ErrorKind::ShapeMismatch, "targets do not match batch size");
    zero_grad();
    ForwardState state;
    const nn::Matrix<Scalar> probs = run(batch, mode, dropout_rng, &state);
    const auto count = static_cast<Eigen::Index>(batch.size());
    nn::Matrix<Scalar> grad_logits = probs;
    Scalar loss = 0;
    for (Eigen::Index b = 0; b < count; ++b) {
      const int t = targets[b];
      if (t < 0 || t >= config_.num_classes) throw Error(ErrorKind::ShapeMismatch, "target outside class range");
      loss -= std::log(std::max(probs(t, b), std::numeric_limits<Scalar>::min()));
      grad_logits(t, b) -= Scalar(1);
    }
    grad_logits /= Scalar(count);
    loss /= Scalar(count);

    const nn::Matrix<Scalar> grad_features = head_.backward(state.head, grad_logits);
    const int d = backbone_.feature_dim;
    for (int v = 0; v < config_.num_views; ++v) {
      auto& norm = branch(v).norm();
      norm.update_statistics(state.norm[v]);
      if (!backbone_.trainable) continue;
      const nn::Matrix<Scalar> grad_pooled = norm.backward(state.norm[v], grad_features.middleRows(Eigen::Index(v) * d, d));
      for (Eigen::Index b = 0; b < count; ++b)
        branch(v).backward(state.branch[b * config_.num_views + v], grad_pooled.col(b));
    }
    if (probabilities) *probabilities = probs.transpose();
    return loss;
  }

private:
  nn::TinyConv<Scalar>& branch(int view) { return branches_[options_.share_backbone ? 0 : view]; }
  const nn::TinyConv<Scalar>& branch(int view) const { return branches_[options_.share_backbone ? 0 : view]; }

  nn::Matrix<Scalar> run(std::span<const Sample> batch, nn::Mode mode, Rng* rng, ForwardState* state) const {
    if (!executable())
      throw Error(ErrorKind::BackboneNotExecutable, backbone_.name + " is available for parameter accounting only");
    const int views = config_.num_views, d = backbone_.feature_dim;
    const auto count = static_cast<Eigen::Index>(batch.size());
    nn::Matrix<Scalar> features(Eigen::Index(views) * d, count);
    if (state) state->branch.resize(std::size_t(count) * views);
    for (Eigen::Index b = 0; b < count; ++b) {
      const Sample& sample = batch[b];
      if (static_cast<int>(sample.size()) != views)
        throw Error(ErrorKind::ShapeMismatch, "sample has " + std::to_string(sample.size()) + " views, model expects " +
                                                  std::to_string(views));
      for (int v = 0; v < views; ++v) {
        const Image& image = *sample[v];
        if (image.height() != kStandardSide || image.width() != kStandardSide)
          throw Error(ErrorKind::ShapeMismatch, "input images must be standardized to 224x224");
        auto* cache = state ? &state->branch[b * views + v] : nullptr;
        features.col(b).segment(Eigen::Index(v) * d, d) = branch(v).forward(image, cache);
      }
    }
    if (state) state->norm.resize(std::size_t(views));
    for (int v = 0; v < views; ++v) {
      auto block = features.middleRows(Eigen::Index(v) * d, d);
      block = branch(v).norm().forward(block, mode, state ? &state->norm[v] : nullptr);
    }
    return head_.forward(features, mode, rng, state ? &state->head : nullptr);
  }

  BackboneSpec backbone_;
  HeadConfig config_;
  ModelOptions options_;
  std::vector<nn::TinyConv<Scalar>> branches_;
  nn::DenseHead<Scalar> head_;
};

using Model = MvsNet<float>;

inline void check_buildable(const BackboneSpec& backbone) {
  const auto names = registered_backbones();
  if (std::find(names.begin(), names.end(), backbone.name) == names.end())
    throw Error(ErrorKind::UnknownBackbone, backbone.name);
  if (backbone.kind == BackboneKind::TinyConv && backbone.weight_init == WeightInit::PretrainedImageNet)
    throw Error(ErrorKind::PretrainedWeightsUnavailable, backbone.name + " has no pretrained weights");
}

/// Four-view model. Standard backbones build for accounting but cannot run forward.
template <typename Scalar = float>
MvsNet<Scalar> build(const BackboneSpec& backbone, const HeadConfig& head, ModelOptions options = {}) {
  check_buildable(backbone);
  if (head.num_views != static_cast<int>(kNumViews))
    throw Error(ErrorKind::InvalidArgument, "multi-view model takes exactly 4 views");
  return MvsNet<Scalar>(backbone, head, options);
}

template <typename Scalar = float>
MvsNet<Scalar> build(const BackboneSpec& backbone, int classes, ModelOptions options = {}) {
  return build<Scalar>(backbone, HeadConfig::for_backbone(backbone, kNumViews, classes), options);
}

/// One input channel; the head is built with the same rule at V = 1.
template <typename Scalar = float>
MvsNet<Scalar> build_single_view(const BackboneSpec& backbone, int classes, ModelOptions options = {}) {
  check_buildable(backbone);
  return MvsNet<Scalar>(backbone, HeadConfig::for_backbone(backbone, 1, classes), options);
}

/// Every weight and bias counted once; frozen bodies and normalization
/// statistics land in the non-trainable column.
template <typename Scalar>
ParameterCount count_parameters(const MvsNet<Scalar>& model) {
  ParameterCount count = std::int64_t(model.backbone_bodies()) * backbone_parameters(model.backbone());
  count.trainable += head_parameter_count(model.backbone().feature_dim, model.num_views(), model.num_classes());
  return count;
}

/// Directly tallies allocated tensors (only meaningful for executable backbones).
template <typename Scalar>
ParameterCount count_allocated(MvsNet<Scalar>& model) {
  ParameterCount count;
  for (auto* p : model.parameters()) (p->trainable ? count.trainable : count.non_trainable) += p->value.size();
  return count;
}

}  // namespace mvs
