#pragma once

#include "mvs/backbone.hpp"
#include "mvs/image.hpp"
#include "mvs/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace mvs::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
/// channels x (height*width); each channel is one contiguous row.
template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool trainable = true;
  /// Running statistic updated outside the optimizer; never trainable.
  bool statistic = false;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix<Scalar>::Zero(rows, cols)), grad(Matrix<Scalar>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
struct FeatureMap {
  Tensor<Scalar> data;
  int height = 0;
  int width = 0;
};

enum class Mode { Train, Eval };

/// 2-D convolution as im2col + GEMM.
template <typename Scalar>
class Conv2d {
public:
  struct Cache {
    Tensor<Scalar> columns;
    int in_height = 0, in_width = 0;
  };

  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding)
      : weight(name + ".weight", out_channels, in_channels * kernel * kernel),
        bias(name + ".bias", out_channels, 1),
        in_channels_(in_channels), kernel_(kernel), stride_(stride), padding_(padding) {}

  int out_size(int in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }

  void init_he(Rng& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / double(weight.value.cols())));
    for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = Scalar(normal(rng));
    bias.value.setZero();
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& in, Cache& cache) const {
    const int oh = out_size(in.height), ow = out_size(in.width);
    cache.in_height = in.height;
    cache.in_width = in.width;
    im2col(in, oh, ow, cache.columns);
    FeatureMap<Scalar> out;
    out.height = oh;
    out.width = ow;
    out.data.noalias() = weight.value * cache.columns;
    out.data.colwise() += bias.value.col(0);
    return out;
  }

  /// Accumulates parameter gradients; returns the input gradient when asked.
  void backward(const Cache& cache, const Tensor<Scalar>& grad_out, Tensor<Scalar>* grad_in) {
    weight.grad.noalias() += grad_out * cache.columns.transpose();
    bias.grad.col(0) += grad_out.rowwise().sum();
    if (!grad_in) return;
    const Tensor<Scalar> grad_columns = weight.value.transpose() * grad_out;
    col2im(grad_columns, cache.in_height, cache.in_width, *grad_in);
  }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;

private:
  void im2col(const FeatureMap<Scalar>& in, int oh, int ow, Tensor<Scalar>& columns) const {
    const int k = kernel_;
    columns.resize(Eigen::Index(in_channels_) * k * k, Eigen::Index(oh) * ow);
    for (int c = 0; c < in_channels_; ++c) {
      const Scalar* src = in.data.row(c).data();
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          Scalar* dst = columns.row((Eigen::Index(c) * k + ky) * k + kx).data();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - padding_ + ky;
            Scalar* row = dst + Eigen::Index(oy) * ow;
            if (iy < 0 || iy >= in.height) {
              std::fill(row, row + ow, Scalar(0));
              continue;
            }
            const Scalar* src_row = src + Eigen::Index(iy) * in.width;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - padding_ + kx;
              row[ox] = (ix < 0 || ix >= in.width) ? Scalar(0) : src_row[ix];
            }
          }
        }
      }
    }
  }

  void col2im(const Tensor<Scalar>& columns, int ih, int iw, Tensor<Scalar>& out) const {
    const int k = kernel_;
    const int oh = out_size(ih), ow = out_size(iw);
    out.setZero(in_channels_, Eigen::Index(ih) * iw);
    for (int c = 0; c < in_channels_; ++c) {
      Scalar* dst = out.row(c).data();
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const Scalar* src = columns.row((Eigen::Index(c) * k + ky) * k + kx).data();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= ih) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - padding_ + kx;
              if (ix >= 0 && ix < iw) dst[Eigen::Index(iy) * iw + ix] += src[Eigen::Index(oy) * ow + ox];
            }
          }
        }
      }
    }
  }

  int in_channels_ = 0, kernel_ = 1, stride_ = 1, padding_ = 0;
};

/// Non-overlapping max pooling; remembers the winning input index per output.
template <typename Scalar>
FeatureMap<Scalar> max_pool(const FeatureMap<Scalar>& in, int size, Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& argmax) {
  const int oh = in.height / size, ow = in.width / size;
  const auto channels = in.data.rows();
  FeatureMap<Scalar> out;
  out.height = oh;
  out.width = ow;
  out.data.resize(channels, Eigen::Index(oh) * ow);
  argmax.resize(channels, Eigen::Index(oh) * ow);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const Scalar* src = in.data.row(c).data();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        int best = (oy * size) * in.width + ox * size;
        for (int dy = 0; dy < size; ++dy)
          for (int dx = 0; dx < size; ++dx) {
            const int i = (oy * size + dy) * in.width + ox * size + dx;
            if (src[i] > src[best]) best = i;
          }
        out.data(c, Eigen::Index(oy) * ow + ox) = src[best];
        argmax(c, Eigen::Index(oy) * ow + ox) = best;
      }
    }
  }
  return out;
}

/// Per-feature batch normalization over the columns of a (features x batch)
/// matrix. Train mode normalizes with batch statistics; eval mode and frozen
/// layers use the moving averages.
template <typename Scalar>
class BatchNorm {
public:
  struct Cache {
    Matrix<Scalar> normalized;  // d x B
    Vector<Scalar> mean, variance, inv_std;
    bool batch_statistics = false;
  };

  BatchNorm() = default;
  BatchNorm(const std::string& prefix, int features, double momentum = 0.9, double epsilon = 1e-3)
      : gamma(prefix + "gamma", features, 1),
        beta(prefix + "beta", features, 1),
        moving_mean(prefix + "moving_mean", features, 1),
        moving_variance(prefix + "moving_variance", features, 1),
        momentum_(momentum),
        epsilon_(epsilon) {
    gamma.value.setOnes();
    moving_variance.value.setOnes();
    moving_mean.statistic = moving_variance.statistic = true;
    moving_mean.trainable = moving_variance.trainable = false;
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, Mode mode, Cache* cache) const {
    Cache local;
    Cache& cc = cache ? *cache : local;
    cc.batch_statistics = mode == Mode::Train && gamma.trainable;
    if (cc.batch_statistics) {
      cc.mean = x.rowwise().mean();
      cc.variance = (x.colwise() - cc.mean).array().square().rowwise().mean();
    } else {
      cc.mean = moving_mean.value.col(0);
      cc.variance = moving_variance.value.col(0);
    }
    cc.inv_std = (cc.variance.array() + Scalar(epsilon_)).rsqrt();
    cc.normalized = (x.colwise() - cc.mean).array().colwise() * cc.inv_std.array();
    Matrix<Scalar> y = cc.normalized.array().colwise() * gamma.value.col(0).array();
    y.colwise() += beta.value.col(0);
    return y;
  }

  /// Folds the batch statistics of a train-mode pass into the moving averages.
  void update_statistics(const Cache& cache) {
    if (!cache.batch_statistics) return;
    const Scalar m = Scalar(momentum_);
    moving_mean.value.col(0) = m * moving_mean.value.col(0) + (Scalar(1) - m) * cache.mean;
    moving_variance.value.col(0) = m * moving_variance.value.col(0) + (Scalar(1) - m) * cache.variance;
  }

  /// Accumulates gamma/beta gradients; returns dL/dx.
  Matrix<Scalar> backward(const Cache& cache, const Matrix<Scalar>& grad_out) {
    gamma.grad.col(0) += grad_out.cwiseProduct(cache.normalized).rowwise().sum();
    beta.grad.col(0) += grad_out.rowwise().sum();
    const Matrix<Scalar> grad_norm = grad_out.array().colwise() * gamma.value.col(0).array();
    if (!cache.batch_statistics) return grad_norm.array().colwise() * cache.inv_std.array();
    const Scalar count = Scalar(grad_out.cols());
    const Vector<Scalar> sum = grad_norm.rowwise().sum();
    const Vector<Scalar> dot = grad_norm.cwiseProduct(cache.normalized).rowwise().sum();
    Matrix<Scalar> centred = grad_norm * count;
    centred.colwise() -= sum;
    centred -= (cache.normalized.array().colwise() * dot.array()).matrix();
    return (centred.array().colwise() * cache.inv_std.array()) / count;
  }

  std::vector<Parameter<Scalar>*> parameters() { return {&gamma, &beta, &moving_mean, &moving_variance}; }

  Parameter<Scalar> gamma, beta, moving_mean, moving_variance;

private:
  double momentum_ = 0.9;
  double epsilon_ = 1e-3;
};

/// Three conv-ReLU-maxpool blocks followed by global average pooling; the
/// pooled features are batch-normalized across the batch (see norm()).
/// Block 1 is a 4x4/4 patch convolution, blocks 2 and 3 are 3x3 'same'.
template <typename Scalar>
class TinyConv {
public:
  using IndexMap = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  static constexpr int kBlocks = 3;

  struct Cache {
    std::array<typename Conv2d<Scalar>::Cache, kBlocks> conv;
    std::array<Tensor<Scalar>, kBlocks> activation;  // post-ReLU, pre-pool
    std::array<IndexMap, kBlocks> argmax;
    std::array<int, kBlocks> act_height{}, act_width{};
    int pooled_pixels = 0;
  };

  TinyConv() = default;
  TinyConv(const BackboneSpec& spec, const std::string& prefix) : normalization_(spec.normalization) {
    const auto& ch = spec.block_channels;
    convs_[0] = Conv2d<Scalar>(prefix + "conv1", 3, ch[0], 4, 4, 0);
    convs_[1] = Conv2d<Scalar>(prefix + "conv2", ch[0], ch[1], 3, 1, 1);
    convs_[2] = Conv2d<Scalar>(prefix + "conv3", ch[1], ch[2], 3, 1, 1);
    norm_ = BatchNorm<Scalar>(prefix + "norm.", ch[2]);
    feature_dim_ = ch[2];
  }

  int feature_dim() const { return feature_dim_; }

  void init(Rng& rng) {
    for (auto& c : convs_) c.init_he(rng);
  }

  FeatureMap<Scalar> to_input(const Image& image) const {
    FeatureMap<Scalar> in;
    in.height = int(image.height());
    in.width = int(image.width());
    in.data.resize(3, image.height() * image.width());
    for (int c = 0; c < 3; ++c) {
      const auto flat = image.channels[c].reshaped<Eigen::RowMajor>().template cast<Scalar>();
      in.data.row(c) = ((flat.array() - Scalar(normalization_.mean[c])) / Scalar(normalization_.stddev[c])).transpose();
    }
    return in;
  }

  /// Returns the pooled, not yet normalized, feature vector of one image.
  Vector<Scalar> forward(const Image& image, Cache* cache) const {
    Cache local;
    Cache& cc = cache ? *cache : local;
    FeatureMap<Scalar> x = to_input(image);
    for (int b = 0; b < kBlocks; ++b) {
      FeatureMap<Scalar> y = convs_[b].forward(x, cc.conv[b]);
      y.data = y.data.cwiseMax(Scalar(0));
      cc.act_height[b] = y.height;
      cc.act_width[b] = y.width;
      x = max_pool(y, 2, cc.argmax[b]);
      if (cache) cc.activation[b] = std::move(y.data);
    }
    cc.pooled_pixels = x.height * x.width;
    return x.data.rowwise().mean();
  }

  void backward(const Cache& cache, const Vector<Scalar>& grad_feature) {
    Tensor<Scalar> grad = grad_feature.replicate(1, cache.pooled_pixels) / Scalar(cache.pooled_pixels);
    for (int b = kBlocks - 1; b >= 0; --b) {
      // Un-pool onto the pre-pool activation, then through the ReLU.
      const auto& act = cache.activation[b];
      Tensor<Scalar> grad_act = Tensor<Scalar>::Zero(act.rows(), act.cols());
      const auto& argmax = cache.argmax[b];
      for (Eigen::Index c = 0; c < grad.rows(); ++c)
        for (Eigen::Index i = 0; i < grad.cols(); ++i) grad_act(c, argmax(c, i)) += grad(c, i);
      grad_act = (act.array() > Scalar(0)).select(grad_act, Scalar(0));
      if (b > 0) {
        Tensor<Scalar> grad_in;
        convs_[b].backward(cache.conv[b], grad_act, &grad_in);
        grad = std::move(grad_in);
      } else {
        convs_[b].backward(cache.conv[b], grad_act, nullptr);
      }
    }
  }

  std::vector<Parameter<Scalar>*> parameters() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& c : convs_) {
      out.push_back(&c.weight);
      out.push_back(&c.bias);
    }
    for (auto* p : norm_.parameters()) out.push_back(p);
    return out;
  }

  /// Batch normalization of pooled features, applied across a batch.
  BatchNorm<Scalar>& norm() { return norm_; }
  const BatchNorm<Scalar>& norm() const { return norm_; }

private:
  InputNormalization normalization_;
  BatchNorm<Scalar> norm_;
  std::array<Conv2d<Scalar>, kBlocks> convs_;
  int feature_dim_ = 0;
};

/// Concatenated features -> dense(n, ReLU) -> dropout -> dense(C) -> softmax.
template <typename Scalar>
class DenseHead {
public:
  struct Cache {
    Matrix<Scalar> input;   // D x B
    Matrix<Scalar> hidden;  // n x B, pre-activation
    Matrix<Scalar> mask;    // n x B dropout scale (empty in eval)
    Matrix<Scalar> dropped; // n x B, after ReLU and dropout
  };

  DenseHead() = default;
  DenseHead(int in_features, int hidden_width, int classes, double dropout_rate)
      : hidden_w("head.hidden.weight", hidden_width, in_features),
        hidden_b("head.hidden.bias", hidden_width, 1),
        out_w("head.output.weight", classes, hidden_width),
        out_b("head.output.bias", classes, 1),
        dropout_rate_(dropout_rate) {}

  void init_glorot(Rng& rng) {
    for (auto* w : {&hidden_w, &out_w}) {
      const double limit = std::sqrt(6.0 / double(w->value.rows() + w->value.cols()));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index i = 0; i < w->value.size(); ++i) w->value.data()[i] = Scalar(dist(rng));
    }
    hidden_b.value.setZero();
    out_b.value.setZero();
  }

  int hidden_width() const { return int(hidden_w.value.rows()); }
  int classes() const { return int(out_w.value.rows()); }
  double dropout_rate() const { return dropout_rate_; }

  /// Column-wise class probabilities (C x B).
  Matrix<Scalar> forward(const Matrix<Scalar>& features, Mode mode, Rng* rng, Cache* cache) const {
    Matrix<Scalar> hidden = hidden_w.value * features;
    hidden.colwise() += hidden_b.value.col(0);
    Matrix<Scalar> act = hidden.cwiseMax(Scalar(0));
    Matrix<Scalar> mask;
    if (mode == Mode::Train && dropout_rate_ > 0.0 && rng) {
      mask.resize(act.rows(), act.cols());
      std::bernoulli_distribution keep(1.0 - dropout_rate_);
      const Scalar scale = Scalar(1.0 / (1.0 - dropout_rate_));
      for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? scale : Scalar(0);
      act = act.cwiseProduct(mask);
    }
    Matrix<Scalar> logits = out_w.value * act;
    logits.colwise() += out_b.value.col(0);
    if (cache) {
      cache->input = features;
      cache->hidden = std::move(hidden);
      cache->mask = std::move(mask);
      cache->dropped = act;
    }
    return softmax(logits);
  }

  static Matrix<Scalar> softmax(const Matrix<Scalar>& logits) {
    Matrix<Scalar> shifted = logits.rowwise() - logits.colwise().maxCoeff();
    Matrix<Scalar> e = shifted.array().exp();
    return e.array().rowwise() / e.colwise().sum().array();
  }

  /// Accumulates gradients from dL/dlogits; returns dL/dfeatures (D x B).
  Matrix<Scalar> backward(const Cache& cache, const Matrix<Scalar>& grad_logits) {
    out_w.grad.noalias() += grad_logits * cache.dropped.transpose();
    out_b.grad.col(0) += grad_logits.rowwise().sum();
    Matrix<Scalar> grad_act = out_w.value.transpose() * grad_logits;
    if (cache.mask.size() > 0) grad_act = grad_act.cwiseProduct(cache.mask);
    Matrix<Scalar> grad_hidden = (cache.hidden.array() > Scalar(0)).select(grad_act, Scalar(0));
    hidden_w.grad.noalias() += grad_hidden * cache.input.transpose();
    hidden_b.grad.col(0) += grad_hidden.rowwise().sum();
    return hidden_w.value.transpose() * grad_hidden;
  }

  std::vector<Parameter<Scalar>*> parameters() { return {&hidden_w, &hidden_b, &out_w, &out_b}; }

  Parameter<Scalar> hidden_w, hidden_b, out_w, out_b;

private:
  double dropout_rate_ = 0.4;
};

}  // namespace mvs::nn
