#pragma once

#include "mvs/nn.hpp"

#include <cmath>
#include <vector>

namespace mvs {

/// Adam with bias correction. Moment buffers are matched to parameters by
/// position, so the parameter list must keep a stable order between steps.
template <typename Scalar>
class Adam {
public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-7)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(const std::vector<nn::Parameter<Scalar>*>& params) {
    if (first_.empty()) {
      for (auto* p : params) {
        first_.push_back(nn::Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
        second_.push_back(nn::Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    ++t_;
    const double correction1 = 1.0 - std::pow(beta1_, double(t_));
    const double correction2 = 1.0 - std::pow(beta2_, double(t_));
    const Scalar step_size = Scalar(lr_ * std::sqrt(correction2) / correction1);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto* p = params[i];
      if (!p->trainable) continue;
      first_[i] = Scalar(beta1_) * first_[i] + Scalar(1 - beta1_) * p->grad;
      second_[i] = Scalar(beta2_) * second_[i] + Scalar(1 - beta2_) * p->grad.cwiseAbs2();
      p->value.array() -= step_size * first_[i].array() /
                          (second_[i].array().sqrt() + Scalar(epsilon_ * std::sqrt(correction2)));
    }
  }

  long steps() const { return t_; }

private:
  double lr_, beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<nn::Matrix<Scalar>> first_, second_;
};

}  // namespace mvs
