#pragma once

#include <vector>

#include "mlpmatch/model/layers.hpp"

namespace mlpmatch::trainer {

// Gradient descent with classical momentum and decoupled-from-nothing L2
// weight decay folded into the gradient (the usual SGD formulation):
//   v <- momentum * v + (grad + wd * w);  w <- w - lr * group_mult * v
template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer() = default;
  SgdOptimizer(std::vector<model::ParamRef<T>> params, double momentum, double weight_decay,
               double decoder_lr_mult)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay),
        decoder_lr_mult_(decoder_lr_mult) {
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optimizer: momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("optimizer: weight decay must be non-negative");
    if (decoder_lr_mult <= 0.0) throw ConfigError("optimizer: decoder lr multiplier must be positive");
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.emplace_back(p.value->shape());
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& p = params_[i];
      Tensor<T>& v = velocity_[i];
      const T eff_lr = static_cast<T>(lr * (p.decoder_group ? decoder_lr_mult_ : 1.0));
      const T mom = static_cast<T>(momentum_);
      const T wd = static_cast<T>(weight_decay_);
      for (std::int64_t j = 0; j < v.size(); ++j) {
        const T g = (*p.grad)[j] + wd * (*p.value)[j];
        v[j] = mom * v[j] + g;
        (*p.value)[j] -= eff_lr * v[j];
      }
    }
  }

  // Momentum buffers in parameter order, for checkpointing.
  std::vector<Tensor<T>>& velocity() { return velocity_; }
  const std::vector<model::ParamRef<T>>& params() const { return params_; }

 private:
  std::vector<model::ParamRef<T>> params_;
  std::vector<Tensor<T>> velocity_;
  double momentum_ = 0.9;
  double weight_decay_ = 1e-4;
  double decoder_lr_mult_ = 10.0;
};

}  // namespace mlpmatch::trainer
