#pragma once

#include <cmath>

#include "mlpmatch/core/error.hpp"

namespace mlpmatch::trainer {

struct ScheduleState {
  int t = 0;  // current iteration, 0-based
  int T = 1;  // total iterations

  void validate() const {
    if (T < 1 || t < 0 || t >= T) throw ConfigError("schedule: need 0 <= t < T");
  }
};

// Linear ramp 0 -> lambda_max across the run; hits lambda_max exactly at the
// final iteration.
inline double lambda_x_np_linear(const ScheduleState& s, double lambda_max) {
  s.validate();
  if (s.T < 2) throw ConfigError("lambda_x_np schedule needs T >= 2");
  return lambda_max * static_cast<double>(s.t) / static_cast<double>(s.T - 1);
}

enum class LambdaXnpMode { kLinear, kFixed };

inline double lambda_x_np(const ScheduleState& s, double lambda_max, LambdaXnpMode mode) {
  if (mode == LambdaXnpMode::kFixed) {
    s.validate();
    return lambda_max;
  }
  return lambda_x_np_linear(s, lambda_max);
}

// Poly decay: base_lr * (1 - t/T)^power.
inline double poly_lr(const ScheduleState& s, double base_lr, double power) {
  s.validate();
  return base_lr * std::pow(1.0 - static_cast<double>(s.t) / static_cast<double>(s.T), power);
}

}  // namespace mlpmatch::trainer
