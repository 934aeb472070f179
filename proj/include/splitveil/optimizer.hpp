// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "splitveil/tensor.hpp"

namespace splitveil {

// Adam with decoupled weight decay. Defaults follow the training recipe used
// throughout: lr 3e-4, weight decay 0.01, betas (0.9, 0.999).
struct AdamConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  // Applies one update to `param` given `grad`; moment buffers are keyed by
  // `name` and created lazily with the parameter's shape.
  void step_param(const std::string& name, Tensor& param, const Tensor& grad);

  // Advances the shared step counter; call once per optimizer step, after all
  // step_param calls for that step.
  void advance() { ++t_; }

  int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  AdamConfig config_;
  int64_t t_ = 0;  // completed steps; bias correction uses t_ + 1
  std::map<std::string, Moments> moments_;
};

}  // namespace splitveil
