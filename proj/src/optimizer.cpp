// SPDX-License-Identifier: Apache-2.0
#include "splitveil/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace splitveil {

void AdamState::step_param(const std::string& name, Tensor& param, const Tensor& grad) {
  if (!param.same_shape(grad)) {
    throw std::invalid_argument("adam: gradient shape " + shape_to_string(grad.shape) + " does not match parameter '" +
                                name + "' of shape " + shape_to_string(param.shape));
  }
  auto it = moments_.find(name);
  if (it == moments_.end()) {
    it = moments_.emplace(name, Moments{Tensor::zeros(param.shape), Tensor::zeros(param.shape)}).first;
  } else if (!it->second.m.same_shape(param)) {
    throw std::invalid_argument("adam: moment buffers for '" + name + "' have shape " +
                                shape_to_string(it->second.m.shape) + " but parameter has " +
                                shape_to_string(param.shape));
  }
  Moments& mom = it->second;
  const double t = static_cast<double>(t_ + 1);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (size_t i = 0; i < param.data.size(); ++i) {
    const double g = grad.data[i];
    mom.m.data[i] = config_.beta1 * mom.m.data[i] + (1.0 - config_.beta1) * g;
    mom.v.data[i] = config_.beta2 * mom.v.data[i] + (1.0 - config_.beta2) * g * g;
    const double m_hat = mom.m.data[i] / bc1;
    const double v_hat = mom.v.data[i] / bc2;
    // Decoupled weight decay: shrink the parameter directly, not the gradient.
    param.data[i] -= config_.lr * config_.weight_decay * param.data[i];
    param.data[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
  }
}

}  // namespace splitveil
