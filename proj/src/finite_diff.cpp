// SPDX-License-Identifier: Apache-2.0
#include "splitveil/finite_diff.hpp"

#include <stdexcept>

namespace splitveil {

Tensor finite_diff_jacobian(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_jacobian: step must be positive");
  const Tensor base = fn(x);
  const Tensor again = fn(x);
  if (base.shape != again.shape || base.data != again.data) {
    throw std::invalid_argument("finite_diff_jacobian: function is not deterministic (two evaluations differ)");
  }
  const int64_t out_dim = base.numel();
  const int64_t in_dim = x.numel();
  Tensor jac = Tensor::zeros({out_dim, in_dim});
  Tensor probe = x;
  for (int64_t j = 0; j < in_dim; ++j) {
    const double orig = probe.data[static_cast<size_t>(j)];
    probe.data[static_cast<size_t>(j)] = orig + step;
    Tensor hi = fn(probe);
    probe.data[static_cast<size_t>(j)] = orig - step;
    Tensor lo = fn(probe);
    probe.data[static_cast<size_t>(j)] = orig;
    for (int64_t i = 0; i < out_dim; ++i) {
      jac.data[static_cast<size_t>(i * in_dim + j)] =
          (hi.data[static_cast<size_t>(i)] - lo.data[static_cast<size_t>(i)]) / (2.0 * step);
    }
  }
  return jac;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& x, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Tensor grad = Tensor::zeros(x.shape);
  Tensor probe = x;
  for (int64_t j = 0; j < x.numel(); ++j) {
    const double orig = probe.data[static_cast<size_t>(j)];
    probe.data[static_cast<size_t>(j)] = orig + step;
    const double hi = fn(probe);
    probe.data[static_cast<size_t>(j)] = orig - step;
    const double lo = fn(probe);
    probe.data[static_cast<size_t>(j)] = orig;
    grad.data[static_cast<size_t>(j)] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

}  // namespace splitveil
