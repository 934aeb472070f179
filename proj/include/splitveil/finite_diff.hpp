// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "splitveil/tensor.hpp"

namespace splitveil {

// Central-difference Jacobian of a deterministic tensor map. Row i holds
// d(out_i)/d(x_j) across columns j. The map is evaluated twice at x up front;
// if the two results differ the function is rejected as non-deterministic.
Tensor finite_diff_jacobian(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double step);

// Central-difference gradient of a scalar-valued function.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& x, double step);

}  // namespace splitveil
