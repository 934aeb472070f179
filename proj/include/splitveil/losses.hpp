// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "splitveil/autodiff.hpp"
#include "splitveil/tensor.hpp"

namespace splitveil {

// Mean over the batch of -log softmax(logits)[label].
ValueId cross_entropy_loss(Graph& g, ValueId logits, const std::vector<int64_t>& labels);

// One fresh uniform permutation per batch; fixed points are allowed and
// contribute zero to the clustering loss.
std::vector<int64_t> clustering_pairing(int64_t n, uint64_t seed);

// (1/N) sum_i ||z_i - z_pairing(i)||^2 over the batch axis.
ValueId clustering_loss(Graph& g, ValueId z, const std::vector<int64_t>& pairing);

// Sample distance correlation between a fixed batch x and the differentiable
// batch z (both flattened to [N, d]). Returns a constant 0 when either
// distance variance vanishes.
ValueId distance_correlation(Graph& g, const Tensor& x_batch, ValueId z);

// Mean absolute value of the learnable noise tensor (Shredder's |delta|).
ValueId noise_norm_penalty(Graph& g, ValueId delta);

// Plain metrics.
double mse(const Tensor& a, const Tensor& b);
double distance_correlation_value(const Tensor& x, const Tensor& z);

}  // namespace splitveil
