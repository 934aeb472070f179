// SPDX-License-Identifier: Apache-2.0
#include "splitveil/losses.hpp"

#include <stdexcept>

#include "splitveil/rng.hpp"

namespace splitveil {

ValueId cross_entropy_loss(Graph& g, ValueId logits, const std::vector<int64_t>& labels) {
  return g.softmax_cross_entropy(logits, labels);
}

std::vector<int64_t> clustering_pairing(int64_t n, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("clustering_pairing: need a batch of at least 2, got " + std::to_string(n));
  Rng rng(seed);
  return rng.permutation(n);
}

ValueId clustering_loss(Graph& g, ValueId z, const std::vector<int64_t>& pairing) {
  const Tensor& vz = g.value(z);
  if (vz.rank() < 2) {
    throw std::invalid_argument("clustering_loss: smashed data must be batched, got " + shape_to_string(vz.shape));
  }
  const int64_t n = vz.shape[0];
  if (n < 2) throw std::invalid_argument("clustering_loss: need a batch of at least 2, got " + std::to_string(n));
  if (static_cast<int64_t>(pairing.size()) != n) {
    throw std::invalid_argument("clustering_loss: pairing has " + std::to_string(pairing.size()) +
                                " entries for a batch of " + std::to_string(n));
  }
  ValueId partner = g.gather_rows(z, pairing);
  ValueId diff = g.sub(z, partner);
  ValueId sq = g.mul(diff, diff);
  return g.scale(g.sum(sq), 1.0 / static_cast<double>(n));
}

namespace {
ValueId flatten_rows(Graph& g, ValueId v) {
  const Tensor& t = g.value(v);
  const int64_t n = t.shape[0];
  return g.reshape(v, {n, t.numel() / n});
}
}  // namespace

ValueId distance_correlation(Graph& g, const Tensor& x_batch, ValueId z) {
  const Tensor& vz = g.value(z);
  if (x_batch.rank() < 2 || vz.rank() < 2 || x_batch.shape[0] != vz.shape[0]) {
    throw std::invalid_argument("distance_correlation: batches disagree, x " + shape_to_string(x_batch.shape) +
                                " vs z " + shape_to_string(vz.shape));
  }
  if (x_batch.shape[0] < 2) throw std::invalid_argument("distance_correlation: need a batch of at least 2");
  const int64_t n = x_batch.shape[0];

  ValueId xc = g.double_center(g.pairwise_distance(
      g.leaf(x_batch.reshaped({n, x_batch.numel() / n}), false)));
  ValueId zc = g.double_center(g.pairwise_distance(flatten_rows(g, z)));
  ValueId dcov2 = g.mean(g.mul(xc, zc));
  ValueId dvarx2 = g.mean(g.mul(xc, xc));
  ValueId dvarz2 = g.mean(g.mul(zc, zc));
  // Degenerate batches (constant x or z) have zero distance variance; the
  // statistic is defined as 0 there.
  if (g.value(dvarx2).data[0] <= 0.0 || g.value(dvarz2).data[0] <= 0.0) {
    return g.leaf(Tensor::scalar(0.0), false, "dcor_degenerate");
  }
  ValueId denom = g.sqrt_floor(g.mul(dvarx2, dvarz2), 1e-300);
  ValueId dcor2 = g.div(dcov2, denom);
  return g.sqrt_floor(dcor2, 0.0);
}

ValueId noise_norm_penalty(Graph& g, ValueId delta) { return g.mean_abs(delta); }

double mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

double distance_correlation_value(const Tensor& x, const Tensor& z) {
  Graph g;
  ValueId zl = g.leaf(z, false);
  ValueId d = distance_correlation(g, x, zl);
  return g.value(d).data[0];
}

}  // namespace splitveil
