// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "splitveil/autodiff.hpp"
#include "splitveil/tensor.hpp"

namespace splitveil {

enum class BudgetKind { kDfil, kFsinfo };

std::string budget_kind_name(BudgetKind kind);

struct PrivacyBudget {
  BudgetKind kind = BudgetKind::kFsinfo;
  // dFIL targets must be strictly positive; FSInfo may be any real.
  double target = -1.0;
};

struct NoiseScale {
  double sigma = 0.0;
  PrivacyBudget budget;
  int64_t epoch = -1;
  int64_t calib_samples = 0;
  // Set when more than 10% of the eigenvalues of J^T J sat on the
  // numerical floor, i.e. the Jacobian is effectively rank-deficient.
  bool degenerate_rank = false;
};

// A differentiable map recorded on a caller-provided graph; the returned id
// is the pipeline output for the given input leaf.
using PipelineForward = std::function<ValueId(Graph&, ValueId)>;

// Rows = dim(output), cols = dim(input); row i is the gradient of output i
// w.r.t. the pipeline input, extracted one reverse pass per output element.
// Rows are independent, so `threads` > 1 splits them across workers without
// changing the result.
Tensor jacobian(const PipelineForward& forward, const Tensor& x, int threads = 1);

// sigma = sqrt(Tr(J^T J) / (d * dfil)); the trace is accumulated as the
// squared Frobenius norm without forming the d x d product.
NoiseScale sigma_dfil(const Tensor& jac, int64_t d, double dfil_target);

// sigma = det(J^T J)^(1/2d) / (e^FSInfo * sqrt(2*pi*e)), evaluated in log
// space with eigenvalues floored at 1e-12.
NoiseScale sigma_fsinfo(const Tensor& jac, int64_t d, double fsinfo_target);

// Mean per-sample sigma over a calibration set. Identical Jacobians are
// detected by fingerprint so a linear bottom model costs one eigensolve.
NoiseScale calibrate(const PipelineForward& forward, const std::vector<Tensor>& calib_set,
                     const PrivacyBudget& budget, int64_t epoch = -1, int threads = 1);

// z + iid N(0, sigma^2) noise, deterministic per seed.
Tensor perturb(const Tensor& z, double sigma, uint64_t seed);

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
std::vector<double> symmetric_eigenvalues(const Tensor& sym);

// Helper shared by sigma_fsinfo and its tests: (1/(2d)) * sum log
// max(lambda_i, floor) over the eigenvalues of J^T J, plus the count of
// floored eigenvalues.
struct LogDetResult {
  double half_mean_log = 0.0;  // (1/(2d)) * sum log lambda_i
  int64_t floored = 0;
};
LogDetResult log_det_gram(const Tensor& jac, double floor = 1e-12);

}  // namespace splitveil
