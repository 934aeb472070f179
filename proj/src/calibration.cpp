// SPDX-License-Identifier: Apache-2.0
#include "splitveil/calibration.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <thread>

#include "splitveil/rng.hpp"

namespace splitveil {

std::string budget_kind_name(BudgetKind kind) { return kind == BudgetKind::kDfil ? "dfil" : "fsinfo"; }

Tensor jacobian(const PipelineForward& forward, const Tensor& x, int threads) {
  Graph g;
  ValueId input = g.leaf(x, true, "jacobian_input");
  ValueId output = forward(g, input);
  const Tensor& out = g.value(output);
  const int64_t rows = out.numel();
  const int64_t cols = x.numel();
  Tensor jac = Tensor::zeros({rows, cols});

  auto run_rows = [&](int64_t begin, int64_t end) {
    Tensor seed = Tensor::zeros(out.shape);
    for (int64_t i = begin; i < end; ++i) {
      seed.data[static_cast<size_t>(i)] = 1.0;
      Tensor row = g.vjp(output, seed, input);
      seed.data[static_cast<size_t>(i)] = 0.0;
      std::copy(row.data.begin(), row.data.end(), jac.data.begin() + i * cols);
    }
  };

  threads = std::max(1, threads);
  if (threads == 1 || rows < 2 * threads) {
    run_rows(0, rows);
  } else {
    std::vector<std::thread> pool;
    const int64_t chunk = (rows + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int64_t begin = t * chunk;
      const int64_t end = std::min(rows, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(run_rows, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  if (!jac.all_finite()) throw std::runtime_error("jacobian: non-finite entries in the extracted matrix");
  return jac;
}

std::vector<double> symmetric_eigenvalues(const Tensor& sym) {
  if (sym.rank() != 2 || sym.shape[0] != sym.shape[1]) {
    throw std::invalid_argument("symmetric_eigenvalues: expected a square matrix, got " + shape_to_string(sym.shape));
  }
  const int64_t n = sym.shape[0];
  std::vector<double> a = sym.data;
  auto at = [&a, n](int64_t i, int64_t j) -> double& { return a[static_cast<size_t>(i * n + j)]; };

  const int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      diag += at(i, i) * at(i, i);
      for (int64_t j = i + 1; j < n; ++j) off += 2.0 * at(i, j) * at(i, j);
    }
    if (off <= 1e-28 * (diag + off) || off == 0.0) break;
    for (int64_t p = 0; p < n - 1; ++p) {
      for (int64_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double tau = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (int64_t k = 0; k < n; ++k) {
          const double akp = at(k, p);
          const double akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int64_t k = 0; k < n; ++k) {
          const double apk = at(p, k);
          const double aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = at(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

LogDetResult log_det_gram(const Tensor& jac, double floor) {
  if (jac.rank() != 2) {
    throw std::invalid_argument("log_det_gram: expected a [rows, cols] Jacobian, got " + shape_to_string(jac.shape));
  }
  const int64_t rows = jac.shape[0], cols = jac.shape[1];
  Tensor gram = Tensor::zeros({cols, cols});
  const double* pj = jac.data.data();
  for (int64_t i = 0; i < cols; ++i) {
    for (int64_t j = i; j < cols; ++j) {
      double acc = 0.0;
      for (int64_t r = 0; r < rows; ++r) acc += pj[r * cols + i] * pj[r * cols + j];
      gram.data[static_cast<size_t>(i * cols + j)] = acc;
      gram.data[static_cast<size_t>(j * cols + i)] = acc;
    }
  }
  std::vector<double> eig = symmetric_eigenvalues(gram);
  LogDetResult result;
  double sum_log = 0.0;
  for (double lambda : eig) {
    if (lambda < floor) {
      lambda = floor;
      ++result.floored;
    }
    sum_log += std::log(lambda);
  }
  result.half_mean_log = sum_log / (2.0 * static_cast<double>(cols));
  return result;
}

namespace {
void check_jacobian_dim(const Tensor& jac, int64_t d, const char* what) {
  if (jac.rank() != 2) {
    throw std::invalid_argument(std::string(what) + ": expected a [rows, cols] Jacobian, got " +
                                shape_to_string(jac.shape));
  }
  if (jac.shape[1] != d) {
    throw std::invalid_argument(std::string(what) + ": input dimension " + std::to_string(d) +
                                " does not match Jacobian columns " + std::to_string(jac.shape[1]));
  }
  if (!jac.all_finite()) throw std::invalid_argument(std::string(what) + ": non-finite Jacobian entries");
}
}  // namespace

NoiseScale sigma_dfil(const Tensor& jac, int64_t d, double dfil_target) {
  check_jacobian_dim(jac, d, "sigma_dfil");
  if (dfil_target <= 0.0) {
    throw std::invalid_argument("sigma_dfil: dFIL target must be strictly positive, got " +
                                std::to_string(dfil_target));
  }
  double trace = 0.0;
  for (double v : jac.data) trace += v * v;
  NoiseScale scale;
  scale.budget = {BudgetKind::kDfil, dfil_target};
  scale.sigma = std::sqrt(trace / (static_cast<double>(d) * dfil_target));
  return scale;
}

NoiseScale sigma_fsinfo(const Tensor& jac, int64_t d, double fsinfo_target) {
  check_jacobian_dim(jac, d, "sigma_fsinfo");
  const LogDetResult det = log_det_gram(jac);
  const double two_pi_e = 2.0 * std::acos(-1.0) * std::exp(1.0);
  NoiseScale scale;
  scale.budget = {BudgetKind::kFsinfo, fsinfo_target};
  scale.sigma = std::exp(det.half_mean_log - fsinfo_target - 0.5 * std::log(two_pi_e));
  scale.degenerate_rank = det.floored * 10 > d;
  return scale;
}

namespace {
uint64_t tensor_fingerprint(const Tensor& t) {
  uint64_t h = 1469598103934665603ULL;
  const uint8_t* p = reinterpret_cast<const uint8_t*>(t.data.data());
  for (size_t i = 0; i < t.data.size() * sizeof(double); ++i) h = (h ^ p[i]) * 1099511628211ULL;
  return h;
}
}  // namespace

NoiseScale calibrate(const PipelineForward& forward, const std::vector<Tensor>& calib_set,
                     const PrivacyBudget& budget, int64_t epoch, int threads) {
  if (calib_set.empty()) throw std::invalid_argument("calibrate: empty calibration set");
  double sum_sigma = 0.0;
  bool degenerate = false;
  uint64_t last_fp = 0;
  bool have_last = false;
  NoiseScale last;
  for (const Tensor& x : calib_set) {
    Tensor jac = jacobian(forward, x, threads);
    const uint64_t fp = tensor_fingerprint(jac);
    if (!have_last || fp != last_fp) {
      last = budget.kind == BudgetKind::kDfil ? sigma_dfil(jac, x.numel(), budget.target)
                                              : sigma_fsinfo(jac, x.numel(), budget.target);
      last_fp = fp;
      have_last = true;
    }
    sum_sigma += last.sigma;
    degenerate = degenerate || last.degenerate_rank;
  }
  NoiseScale scale;
  scale.budget = budget;
  scale.sigma = sum_sigma / static_cast<double>(calib_set.size());
  scale.epoch = epoch;
  scale.calib_samples = static_cast<int64_t>(calib_set.size());
  scale.degenerate_rank = degenerate;
  return scale;
}

Tensor perturb(const Tensor& z, double sigma, uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("perturb: sigma must be finite and non-negative, got " + std::to_string(sigma));
  }
  if (sigma == 0.0) return z;
  Tensor out = z;
  Rng rng(seed);
  for (double& v : out.data) v += rng.gaussian(0.0, sigma);
  return out;
}

}  // namespace splitveil
