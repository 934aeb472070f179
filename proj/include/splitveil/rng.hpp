// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace splitveil {

// Every random decision in a run is drawn from a stream derived from the run
// seed plus a purpose label, so reordering unrelated draws (or skipping a
// stage entirely) never shifts the streams of the remaining stages.
uint64_t derive_seed(uint64_t base, std::string_view purpose, uint64_t index = 0);

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

  double gaussian(double mean, double stddev) {
    if (stddev == 0.0) return mean;
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  // Uniform integer in [0, n).
  int64_t below(int64_t n) { return std::uniform_int_distribution<int64_t>(0, n - 1)(engine_); }

  // Fisher-Yates shuffle of 0..n-1.
  std::vector<int64_t> permutation(int64_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace splitveil
