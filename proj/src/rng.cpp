// SPDX-License-Identifier: Apache-2.0
#include "splitveil/rng.hpp"

#include <numeric>

namespace splitveil {

namespace {
constexpr uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

uint64_t fnv1a_step(uint64_t h, uint8_t byte) { return (h ^ byte) * kFnvPrime; }

uint64_t fnv1a_u64(uint64_t h, uint64_t v) {
  for (int i = 0; i < 8; ++i) h = fnv1a_step(h, static_cast<uint8_t>(v >> (8 * i)));
  return h;
}

// Final avalanche from splitmix64 so nearby inputs land far apart.
uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

uint64_t derive_seed(uint64_t base, std::string_view purpose, uint64_t index) {
  uint64_t h = kFnvOffset;
  h = fnv1a_u64(h, base);
  for (char c : purpose) h = fnv1a_step(h, static_cast<uint8_t>(c));
  h = fnv1a_u64(h, index);
  return mix(h);
}

std::vector<int64_t> Rng::permutation(int64_t n) {
  std::vector<int64_t> p(static_cast<size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  for (int64_t i = n - 1; i > 0; --i) {
    int64_t j = std::uniform_int_distribution<int64_t>(0, i)(engine_);
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

}  // namespace splitveil
