// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "splitveil/tensor.hpp"

namespace splitveil {

// Bijection between the linear zig-zag index 0..63 and (row, col) of an 8x8
// block; index 0 is the DC coefficient at (0, 0).
class ZigzagTable {
 public:
  ZigzagTable();
  int index_of(int row, int col) const { return to_index_[row * 8 + col]; }
  std::pair<int, int> position_of(int index) const { return to_pos_[index]; }

  static const ZigzagTable& instance();

 private:
  std::array<int, 64> to_index_{};
  std::array<std::pair<int, int>, 64> to_pos_{};
};

// Full-resolution YUV planes (no chroma subsampling), each [H, W].
struct YuvImage {
  Tensor y;
  Tensor u;
  Tensor v;

  int64_t height() const { return y.shape[0]; }
  int64_t width() const { return y.shape[1]; }
};

// Frequency-channel representation of an image: each retained zig-zag index
// of each YUV plane becomes one channel of spatial size [H/8, W/8]. Channels
// are ordered Y (ascending zig-zag index), then U, then V; deleted channels
// are absent.
struct CoefficientTensor {
  Tensor data;                // [3 * |retained|, H/8, W/8]
  std::vector<int> retained;  // ascending zig-zag indices

  int64_t channels() const { return data.shape[0]; }
};

// JFIF full-range color transform. Inputs are [3, H, W] with values in [0, 1]
// and H, W multiples of 8; out-of-range values are rejected.
YuvImage rgb_to_yuv(const Tensor& rgb);
Tensor yuv_to_rgb(const YuvImage& yuv);

// Orthonormal 2-D DCT-II with JPEG scaling: the DC coefficient of a constant
// block v is 8v, and the transform preserves energy exactly.
Tensor fdct_block(const Tensor& block);
Tensor idct_block(const Tensor& coeffs);

// Zig-zag indices {64-count, ..., 63}: deleting the K = 64-count
// lowest-frequency coefficients including DC.
std::vector<int> default_retained_set(int count);

// Alternative policy: ranks zig-zag indices by mean absolute coefficient
// amplitude over the given planes and keeps the `count` smallest.
std::vector<int> amplitude_ranked_retained_set(const std::vector<YuvImage>& sample, int count);

// Blockwise FDCT + channel selection of already-preprocessed planes. Linear
// in the plane values.
CoefficientTensor decompose(const YuvImage& planes, const std::vector<int>& retained);

// Inverse of decompose with deleted channels zero-filled.
YuvImage reassemble(const CoefficientTensor& coeffs, int64_t height, int64_t width);

// Dataset pipeline glue: [3, H, W] RGB in [-1, 1] -> YUV planes in [-1, 1]
// (and back). The coefficient pipeline used everywhere is
// decompose(normalized_rgb_to_planes(x), retained).
YuvImage normalized_rgb_to_planes(const Tensor& rgb_norm);
Tensor planes_to_normalized_rgb(const YuvImage& planes);

// Per-sample pipeline over a batch: [N, 3, H, W] -> [N, 3*K, H/8, W/8].
Tensor decompose_batch(const Tensor& rgb_norm_batch, const std::vector<int>& retained);

}  // namespace splitveil
