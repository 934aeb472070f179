// SPDX-License-Identifier: Apache-2.0
#include "splitveil/frequency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace splitveil {

ZigzagTable::ZigzagTable() {
  int idx = 0;
  for (int diag = 0; diag < 15; ++diag) {
    if (diag % 2 == 0) {
      // Even diagonals walk bottom-left to top-right.
      for (int row = std::min(diag, 7); row >= std::max(0, diag - 7); --row) {
        const int col = diag - row;
        to_index_[row * 8 + col] = idx;
        to_pos_[static_cast<size_t>(idx)] = {row, col};
        ++idx;
      }
    } else {
      for (int row = std::max(0, diag - 7); row <= std::min(diag, 7); ++row) {
        const int col = diag - row;
        to_index_[row * 8 + col] = idx;
        to_pos_[static_cast<size_t>(idx)] = {row, col};
        ++idx;
      }
    }
  }
}

const ZigzagTable& ZigzagTable::instance() {
  static const ZigzagTable table;
  return table;
}

namespace {

// Orthonormal 8-point DCT-II basis: basis[u][x] = c(u)/2 * cos((2x+1)u*pi/16).
const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> m{};
    const double pi = std::acos(-1.0);
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
      for (int x = 0; x < 8; ++x) {
        m[static_cast<size_t>(u)][static_cast<size_t>(x)] =
            0.5 * cu * std::cos((2.0 * x + 1.0) * u * pi / 16.0);
      }
    }
    return m;
  }();
  return basis;
}

void fdct_kernel(const double* in, int64_t row_stride, double* out64) {
  const auto& m = dct_basis();
  double tmp[64];
  // rows: tmp = in * M^T
  for (int i = 0; i < 8; ++i) {
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int x = 0; x < 8; ++x) acc += in[i * row_stride + x] * m[static_cast<size_t>(u)][static_cast<size_t>(x)];
      tmp[i * 8 + u] = acc;
    }
  }
  // cols: out = M * tmp
  for (int u = 0; u < 8; ++u) {
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int x = 0; x < 8; ++x) acc += m[static_cast<size_t>(u)][static_cast<size_t>(x)] * tmp[x * 8 + j];
      out64[u * 8 + j] = acc;
    }
  }
}

void idct_kernel(const double* in64, double* out, int64_t row_stride) {
  const auto& m = dct_basis();
  double tmp[64];
  // cols: tmp = M^T * in
  for (int x = 0; x < 8; ++x) {
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u) acc += m[static_cast<size_t>(u)][static_cast<size_t>(x)] * in64[u * 8 + j];
      tmp[x * 8 + j] = acc;
    }
  }
  // rows: out = tmp * M
  for (int x = 0; x < 8; ++x) {
    for (int y = 0; y < 8; ++y) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u) acc += tmp[x * 8 + u] * m[static_cast<size_t>(u)][static_cast<size_t>(y)];
      out[x * row_stride + y] = acc;
    }
  }
}

void check_plane_dims(int64_t h, int64_t w, const char* what) {
  if (h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0) {
    throw std::invalid_argument(std::string(what) + ": spatial dims " + std::to_string(h) + "x" + std::to_string(w) +
                                " must be nonzero multiples of 8");
  }
}

}  // namespace

YuvImage rgb_to_yuv(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.shape[0] != 3) {
    throw std::invalid_argument("rgb_to_yuv: expected [3, H, W], got " + shape_to_string(rgb.shape));
  }
  const int64_t h = rgb.shape[1], w = rgb.shape[2];
  check_plane_dims(h, w, "rgb_to_yuv");
  const int64_t plane = h * w;
  for (double v : rgb.data) {
    if (!(v >= -1e-9 && v <= 1.0 + 1e-9)) {
      throw std::invalid_argument("rgb_to_yuv: pixel value " + std::to_string(v) + " outside [0, 1]");
    }
  }
  YuvImage out{Tensor::zeros({h, w}), Tensor::zeros({h, w}), Tensor::zeros({h, w})};
  const double* r = rgb.data.data();
  const double* g = rgb.data.data() + plane;
  const double* b = rgb.data.data() + 2 * plane;
  for (int64_t i = 0; i < plane; ++i) {
    out.y.data[static_cast<size_t>(i)] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    out.u.data[static_cast<size_t>(i)] = -0.168736 * r[i] - 0.331264 * g[i] + 0.5 * b[i] + 0.5;
    out.v.data[static_cast<size_t>(i)] = 0.5 * r[i] - 0.418688 * g[i] - 0.081312 * b[i] + 0.5;
  }
  return out;
}

Tensor yuv_to_rgb(const YuvImage& yuv) {
  const int64_t h = yuv.height(), w = yuv.width();
  const int64_t plane = h * w;
  Tensor rgb = Tensor::zeros({3, h, w});
  double* r = rgb.data.data();
  double* g = rgb.data.data() + plane;
  double* b = rgb.data.data() + 2 * plane;
  for (int64_t i = 0; i < plane; ++i) {
    const double y = yuv.y.data[static_cast<size_t>(i)];
    const double u = yuv.u.data[static_cast<size_t>(i)] - 0.5;
    const double v = yuv.v.data[static_cast<size_t>(i)] - 0.5;
    r[i] = y + 1.402 * v;
    g[i] = y - 0.344136 * u - 0.714136 * v;
    b[i] = y + 1.772 * u;
  }
  return rgb;
}

Tensor fdct_block(const Tensor& block) {
  if (block.shape != std::vector<int64_t>{8, 8}) {
    throw std::invalid_argument("fdct_block: expected an 8x8 block, got " + shape_to_string(block.shape));
  }
  if (!block.all_finite()) throw std::invalid_argument("fdct_block: non-finite input");
  Tensor out = Tensor::zeros({8, 8});
  fdct_kernel(block.data.data(), 8, out.data.data());
  return out;
}

Tensor idct_block(const Tensor& coeffs) {
  if (coeffs.shape != std::vector<int64_t>{8, 8}) {
    throw std::invalid_argument("idct_block: expected an 8x8 block, got " + shape_to_string(coeffs.shape));
  }
  if (!coeffs.all_finite()) throw std::invalid_argument("idct_block: non-finite input");
  Tensor out = Tensor::zeros({8, 8});
  idct_kernel(coeffs.data.data(), out.data.data(), 8);
  return out;
}

std::vector<int> default_retained_set(int count) {
  if (count < 1 || count > 64) {
    throw std::invalid_argument("default_retained_set: count " + std::to_string(count) + " outside [1, 64]");
  }
  std::vector<int> retained(static_cast<size_t>(count));
  std::iota(retained.begin(), retained.end(), 64 - count);
  return retained;
}

std::vector<int> amplitude_ranked_retained_set(const std::vector<YuvImage>& sample, int count) {
  if (count < 1 || count > 64) {
    throw std::invalid_argument("amplitude_ranked_retained_set: count " + std::to_string(count) + " outside [1, 64]");
  }
  if (sample.empty()) throw std::invalid_argument("amplitude_ranked_retained_set: empty sample");
  std::array<double, 64> amplitude{};
  int64_t blocks = 0;
  const auto& zz = ZigzagTable::instance();
  for (const YuvImage& img : sample) {
    const int64_t h = img.height(), w = img.width();
    check_plane_dims(h, w, "amplitude_ranked_retained_set");
    for (const Tensor* plane : {&img.y, &img.u, &img.v}) {
      for (int64_t bi = 0; bi < h / 8; ++bi) {
        for (int64_t bj = 0; bj < w / 8; ++bj) {
          double coeffs[64];
          fdct_kernel(plane->data.data() + (bi * 8) * w + bj * 8, w, coeffs);
          for (int k = 0; k < 64; ++k) {
            auto [r, c] = zz.position_of(k);
            amplitude[static_cast<size_t>(k)] += std::fabs(coeffs[r * 8 + c]);
          }
          ++blocks;
        }
      }
    }
  }
  (void)blocks;
  std::vector<int> order(64);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return amplitude[static_cast<size_t>(a)] < amplitude[static_cast<size_t>(b)];
  });
  std::vector<int> retained(order.begin(), order.begin() + count);
  std::sort(retained.begin(), retained.end());
  return retained;
}

namespace {
void check_retained(const std::vector<int>& retained) {
  if (retained.empty() || retained.size() > 64) {
    throw std::invalid_argument("retained set must hold between 1 and 64 zig-zag indices, got " +
                                std::to_string(retained.size()));
  }
  for (size_t i = 0; i < retained.size(); ++i) {
    if (retained[i] < 0 || retained[i] > 63) {
      throw std::invalid_argument("retained zig-zag index " + std::to_string(retained[i]) + " outside [0, 63]");
    }
    if (i > 0 && retained[i] <= retained[i - 1]) {
      throw std::invalid_argument("retained zig-zag indices must be strictly ascending");
    }
  }
}
}  // namespace

CoefficientTensor decompose(const YuvImage& planes, const std::vector<int>& retained) {
  check_retained(retained);
  const int64_t h = planes.height(), w = planes.width();
  check_plane_dims(h, w, "decompose");
  if (planes.u.shape != planes.y.shape || planes.v.shape != planes.y.shape) {
    throw std::invalid_argument("decompose: YUV planes disagree on size");
  }
  const int64_t bh = h / 8, bw = w / 8;
  const int64_t k = static_cast<int64_t>(retained.size());
  const auto& zz = ZigzagTable::instance();
  CoefficientTensor out;
  out.retained = retained;
  out.data = Tensor::zeros({3 * k, bh, bw});
  const Tensor* srcs[3] = {&planes.y, &planes.u, &planes.v};
  for (int p = 0; p < 3; ++p) {
    const double* plane = srcs[p]->data.data();
    for (int64_t bi = 0; bi < bh; ++bi) {
      for (int64_t bj = 0; bj < bw; ++bj) {
        double coeffs[64];
        fdct_kernel(plane + (bi * 8) * w + bj * 8, w, coeffs);
        for (int64_t ci = 0; ci < k; ++ci) {
          auto [r, c] = zz.position_of(retained[static_cast<size_t>(ci)]);
          out.data.data[static_cast<size_t>(((p * k + ci) * bh + bi) * bw + bj)] = coeffs[r * 8 + c];
        }
      }
    }
  }
  return out;
}

YuvImage reassemble(const CoefficientTensor& coeffs, int64_t height, int64_t width) {
  check_plane_dims(height, width, "reassemble");
  const int64_t bh = height / 8, bw = width / 8;
  const int64_t k = static_cast<int64_t>(coeffs.retained.size());
  if (coeffs.data.shape != std::vector<int64_t>{3 * k, bh, bw}) {
    throw std::invalid_argument("reassemble: coefficient tensor " + shape_to_string(coeffs.data.shape) +
                                " does not match target " + std::to_string(height) + "x" + std::to_string(width));
  }
  const auto& zz = ZigzagTable::instance();
  YuvImage out{Tensor::zeros({height, width}), Tensor::zeros({height, width}), Tensor::zeros({height, width})};
  Tensor* dsts[3] = {&out.y, &out.u, &out.v};
  for (int p = 0; p < 3; ++p) {
    double* plane = dsts[p]->data.data();
    for (int64_t bi = 0; bi < bh; ++bi) {
      for (int64_t bj = 0; bj < bw; ++bj) {
        double block[64] = {0.0};
        for (int64_t ci = 0; ci < k; ++ci) {
          auto [r, c] = zz.position_of(coeffs.retained[static_cast<size_t>(ci)]);
          block[r * 8 + c] = coeffs.data.data[static_cast<size_t>(((p * k + ci) * bh + bi) * bw + bj)];
        }
        idct_kernel(block, plane + (bi * 8) * width + bj * 8, width);
      }
    }
  }
  return out;
}

YuvImage normalized_rgb_to_planes(const Tensor& rgb_norm) {
  Tensor rgb01 = rgb_norm;
  for (double& v : rgb01.data) v = (v + 1.0) * 0.5;
  YuvImage yuv = rgb_to_yuv(rgb01);
  for (Tensor* plane : {&yuv.y, &yuv.u, &yuv.v}) {
    for (double& v : plane->data) v = v * 2.0 - 1.0;
  }
  return yuv;
}

Tensor planes_to_normalized_rgb(const YuvImage& planes) {
  YuvImage yuv01{planes.y, planes.u, planes.v};
  for (Tensor* plane : {&yuv01.y, &yuv01.u, &yuv01.v}) {
    for (double& v : plane->data) v = (v + 1.0) * 0.5;
  }
  Tensor rgb01 = yuv_to_rgb(yuv01);
  for (double& v : rgb01.data) v = v * 2.0 - 1.0;
  return rgb01;
}

Tensor decompose_batch(const Tensor& rgb_norm_batch, const std::vector<int>& retained) {
  if (rgb_norm_batch.rank() != 4 || rgb_norm_batch.shape[1] != 3) {
    throw std::invalid_argument("decompose_batch: expected [N, 3, H, W], got " +
                                shape_to_string(rgb_norm_batch.shape));
  }
  const int64_t n = rgb_norm_batch.shape[0];
  const int64_t h = rgb_norm_batch.shape[2], w = rgb_norm_batch.shape[3];
  const int64_t per = 3 * h * w;
  Tensor out;
  for (int64_t i = 0; i < n; ++i) {
    Tensor img({3, h, w}, std::vector<double>(rgb_norm_batch.data.begin() + i * per,
                                              rgb_norm_batch.data.begin() + (i + 1) * per));
    CoefficientTensor coeffs = decompose(normalized_rgb_to_planes(img), retained);
    if (i == 0) {
      std::vector<int64_t> shape = coeffs.data.shape;
      shape.insert(shape.begin(), n);
      out = Tensor::zeros(shape);
    }
    std::copy(coeffs.data.data.begin(), coeffs.data.data.end(), out.data.begin() + i * coeffs.data.numel());
  }
  return out;
}

}  // namespace splitveil
