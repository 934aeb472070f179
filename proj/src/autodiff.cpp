// SPDX-License-Identifier: Apache-2.0
#include "splitveil/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace splitveil {

namespace {

std::string op_name(int op);

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

ValueId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<ValueId>(nodes_.size() - 1);
}

void Graph::check_id(ValueId id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
    throw std::invalid_argument("graph value id " + std::to_string(id) + " is out of range");
  }
}

const Graph::Node& Graph::node(ValueId id) const {
  check_id(id);
  return nodes_[static_cast<size_t>(id)];
}

const Tensor& Graph::value(ValueId id) const { return node(id).value; }

bool Graph::requires_grad(ValueId id) const { return node(id).requires_grad; }

ValueId Graph::leaf(Tensor value, bool requires_grad, std::string label) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.label = std::move(label);
  return push(std::move(n));
}

ValueId Graph::add(ValueId a, ValueId b) {
  check_same_shape(value(a), value(b), "add");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = value(a);
  const auto& vb = value(b).data;
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += vb[i];
  return push(std::move(n));
}

ValueId Graph::sub(ValueId a, ValueId b) {
  check_same_shape(value(a), value(b), "sub");
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = value(a);
  const auto& vb = value(b).data;
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= vb[i];
  return push(std::move(n));
}

ValueId Graph::mul(ValueId a, ValueId b) {
  check_same_shape(value(a), value(b), "mul");
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = value(a);
  const auto& vb = value(b).data;
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= vb[i];
  return push(std::move(n));
}

ValueId Graph::div(ValueId a, ValueId b) {
  check_same_shape(value(a), value(b), "div");
  Node n;
  n.op = Op::kDiv;
  n.a = a;
  n.b = b;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = value(a);
  const auto& vb = value(b).data;
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] /= vb[i];
  return push(std::move(n));
}

ValueId Graph::scale(ValueId a, double factor) {
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.scalar = factor;
  n.requires_grad = requires_grad(a);
  n.value = value(a);
  for (double& v : n.value.data) v *= factor;
  return push(std::move(n));
}

ValueId Graph::add_constant(ValueId a, Tensor offset) {
  check_same_shape(value(a), offset, "add_constant");
  Node n;
  n.op = Op::kAddConst;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = value(a);
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += offset.data[i];
  n.aux = std::move(offset);
  return push(std::move(n));
}

ValueId Graph::add_rowwise(ValueId batch, ValueId row) {
  const Tensor& vb = value(batch);
  const Tensor& vr = value(row);
  require(vb.rank() >= 2, "add_rowwise: batch tensor must have a leading batch axis, got shape " +
                              shape_to_string(vb.shape));
  std::vector<int64_t> row_shape(vb.shape.begin() + 1, vb.shape.end());
  require(row_shape == vr.shape, "add_rowwise: row shape " + shape_to_string(vr.shape) +
                                     " does not match batch element shape " + shape_to_string(row_shape));
  Node n;
  n.op = Op::kAddRow;
  n.a = batch;
  n.b = row;
  n.requires_grad = requires_grad(batch) || requires_grad(row);
  n.value = vb;
  const int64_t stride = vr.numel();
  const int64_t rows = vb.shape[0];
  for (int64_t r = 0; r < rows; ++r) {
    double* out = n.value.data.data() + r * stride;
    for (int64_t i = 0; i < stride; ++i) out[i] += vr.data[static_cast<size_t>(i)];
  }
  return push(std::move(n));
}

ValueId Graph::relu(ValueId a) {
  Node n;
  n.op = Op::kRelu;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = value(a);
  for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

ValueId Graph::sigmoid_output(ValueId a) {
  Node n;
  n.op = Op::kSigmoidOut;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = value(a);
  for (double& v : n.value.data) v = 2.0 / (1.0 + std::exp(-v)) - 1.0;
  return push(std::move(n));
}

ValueId Graph::sqrt_floor(ValueId a, double floor) {
  Node n;
  n.op = Op::kSqrtFloor;
  n.a = a;
  n.scalar = floor;
  n.requires_grad = requires_grad(a);
  n.value = value(a);
  for (double& v : n.value.data) v = std::sqrt(std::max(v, floor));
  return push(std::move(n));
}

ValueId Graph::reshape(ValueId a, std::vector<int64_t> new_shape) {
  Node n;
  n.op = Op::kReshape;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = value(a).reshaped(std::move(new_shape));
  return push(std::move(n));
}

ValueId Graph::sum(ValueId a) {
  Node n;
  n.op = Op::kSum;
  n.a = a;
  n.requires_grad = requires_grad(a);
  double s = 0.0;
  for (double v : value(a).data) s += v;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

ValueId Graph::mean(ValueId a) {
  Node n;
  n.op = Op::kMean;
  n.a = a;
  n.requires_grad = requires_grad(a);
  double s = 0.0;
  for (double v : value(a).data) s += v;
  n.value = Tensor::scalar(s / static_cast<double>(value(a).numel()));
  return push(std::move(n));
}

ValueId Graph::mean_abs(ValueId a) {
  Node n;
  n.op = Op::kMeanAbs;
  n.a = a;
  n.requires_grad = requires_grad(a);
  double s = 0.0;
  for (double v : value(a).data) s += std::fabs(v);
  n.value = Tensor::scalar(s / static_cast<double>(value(a).numel()));
  return push(std::move(n));
}

ValueId Graph::gather_rows(ValueId a, std::vector<int64_t> rows) {
  const Tensor& va = value(a);
  require(va.rank() >= 1, "gather_rows: input must have at least one axis");
  const int64_t n_rows = va.shape[0];
  for (int64_t r : rows) {
    require(r >= 0 && r < n_rows,
            "gather_rows: index " + std::to_string(r) + " out of range for " + std::to_string(n_rows) + " rows");
  }
  Node n;
  n.op = Op::kGatherRows;
  n.a = a;
  n.requires_grad = requires_grad(a);
  std::vector<int64_t> out_shape = va.shape;
  out_shape[0] = static_cast<int64_t>(rows.size());
  n.value = Tensor::zeros(out_shape);
  const int64_t stride = va.numel() / n_rows;
  for (size_t i = 0; i < rows.size(); ++i) {
    const double* src = va.data.data() + rows[i] * stride;
    std::copy(src, src + stride, n.value.data.data() + static_cast<int64_t>(i) * stride);
  }
  n.indices = std::move(rows);
  return push(std::move(n));
}

ValueId Graph::pairwise_distance(ValueId a) {
  const Tensor& va = value(a);
  require(va.rank() == 2, "pairwise_distance: expected an [N, d] tensor, got " + shape_to_string(va.shape));
  const int64_t n_rows = va.shape[0];
  const int64_t dim = va.shape[1];
  Node n;
  n.op = Op::kPairwiseDist;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = Tensor::zeros({n_rows, n_rows});
  for (int64_t i = 0; i < n_rows; ++i) {
    for (int64_t j = i + 1; j < n_rows; ++j) {
      const double* xi = va.data.data() + i * dim;
      const double* xj = va.data.data() + j * dim;
      double s = 0.0;
      for (int64_t k = 0; k < dim; ++k) {
        double d = xi[k] - xj[k];
        s += d * d;
      }
      double dist = std::sqrt(s);
      n.value.data[static_cast<size_t>(i * n_rows + j)] = dist;
      n.value.data[static_cast<size_t>(j * n_rows + i)] = dist;
    }
  }
  return push(std::move(n));
}

namespace {
// y_ij = x_ij - rowmean_i - colmean_j + grandmean; self-adjoint, so the
// backward pass reuses the same kernel.
void double_center_kernel(const std::vector<double>& in, std::vector<double>& out, int64_t n) {
  std::vector<double> row_mean(static_cast<size_t>(n), 0.0), col_mean(static_cast<size_t>(n), 0.0);
  double grand = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double v = in[static_cast<size_t>(i * n + j)];
      row_mean[static_cast<size_t>(i)] += v;
      col_mean[static_cast<size_t>(j)] += v;
      grand += v;
    }
  }
  for (int64_t i = 0; i < n; ++i) row_mean[static_cast<size_t>(i)] /= static_cast<double>(n);
  for (int64_t j = 0; j < n; ++j) col_mean[static_cast<size_t>(j)] /= static_cast<double>(n);
  grand /= static_cast<double>(n * n);
  out.resize(static_cast<size_t>(n * n));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      out[static_cast<size_t>(i * n + j)] = in[static_cast<size_t>(i * n + j)] - row_mean[static_cast<size_t>(i)] -
                                            col_mean[static_cast<size_t>(j)] + grand;
    }
  }
}
}  // namespace

ValueId Graph::double_center(ValueId a) {
  const Tensor& va = value(a);
  require(va.rank() == 2 && va.shape[0] == va.shape[1],
          "double_center: expected a square matrix, got " + shape_to_string(va.shape));
  Node n;
  n.op = Op::kDoubleCenter;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = Tensor::zeros(va.shape);
  double_center_kernel(va.data, n.value.data, va.shape[0]);
  return push(std::move(n));
}

ValueId Graph::conv2d(ValueId x, ValueId w, ValueId b, ConvAttrs attrs) {
  const Tensor& vx = value(x);
  const Tensor& vw = value(w);
  const Tensor& vb = value(b);
  require(vx.rank() == 4, "conv2d: input must be [N, C, H, W], got " + shape_to_string(vx.shape));
  require(vw.rank() == 4, "conv2d: weight must be [F, C, kh, kw], got " + shape_to_string(vw.shape));
  require(vw.shape[1] == vx.shape[1], "conv2d: weight expects " + std::to_string(vw.shape[1]) +
                                          " input channels but input has " + std::to_string(vx.shape[1]) +
                                          " (input " + shape_to_string(vx.shape) + ", weight " +
                                          shape_to_string(vw.shape) + ")");
  require(vb.rank() == 1 && vb.shape[0] == vw.shape[0],
          "conv2d: bias shape " + shape_to_string(vb.shape) + " does not match filter count " +
              std::to_string(vw.shape[0]));
  require(attrs.stride >= 1 && attrs.padding >= 0, "conv2d: stride must be >= 1 and padding >= 0");
  const int64_t N = vx.shape[0], C = vx.shape[1], H = vx.shape[2], W = vx.shape[3];
  const int64_t F = vw.shape[0], kh = vw.shape[2], kw = vw.shape[3];
  const int64_t Ho = (H + 2 * attrs.padding - kh) / attrs.stride + 1;
  const int64_t Wo = (W + 2 * attrs.padding - kw) / attrs.stride + 1;
  require(H + 2 * attrs.padding >= kh && W + 2 * attrs.padding >= kw && Ho >= 1 && Wo >= 1,
          "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " does not fit input " +
              shape_to_string(vx.shape) + " with padding " + std::to_string(attrs.padding));

  Node n;
  n.op = Op::kConv2d;
  n.a = x;
  n.b = w;
  n.c = b;
  n.conv = attrs;
  n.requires_grad = requires_grad(x) || requires_grad(w) || requires_grad(b);
  n.value = Tensor::zeros({N, F, Ho, Wo});
  const double* px = vx.data.data();
  const double* pw = vw.data.data();
  double* po = n.value.data.data();
  for (int64_t nn = 0; nn < N; ++nn) {
    for (int64_t f = 0; f < F; ++f) {
      const double bias = vb.data[static_cast<size_t>(f)];
      for (int64_t oi = 0; oi < Ho; ++oi) {
        for (int64_t oj = 0; oj < Wo; ++oj) {
          double acc = bias;
          const int64_t i0 = oi * attrs.stride - attrs.padding;
          const int64_t j0 = oj * attrs.stride - attrs.padding;
          for (int64_t c = 0; c < C; ++c) {
            const double* xc = px + ((nn * C + c) * H) * W;
            const double* wc = pw + ((f * C + c) * kh) * kw;
            for (int64_t ki = 0; ki < kh; ++ki) {
              const int64_t ii = i0 + ki;
              if (ii < 0 || ii >= H) continue;
              for (int64_t kj = 0; kj < kw; ++kj) {
                const int64_t jj = j0 + kj;
                if (jj < 0 || jj >= W) continue;
                acc += xc[ii * W + jj] * wc[ki * kw + kj];
              }
            }
          }
          po[((nn * F + f) * Ho + oi) * Wo + oj] = acc;
        }
      }
    }
  }
  return push(std::move(n));
}

ValueId Graph::conv_transpose2d(ValueId x, ValueId w, ValueId b, ConvAttrs attrs) {
  const Tensor& vx = value(x);
  const Tensor& vw = value(w);
  const Tensor& vb = value(b);
  require(vx.rank() == 4, "conv_transpose2d: input must be [N, C, H, W], got " + shape_to_string(vx.shape));
  require(vw.rank() == 4, "conv_transpose2d: weight must be [C, F, kh, kw], got " + shape_to_string(vw.shape));
  require(vw.shape[0] == vx.shape[1], "conv_transpose2d: weight expects " + std::to_string(vw.shape[0]) +
                                          " input channels but input has " + std::to_string(vx.shape[1]) +
                                          " (input " + shape_to_string(vx.shape) + ", weight " +
                                          shape_to_string(vw.shape) + ")");
  require(vb.rank() == 1 && vb.shape[0] == vw.shape[1],
          "conv_transpose2d: bias shape " + shape_to_string(vb.shape) + " does not match filter count " +
              std::to_string(vw.shape[1]));
  require(attrs.stride >= 1 && attrs.padding >= 0, "conv_transpose2d: stride must be >= 1 and padding >= 0");
  const int64_t N = vx.shape[0], C = vx.shape[1], H = vx.shape[2], W = vx.shape[3];
  const int64_t F = vw.shape[1], kh = vw.shape[2], kw = vw.shape[3];
  const int64_t Ho = (H - 1) * attrs.stride - 2 * attrs.padding + kh;
  const int64_t Wo = (W - 1) * attrs.stride - 2 * attrs.padding + kw;
  require(Ho >= 1 && Wo >= 1, "conv_transpose2d: output collapses to an empty map for input " +
                                  shape_to_string(vx.shape) + " with kernel " + std::to_string(kh) + "x" +
                                  std::to_string(kw) + ", stride " + std::to_string(attrs.stride) + ", padding " +
                                  std::to_string(attrs.padding));

  Node n;
  n.op = Op::kConvTranspose2d;
  n.a = x;
  n.b = w;
  n.c = b;
  n.conv = attrs;
  n.requires_grad = requires_grad(x) || requires_grad(w) || requires_grad(b);
  n.value = Tensor::zeros({N, F, Ho, Wo});
  double* po = n.value.data.data();
  for (int64_t nn = 0; nn < N; ++nn) {
    for (int64_t f = 0; f < F; ++f) {
      const double bias = vb.data[static_cast<size_t>(f)];
      double* oc = po + ((nn * F + f) * Ho) * Wo;
      for (int64_t i = 0; i < Ho * Wo; ++i) oc[i] = bias;
    }
  }
  const double* px = vx.data.data();
  const double* pw = vw.data.data();
  for (int64_t nn = 0; nn < N; ++nn) {
    for (int64_t c = 0; c < C; ++c) {
      const double* xc = px + ((nn * C + c) * H) * W;
      for (int64_t i = 0; i < H; ++i) {
        for (int64_t j = 0; j < W; ++j) {
          const double xv = xc[i * W + j];
          const int64_t o0 = i * attrs.stride - attrs.padding;
          const int64_t p0 = j * attrs.stride - attrs.padding;
          for (int64_t f = 0; f < F; ++f) {
            double* oc = po + ((nn * F + f) * Ho) * Wo;
            const double* wc = pw + ((c * F + f) * kh) * kw;
            for (int64_t ki = 0; ki < kh; ++ki) {
              const int64_t oi = o0 + ki;
              if (oi < 0 || oi >= Ho) continue;
              for (int64_t kj = 0; kj < kw; ++kj) {
                const int64_t oj = p0 + kj;
                if (oj < 0 || oj >= Wo) continue;
                oc[oi * Wo + oj] += xv * wc[ki * kw + kj];
              }
            }
          }
        }
      }
    }
  }
  return push(std::move(n));
}

ValueId Graph::linear(ValueId x, ValueId w, ValueId b) {
  const Tensor& vx = value(x);
  const Tensor& vw = value(w);
  const Tensor& vb = value(b);
  require(vx.rank() >= 2, "linear: input must have a batch axis, got " + shape_to_string(vx.shape));
  require(vw.rank() == 2, "linear: weight must be [out, in], got " + shape_to_string(vw.shape));
  const int64_t N = vx.shape[0];
  const int64_t din = vx.numel() / N;
  const int64_t dout = vw.shape[0];
  require(vw.shape[1] == din, "linear: weight expects " + std::to_string(vw.shape[1]) +
                                  " input features but input " + shape_to_string(vx.shape) + " flattens to " +
                                  std::to_string(din));
  require(vb.rank() == 1 && vb.shape[0] == dout,
          "linear: bias shape " + shape_to_string(vb.shape) + " does not match " + std::to_string(dout) +
              " output features");
  Node n;
  n.op = Op::kLinear;
  n.a = x;
  n.b = w;
  n.c = b;
  n.requires_grad = requires_grad(x) || requires_grad(w) || requires_grad(b);
  n.value = Tensor::zeros({N, dout});
  const double* px = vx.data.data();
  const double* pw = vw.data.data();
  double* po = n.value.data.data();
  for (int64_t nn = 0; nn < N; ++nn) {
    const double* xr = px + nn * din;
    for (int64_t o = 0; o < dout; ++o) {
      const double* wr = pw + o * din;
      double acc = vb.data[static_cast<size_t>(o)];
      for (int64_t k = 0; k < din; ++k) acc += xr[k] * wr[k];
      po[nn * dout + o] = acc;
    }
  }
  return push(std::move(n));
}

ValueId Graph::avg_pool2d(ValueId x, int64_t window) {
  const Tensor& vx = value(x);
  require(vx.rank() == 4, "avg_pool2d: input must be [N, C, H, W], got " + shape_to_string(vx.shape));
  require(window >= 1, "avg_pool2d: window must be >= 1");
  const int64_t N = vx.shape[0], C = vx.shape[1], H = vx.shape[2], W = vx.shape[3];
  require(H % window == 0 && W % window == 0, "avg_pool2d: window " + std::to_string(window) +
                                                  " must divide the spatial dims of " + shape_to_string(vx.shape));
  const int64_t Ho = H / window, Wo = W / window;
  Node n;
  n.op = Op::kAvgPool2d;
  n.a = x;
  n.window = window;
  n.requires_grad = requires_grad(x);
  n.value = Tensor::zeros({N, C, Ho, Wo});
  const double inv = 1.0 / static_cast<double>(window * window);
  const double* px = vx.data.data();
  double* po = n.value.data.data();
  for (int64_t nn = 0; nn < N; ++nn) {
    for (int64_t c = 0; c < C; ++c) {
      const double* xc = px + ((nn * C + c) * H) * W;
      double* oc = po + ((nn * C + c) * Ho) * Wo;
      for (int64_t oi = 0; oi < Ho; ++oi) {
        for (int64_t oj = 0; oj < Wo; ++oj) {
          double acc = 0.0;
          for (int64_t ki = 0; ki < window; ++ki) {
            for (int64_t kj = 0; kj < window; ++kj) acc += xc[(oi * window + ki) * W + oj * window + kj];
          }
          oc[oi * Wo + oj] = acc * inv;
        }
      }
    }
  }
  return push(std::move(n));
}

ValueId Graph::softmax_cross_entropy(ValueId logits, std::vector<int64_t> labels) {
  const Tensor& vl = value(logits);
  require(vl.rank() == 2, "softmax_cross_entropy: logits must be [N, K], got " + shape_to_string(vl.shape));
  const int64_t N = vl.shape[0], K = vl.shape[1];
  require(K >= 2, "softmax_cross_entropy: need at least 2 classes, got " + std::to_string(K));
  require(static_cast<int64_t>(labels.size()) == N,
          "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(N));
  for (int64_t y : labels) {
    require(y >= 0 && y < K,
            "softmax_cross_entropy: label " + std::to_string(y) + " outside class range [0, " + std::to_string(K) + ")");
  }
  Node n;
  n.op = Op::kSoftmaxCE;
  n.a = logits;
  n.requires_grad = requires_grad(logits);
  n.aux = Tensor::zeros({N, K});  // softmax probabilities, reused by backward
  double loss = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    const double* row = vl.data.data() + i * K;
    double* prow = n.aux.data.data() + i * K;
    double mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const double log_z = std::log(z);
    for (int64_t k = 0; k < K; ++k) prow[k] = std::exp(row[k] - mx) / z;
    loss += -(row[labels[static_cast<size_t>(i)]] - mx - log_z);
  }
  n.value = Tensor::scalar(loss / static_cast<double>(N));
  n.indices = std::move(labels);
  return push(std::move(n));
}

ValueId Graph::mse_to_const(ValueId a, Tensor target) {
  check_same_shape(value(a), target, "mse_to_const");
  Node n;
  n.op = Op::kMseToConst;
  n.a = a;
  n.requires_grad = requires_grad(a);
  double s = 0.0;
  const auto& va = value(a).data;
  for (size_t i = 0; i < va.size(); ++i) {
    double d = va[i] - target.data[i];
    s += d * d;
  }
  n.value = Tensor::scalar(s / static_cast<double>(va.size()));
  n.aux = std::move(target);
  return push(std::move(n));
}

void Graph::accumulate(Tensor& slot, const std::vector<int64_t>& shape, const std::vector<double>& contrib) {
  if (slot.numel() == 0) slot = Tensor::zeros(shape);
  for (size_t i = 0; i < contrib.size(); ++i) slot.data[i] += contrib[i];
}

void Graph::propagate(const Node& n, const Tensor& gout, std::vector<Tensor>& grads) const {
  auto grad_slot = [&grads, this](ValueId id) -> Tensor& {
    Tensor& slot = grads[static_cast<size_t>(id)];
    if (slot.numel() == 0) slot = Tensor::zeros(nodes_[static_cast<size_t>(id)].value.shape);
    return slot;
  };
  auto wants = [this](ValueId id) { return id >= 0 && nodes_[static_cast<size_t>(id)].requires_grad; };

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kAdd: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        for (size_t i = 0; i < gout.data.size(); ++i) g.data[i] += gout.data[i];
      }
      if (wants(n.b)) {
        Tensor& g = grad_slot(n.b);
        for (size_t i = 0; i < gout.data.size(); ++i) g.data[i] += gout.data[i];
      }
      break;
    }
    case Op::kSub: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        for (size_t i = 0; i < gout.data.size(); ++i) g.data[i] += gout.data[i];
      }
      if (wants(n.b)) {
        Tensor& g = grad_slot(n.b);
        for (size_t i = 0; i < gout.data.size(); ++i) g.data[i] -= gout.data[i];
      }
      break;
    }
    case Op::kMul: {
      const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
      const Tensor& vb = nodes_[static_cast<size_t>(n.b)].value;
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        for (size_t i = 0; i < gout.data.size(); ++i) g.data[i] += gout.data[i] * vb.data[i];
      }
      if (wants(n.b)) {
        Tensor& g = grad_slot(n.b);
        for (size_t i = 0; i < gout.data.size(); ++i) g.data[i] += gout.data[i] * va.data[i];
      }
      break;
    }
    case Op::kDiv: {
      const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
      const Tensor& vb = nodes_[static_cast<size_t>(n.b)].value;
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        for (size_t i = 0; i < gout.data.size(); ++i) g.data[i] += gout.data[i] / vb.data[i];
      }
      if (wants(n.b)) {
        Tensor& g = grad_slot(n.b);
        for (size_t i = 0; i < gout.data.size(); ++i)
          g.data[i] -= gout.data[i] * va.data[i] / (vb.data[i] * vb.data[i]);
      }
      break;
    }
    case Op::kScale: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        for (size_t i = 0; i < gout.data.size(); ++i) g.data[i] += gout.data[i] * n.scalar;
      }
      break;
    }
    case Op::kAddConst:
    case Op::kReshape: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        for (size_t i = 0; i < gout.data.size(); ++i) g.data[i] += gout.data[i];
      }
      break;
    }
    case Op::kAddRow: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        for (size_t i = 0; i < gout.data.size(); ++i) g.data[i] += gout.data[i];
      }
      if (wants(n.b)) {
        Tensor& g = grad_slot(n.b);
        const int64_t stride = g.numel();
        const int64_t rows = gout.numel() / stride;
        for (int64_t r = 0; r < rows; ++r) {
          const double* src = gout.data.data() + r * stride;
          for (int64_t i = 0; i < stride; ++i) g.data[static_cast<size_t>(i)] += src[i];
        }
      }
      break;
    }
    case Op::kRelu: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        for (size_t i = 0; i < gout.data.size(); ++i) g.data[i] += n.value.data[i] > 0.0 ? gout.data[i] : 0.0;
      }
      break;
    }
    case Op::kSigmoidOut: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        for (size_t i = 0; i < gout.data.size(); ++i) {
          const double y = n.value.data[i];
          g.data[i] += gout.data[i] * (1.0 - y * y) * 0.5;
        }
      }
      break;
    }
    case Op::kSqrtFloor: {
      if (wants(n.a)) {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        Tensor& g = grad_slot(n.a);
        for (size_t i = 0; i < gout.data.size(); ++i) {
          if (va.data[i] > n.scalar) g.data[i] += gout.data[i] * 0.5 / n.value.data[i];
        }
      }
      break;
    }
    case Op::kSum: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        const double gv = gout.data[0];
        for (double& v : g.data) v += gv;
      }
      break;
    }
    case Op::kMean: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        const double gv = gout.data[0] / static_cast<double>(g.numel());
        for (double& v : g.data) v += gv;
      }
      break;
    }
    case Op::kMeanAbs: {
      if (wants(n.a)) {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        Tensor& g = grad_slot(n.a);
        const double gv = gout.data[0] / static_cast<double>(g.numel());
        for (size_t i = 0; i < g.data.size(); ++i) {
          if (va.data[i] > 0.0) g.data[i] += gv;
          else if (va.data[i] < 0.0) g.data[i] -= gv;
        }
      }
      break;
    }
    case Op::kGatherRows: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        const int64_t stride = g.numel() / g.shape[0];
        for (size_t r = 0; r < n.indices.size(); ++r) {
          const double* src = gout.data.data() + static_cast<int64_t>(r) * stride;
          double* dst = g.data.data() + n.indices[r] * stride;
          for (int64_t i = 0; i < stride; ++i) dst[i] += src[i];
        }
      }
      break;
    }
    case Op::kPairwiseDist: {
      if (wants(n.a)) {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        Tensor& g = grad_slot(n.a);
        const int64_t rows = va.shape[0], dim = va.shape[1];
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t j = 0; j < rows; ++j) {
            if (i == j) continue;
            const double dist = n.value.data[static_cast<size_t>(i * rows + j)];
            if (dist <= 1e-300) continue;
            const double gd = gout.data[static_cast<size_t>(i * rows + j)] / dist;
            if (gd == 0.0) continue;
            const double* xi = va.data.data() + i * dim;
            const double* xj = va.data.data() + j * dim;
            double* gi = g.data.data() + i * dim;
            double* gj = g.data.data() + j * dim;
            for (int64_t k = 0; k < dim; ++k) {
              const double diff = (xi[k] - xj[k]) * gd;
              gi[k] += diff;
              gj[k] -= diff;
            }
          }
        }
      }
      break;
    }
    case Op::kDoubleCenter: {
      if (wants(n.a)) {
        std::vector<double> tmp;
        double_center_kernel(gout.data, tmp, n.value.shape[0]);
        Tensor& g = grad_slot(n.a);
        for (size_t i = 0; i < tmp.size(); ++i) g.data[i] += tmp[i];
      }
      break;
    }
    case Op::kConv2d: {
      const Tensor& vx = nodes_[static_cast<size_t>(n.a)].value;
      const Tensor& vw = nodes_[static_cast<size_t>(n.b)].value;
      const int64_t N = vx.shape[0], C = vx.shape[1], H = vx.shape[2], W = vx.shape[3];
      const int64_t F = vw.shape[0], kh = vw.shape[2], kw = vw.shape[3];
      const int64_t Ho = n.value.shape[2], Wo = n.value.shape[3];
      const bool gx_wanted = wants(n.a), gw_wanted = wants(n.b), gb_wanted = wants(n.c);
      double* gx = gx_wanted ? grad_slot(n.a).data.data() : nullptr;
      double* gw = gw_wanted ? grad_slot(n.b).data.data() : nullptr;
      double* gb = gb_wanted ? grad_slot(n.c).data.data() : nullptr;
      const double* px = vx.data.data();
      const double* pw = vw.data.data();
      for (int64_t nn = 0; nn < N; ++nn) {
        for (int64_t f = 0; f < F; ++f) {
          for (int64_t oi = 0; oi < Ho; ++oi) {
            for (int64_t oj = 0; oj < Wo; ++oj) {
              const double go = gout.data[static_cast<size_t>(((nn * F + f) * Ho + oi) * Wo + oj)];
              if (go == 0.0) continue;
              if (gb) gb[f] += go;
              const int64_t i0 = oi * n.conv.stride - n.conv.padding;
              const int64_t j0 = oj * n.conv.stride - n.conv.padding;
              for (int64_t c = 0; c < C; ++c) {
                const double* xc = px + ((nn * C + c) * H) * W;
                const double* wc = pw + ((f * C + c) * kh) * kw;
                double* gxc = gx ? gx + ((nn * C + c) * H) * W : nullptr;
                double* gwc = gw ? gw + ((f * C + c) * kh) * kw : nullptr;
                for (int64_t ki = 0; ki < kh; ++ki) {
                  const int64_t ii = i0 + ki;
                  if (ii < 0 || ii >= H) continue;
                  for (int64_t kj = 0; kj < kw; ++kj) {
                    const int64_t jj = j0 + kj;
                    if (jj < 0 || jj >= W) continue;
                    if (gxc) gxc[ii * W + jj] += go * wc[ki * kw + kj];
                    if (gwc) gwc[ki * kw + kj] += go * xc[ii * W + jj];
                  }
                }
              }
            }
          }
        }
      }
      break;
    }
    case Op::kConvTranspose2d: {
      const Tensor& vx = nodes_[static_cast<size_t>(n.a)].value;
      const Tensor& vw = nodes_[static_cast<size_t>(n.b)].value;
      const int64_t N = vx.shape[0], C = vx.shape[1], H = vx.shape[2], W = vx.shape[3];
      const int64_t F = vw.shape[1], kh = vw.shape[2], kw = vw.shape[3];
      const int64_t Ho = n.value.shape[2], Wo = n.value.shape[3];
      const bool gx_wanted = wants(n.a), gw_wanted = wants(n.b), gb_wanted = wants(n.c);
      double* gx = gx_wanted ? grad_slot(n.a).data.data() : nullptr;
      double* gw = gw_wanted ? grad_slot(n.b).data.data() : nullptr;
      double* gb = gb_wanted ? grad_slot(n.c).data.data() : nullptr;
      if (gb) {
        for (int64_t nn = 0; nn < N; ++nn) {
          for (int64_t f = 0; f < F; ++f) {
            const double* go = gout.data.data() + ((nn * F + f) * Ho) * Wo;
            for (int64_t i = 0; i < Ho * Wo; ++i) gb[f] += go[i];
          }
        }
      }
      const double* px = vx.data.data();
      const double* pw = vw.data.data();
      for (int64_t nn = 0; nn < N; ++nn) {
        for (int64_t c = 0; c < C; ++c) {
          const double* xc = px + ((nn * C + c) * H) * W;
          double* gxc = gx ? gx + ((nn * C + c) * H) * W : nullptr;
          for (int64_t i = 0; i < H; ++i) {
            for (int64_t j = 0; j < W; ++j) {
              const int64_t o0 = i * n.conv.stride - n.conv.padding;
              const int64_t p0 = j * n.conv.stride - n.conv.padding;
              for (int64_t f = 0; f < F; ++f) {
                const double* go = gout.data.data() + ((nn * F + f) * Ho) * Wo;
                const double* wc = pw + ((c * F + f) * kh) * kw;
                double* gwc = gw ? gw + ((c * F + f) * kh) * kw : nullptr;
                for (int64_t ki = 0; ki < kh; ++ki) {
                  const int64_t oi = o0 + ki;
                  if (oi < 0 || oi >= Ho) continue;
                  for (int64_t kj = 0; kj < kw; ++kj) {
                    const int64_t oj = p0 + kj;
                    if (oj < 0 || oj >= Wo) continue;
                    const double gov = go[oi * Wo + oj];
                    if (gxc) gxc[i * W + j] += gov * wc[ki * kw + kj];
                    if (gwc) gwc[ki * kw + kj] += gov * xc[i * W + j];
                  }
                }
              }
            }
          }
        }
      }
      break;
    }
    case Op::kLinear: {
      const Tensor& vx = nodes_[static_cast<size_t>(n.a)].value;
      const Tensor& vw = nodes_[static_cast<size_t>(n.b)].value;
      const int64_t N = vx.shape[0];
      const int64_t din = vx.numel() / N;
      const int64_t dout = vw.shape[0];
      const bool gx_wanted = wants(n.a), gw_wanted = wants(n.b), gb_wanted = wants(n.c);
      double* gx = gx_wanted ? grad_slot(n.a).data.data() : nullptr;
      double* gw = gw_wanted ? grad_slot(n.b).data.data() : nullptr;
      double* gb = gb_wanted ? grad_slot(n.c).data.data() : nullptr;
      const double* px = vx.data.data();
      const double* pw = vw.data.data();
      for (int64_t nn = 0; nn < N; ++nn) {
        const double* go = gout.data.data() + nn * dout;
        const double* xr = px + nn * din;
        double* gxr = gx ? gx + nn * din : nullptr;
        for (int64_t o = 0; o < dout; ++o) {
          const double gov = go[o];
          if (gov == 0.0) continue;
          if (gb) gb[o] += gov;
          const double* wr = pw + o * din;
          double* gwr = gw ? gw + o * din : nullptr;
          for (int64_t k = 0; k < din; ++k) {
            if (gxr) gxr[k] += gov * wr[k];
            if (gwr) gwr[k] += gov * xr[k];
          }
        }
      }
      break;
    }
    case Op::kAvgPool2d: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        const int64_t N = g.shape[0], C = g.shape[1], H = g.shape[2], W = g.shape[3];
        const int64_t k = n.window;
        const int64_t Ho = H / k, Wo = W / k;
        const double inv = 1.0 / static_cast<double>(k * k);
        for (int64_t nn = 0; nn < N; ++nn) {
          for (int64_t c = 0; c < C; ++c) {
            const double* go = gout.data.data() + ((nn * C + c) * Ho) * Wo;
            double* gc = g.data.data() + ((nn * C + c) * H) * W;
            for (int64_t oi = 0; oi < Ho; ++oi) {
              for (int64_t oj = 0; oj < Wo; ++oj) {
                const double gv = go[oi * Wo + oj] * inv;
                for (int64_t ki = 0; ki < k; ++ki) {
                  for (int64_t kj = 0; kj < k; ++kj) gc[(oi * k + ki) * W + oj * k + kj] += gv;
                }
              }
            }
          }
        }
      }
      break;
    }
    case Op::kSoftmaxCE: {
      if (wants(n.a)) {
        Tensor& g = grad_slot(n.a);
        const int64_t N = g.shape[0], K = g.shape[1];
        const double gv = gout.data[0] / static_cast<double>(N);
        for (int64_t i = 0; i < N; ++i) {
          const double* prow = n.aux.data.data() + i * K;
          double* grow = g.data.data() + i * K;
          const int64_t y = n.indices[static_cast<size_t>(i)];
          for (int64_t k = 0; k < K; ++k) grow[k] += gv * (prow[k] - (k == y ? 1.0 : 0.0));
        }
      }
      break;
    }
    case Op::kMseToConst: {
      if (wants(n.a)) {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        Tensor& g = grad_slot(n.a);
        const double gv = 2.0 * gout.data[0] / static_cast<double>(va.numel());
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += gv * (va.data[i] - n.aux.data[i]);
      }
      break;
    }
  }
}

void Graph::reverse_from(ValueId root, const Tensor& seed, std::vector<Tensor>& grads) const {
  grads.assign(nodes_.size(), Tensor{});
  grads[static_cast<size_t>(root)] = seed;
  for (ValueId id = root; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || n.op == Op::kLeaf) continue;
    const Tensor& gout = grads[static_cast<size_t>(id)];
    if (gout.numel() == 0) continue;
    propagate(n, gout, grads);
  }
}

void Graph::backward(ValueId loss) {
  const Node& root = node(loss);
  if (root.value.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_to_string(root.value.shape));
  }
  if (!std::isfinite(root.value.data[0])) {
    throw std::runtime_error("backward: loss is non-finite at node '" +
                             (root.label.empty() ? op_name(static_cast<int>(root.op)) : root.label) + "'");
  }
  reverse_from(loss, Tensor::scalar(1.0), grads_);
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (grads_[i].numel() == 0) continue;
    if (!grads_[i].all_finite()) {
      const Node& n = nodes_[i];
      throw std::runtime_error("backward: non-finite gradient at node '" +
                               (n.label.empty() ? op_name(static_cast<int>(n.op)) : n.label) + "' (id " +
                               std::to_string(i) + ")");
    }
  }
}

bool Graph::has_grad(ValueId id) const {
  check_id(id);
  return static_cast<size_t>(id) < grads_.size() && grads_[static_cast<size_t>(id)].numel() > 0;
}

const Tensor& Graph::grad(ValueId id) const {
  check_id(id);
  if (!has_grad(id)) {
    throw std::logic_error("no gradient recorded for value " + std::to_string(id) +
                           "; call backward() on a loss that reaches it first");
  }
  return grads_[static_cast<size_t>(id)];
}

std::vector<Tensor> Graph::gradients(ValueId root, const std::vector<ValueId>& wrt) const {
  const Node& r = node(root);
  if (r.value.numel() != 1) {
    throw std::invalid_argument("gradients: root must be a scalar, got shape " + shape_to_string(r.value.shape));
  }
  std::vector<Tensor> grads;
  reverse_from(root, Tensor::scalar(1.0), grads);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (ValueId id : wrt) {
    check_id(id);
    Tensor& g = grads[static_cast<size_t>(id)];
    out.push_back(g.numel() == 0 ? Tensor::zeros(node(id).value.shape) : std::move(g));
  }
  return out;
}

Tensor Graph::vjp(ValueId output, const Tensor& seed, ValueId wrt) const {
  const Node& out = node(output);
  check_same_shape(out.value, seed, "vjp seed");
  check_id(wrt);
  std::vector<Tensor> grads;
  reverse_from(output, seed, grads);
  Tensor& g = grads[static_cast<size_t>(wrt)];
  if (g.numel() == 0) return Tensor::zeros(node(wrt).value.shape);
  return std::move(g);
}

namespace {
std::string op_name(int op) {
  static const char* names[] = {
      "leaf",         "add",        "sub",          "mul",          "div",        "scale",
      "add_constant", "add_rowwise", "relu",         "sigmoid_output", "sqrt",     "reshape",
      "sum",          "mean",       "mean_abs",     "gather_rows",  "pairwise_distance",
      "double_center", "conv2d",    "conv_transpose2d", "linear",   "avg_pool2d",
      "softmax_cross_entropy", "mse"};
  if (op < 0 || op >= static_cast<int>(sizeof(names) / sizeof(names[0]))) return "?";
  return names[op];
}
}  // namespace

}  // namespace splitveil
