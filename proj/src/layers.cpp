// SPDX-License-Identifier: Apache-2.0
#include "splitveil/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace splitveil {

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kConvTranspose2d: return "conv_transpose2d";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kAvgPool2d: return "avg_pool2d";
    case LayerKind::kSigmoidOutput: return "sigmoid_output";
  }
  return "?";
}

std::optional<LayerKind> layer_kind_from_name(const std::string& name) {
  for (LayerKind k : {LayerKind::kConv2d, LayerKind::kConvTranspose2d, LayerKind::kLinear, LayerKind::kRelu,
                      LayerKind::kAvgPool2d, LayerKind::kSigmoidOutput}) {
    if (layer_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

LayerSpec LayerSpec::conv2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride, int64_t padding) {
  LayerSpec s;
  s.kind = LayerKind::kConv2d;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::conv_transpose2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride, int64_t padding) {
  LayerSpec s = conv2d(in_ch, out_ch, kernel, stride, padding);
  s.kind = LayerKind::kConvTranspose2d;
  return s;
}

LayerSpec LayerSpec::linear(int64_t out_features, int64_t in_features) {
  LayerSpec s;
  s.kind = LayerKind::kLinear;
  s.out_features = out_features;
  s.in_features = in_features;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  return s;
}

LayerSpec LayerSpec::avg_pool2d(int64_t window) {
  LayerSpec s;
  s.kind = LayerKind::kAvgPool2d;
  s.pool_window = window;
  return s;
}

LayerSpec LayerSpec::sigmoid_output() {
  LayerSpec s;
  s.kind = LayerKind::kSigmoidOutput;
  return s;
}

bool LayerSpec::has_params() const {
  return kind == LayerKind::kConv2d || kind == LayerKind::kConvTranspose2d || kind == LayerKind::kLinear;
}

std::string LayerSpec::describe() const {
  switch (kind) {
    case LayerKind::kConv2d:
    case LayerKind::kConvTranspose2d:
      return layer_kind_name(kind) + "(" + std::to_string(in_channels) + "->" + std::to_string(out_channels) + ", k" +
             std::to_string(kernel) + ", s" + std::to_string(stride) + ", p" + std::to_string(padding) + ")";
    case LayerKind::kLinear:
      return "linear(->" + std::to_string(out_features) + ")";
    case LayerKind::kAvgPool2d:
      return "avg_pool2d(" + std::to_string(pool_window) + ")";
    default:
      return layer_kind_name(kind);
  }
}

namespace {

void validate_spec(const LayerSpec& spec, const std::string& name) {
  auto bad = [&](const std::string& msg) {
    throw std::invalid_argument("layer " + (name.empty() ? spec.describe() : name) + ": " + msg);
  };
  switch (spec.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kConvTranspose2d:
      if (spec.in_channels < 1 || spec.out_channels < 1) bad("channel counts must be positive");
      if (spec.kernel < 1 || spec.stride < 1 || spec.padding < 0) bad("kernel/stride/padding out of range");
      break;
    case LayerKind::kLinear:
      if (spec.out_features < 1) bad("out_features must be positive");
      break;
    case LayerKind::kAvgPool2d:
      if (spec.pool_window < 1) bad("pool window must be positive");
      break;
    default:
      break;
  }
}

}  // namespace

std::vector<int64_t> layer_output_shape(const LayerSpec& spec, const std::vector<int64_t>& in,
                                        const std::string& layer_name) {
  validate_spec(spec, layer_name);
  const std::string name = layer_name.empty() ? spec.describe() : layer_name;
  auto bad = [&](const std::string& msg) {
    throw std::invalid_argument("layer " + name + ": " + msg + " (input shape " + shape_to_string(in) + ")");
  };
  switch (spec.kind) {
    case LayerKind::kConv2d: {
      if (in.size() != 4) bad("expects [N, C, H, W]");
      if (in[1] != spec.in_channels)
        bad("expects " + std::to_string(spec.in_channels) + " channels, got " + std::to_string(in[1]));
      const int64_t ho = (in[2] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      const int64_t wo = (in[3] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      if (in[2] + 2 * spec.padding < spec.kernel || in[3] + 2 * spec.padding < spec.kernel || ho < 1 || wo < 1)
        bad("kernel does not fit");
      return {in[0], spec.out_channels, ho, wo};
    }
    case LayerKind::kConvTranspose2d: {
      if (in.size() != 4) bad("expects [N, C, H, W]");
      if (in[1] != spec.in_channels)
        bad("expects " + std::to_string(spec.in_channels) + " channels, got " + std::to_string(in[1]));
      const int64_t ho = (in[2] - 1) * spec.stride - 2 * spec.padding + spec.kernel;
      const int64_t wo = (in[3] - 1) * spec.stride - 2 * spec.padding + spec.kernel;
      if (ho < 1 || wo < 1) bad("output collapses to an empty map");
      return {in[0], spec.out_channels, ho, wo};
    }
    case LayerKind::kLinear: {
      if (in.size() < 2) bad("expects a batch axis");
      int64_t flat = 1;
      for (size_t i = 1; i < in.size(); ++i) flat *= in[i];
      if (spec.in_features > 0 && spec.in_features != flat)
        bad("expects " + std::to_string(spec.in_features) + " features, got " + std::to_string(flat));
      return {in[0], spec.out_features};
    }
    case LayerKind::kAvgPool2d: {
      if (in.size() != 4) bad("expects [N, C, H, W]");
      if (in[2] % spec.pool_window != 0 || in[3] % spec.pool_window != 0)
        bad("window " + std::to_string(spec.pool_window) + " must divide the spatial dims");
      return {in[0], in[1], in[2] / spec.pool_window, in[3] / spec.pool_window};
    }
    case LayerKind::kRelu:
    case LayerKind::kSigmoidOutput:
      return in;
  }
  bad("unknown layer kind");
  return {};
}

LayerParamShapes layer_param_shapes(const LayerSpec& spec, const std::vector<int64_t>& input_shape) {
  validate_spec(spec, "");
  switch (spec.kind) {
    case LayerKind::kConv2d:
      return {{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}, {spec.out_channels}};
    case LayerKind::kConvTranspose2d:
      return {{spec.in_channels, spec.out_channels, spec.kernel, spec.kernel}, {spec.out_channels}};
    case LayerKind::kLinear: {
      int64_t flat = spec.in_features;
      if (flat == 0) {
        if (input_shape.size() < 2)
          throw std::invalid_argument("linear layer cannot infer fan-in from shape " + shape_to_string(input_shape));
        flat = 1;
        for (size_t i = 1; i < input_shape.size(); ++i) flat *= input_shape[i];
      }
      return {{spec.out_features, flat}, {spec.out_features}};
    }
    default:
      return {{}, {}};
  }
}

LayerParams init_layer_params(const LayerSpec& spec, const std::vector<int64_t>& input_shape, Rng& rng) {
  if (!spec.has_params()) return {};
  LayerParamShapes shapes = layer_param_shapes(spec, input_shape);
  int64_t fan_in = 0;
  switch (spec.kind) {
    case LayerKind::kConv2d:
      fan_in = spec.in_channels * spec.kernel * spec.kernel;
      break;
    case LayerKind::kConvTranspose2d:
      fan_in = spec.in_channels * spec.kernel * spec.kernel;
      break;
    case LayerKind::kLinear:
      fan_in = shapes.weight[1];
      break;
    default:
      break;
  }
  const double w_bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  const double b_bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  LayerParams p;
  p.weight = Tensor::zeros(shapes.weight);
  for (double& v : p.weight.data) v = rng.uniform(-w_bound, w_bound);
  p.bias = Tensor::zeros(shapes.bias);
  for (double& v : p.bias.data) v = rng.uniform(-b_bound, b_bound);
  return p;
}

ValueId apply_layer(Graph& g, const LayerSpec& spec, ValueId x, ValueId weight, ValueId bias) {
  switch (spec.kind) {
    case LayerKind::kConv2d:
      return g.conv2d(x, weight, bias, {spec.stride, spec.padding});
    case LayerKind::kConvTranspose2d:
      return g.conv_transpose2d(x, weight, bias, {spec.stride, spec.padding});
    case LayerKind::kLinear:
      return g.linear(x, weight, bias);
    case LayerKind::kRelu:
      return g.relu(x);
    case LayerKind::kAvgPool2d:
      return g.avg_pool2d(x, spec.pool_window);
    case LayerKind::kSigmoidOutput:
      return g.sigmoid_output(x);
  }
  throw std::invalid_argument("unknown layer kind");
}

Tensor layer_forward(const LayerSpec& spec, const Tensor& input, const LayerParams& params) {
  // Elementwise kinds accept any rank; the strided kinds validate [N,...]
  // via layer_output_shape first so diagnostics name the layer.
  if (spec.kind == LayerKind::kRelu) {
    Tensor out = input;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
  }
  if (spec.kind == LayerKind::kSigmoidOutput) {
    Tensor out = input;
    for (double& v : out.data) v = 2.0 / (1.0 + std::exp(-v)) - 1.0;
    return out;
  }
  layer_output_shape(spec, input.shape);
  Graph g;
  ValueId x = g.leaf(input, false);
  ValueId w = -1, b = -1;
  if (spec.has_params()) {
    LayerParamShapes shapes = layer_param_shapes(spec, input.shape);
    if (params.weight.shape != shapes.weight) {
      throw std::invalid_argument("layer " + spec.describe() + ": weight shape " +
                                  shape_to_string(params.weight.shape) + " does not match expected " +
                                  shape_to_string(shapes.weight));
    }
    if (params.bias.shape != shapes.bias) {
      throw std::invalid_argument("layer " + spec.describe() + ": bias shape " + shape_to_string(params.bias.shape) +
                                  " does not match expected " + shape_to_string(shapes.bias));
    }
    w = g.leaf(params.weight, false);
    b = g.leaf(params.bias, false);
  }
  ValueId y = apply_layer(g, spec, x, w, b);
  return g.value(y);
}

}  // namespace splitveil
