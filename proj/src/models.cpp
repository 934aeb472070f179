// SPDX-License-Identifier: Apache-2.0
#include "splitveil/models.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "splitveil/rng.hpp"

namespace splitveil {

uint64_t params_fingerprint(const ModelParams& params) {
  uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* ptr, size_t len) {
    const uint8_t* p = static_cast<const uint8_t*>(ptr);
    for (size_t i = 0; i < len; ++i) h = (h ^ p[i]) * 1099511628211ULL;
  };
  for (const auto& [name, tensor] : params.tensors) {
    feed(name.data(), name.size());
    feed(tensor.shape.data(), tensor.shape.size() * sizeof(int64_t));
    feed(tensor.data.data(), tensor.data.size() * sizeof(double));
  }
  return h;
}

SequentialModel::SequentialModel(std::vector<LayerSpec> layers, std::vector<std::string> names, ModelParams params)
    : layers_(std::move(layers)), names_(std::move(names)), params_(std::move(params)) {
  if (layers_.size() != names_.size()) throw std::invalid_argument("sequential model: one name per layer required");
}

std::vector<int64_t> SequentialModel::output_shape(const std::vector<int64_t>& input_shape) const {
  std::vector<int64_t> shape = input_shape;
  for (size_t i = 0; i < layers_.size(); ++i) shape = layer_output_shape(layers_[i], shape, names_[i]);
  return shape;
}

Tensor SequentialModel::forward(const Tensor& input) const {
  Graph g;
  ValueId x = g.leaf(input, false);
  ValueId y = forward_graph(g, x, false, nullptr);
  return g.value(y);
}

ValueId SequentialModel::forward_graph(Graph& g, ValueId x, bool train_params,
                                       std::vector<std::pair<std::string, ValueId>>* param_ids) const {
  ValueId cur = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& spec = layers_[i];
    layer_output_shape(spec, g.value(cur).shape, names_[i]);
    ValueId w = -1, b = -1;
    if (spec.has_params()) {
      const std::string wname = names_[i] + ".weight";
      const std::string bname = names_[i] + ".bias";
      auto wit = params_.tensors.find(wname);
      auto bit = params_.tensors.find(bname);
      if (wit == params_.tensors.end() || bit == params_.tensors.end()) {
        throw std::logic_error("missing parameters for " + names_[i]);
      }
      w = g.leaf(wit->second, train_params, wname);
      b = g.leaf(bit->second, train_params, bname);
      if (train_params && param_ids) {
        param_ids->emplace_back(wname, w);
        param_ids->emplace_back(bname, b);
      }
    }
    cur = apply_layer(g, spec, cur, w, b);
  }
  return cur;
}

SplitModel build_split_model(const SplitModelSpec& spec, uint64_t seed) {
  const int64_t n_layers = static_cast<int64_t>(spec.layers.size());
  if (n_layers < 2) throw std::invalid_argument("split model needs at least two layers");
  if (spec.split_point < 1 || spec.split_point >= n_layers) {
    throw std::invalid_argument("split point " + std::to_string(spec.split_point) + " outside [1, " +
                                std::to_string(n_layers - 1) + "]");
  }
  if (spec.input_shape.empty()) throw std::invalid_argument("split model spec is missing its input shape");

  // Walk the full chain once: validates every interface, including the
  // bottom-output/top-input seam, and collects per-layer input shapes for
  // initialization.
  std::vector<int64_t> shape = spec.input_shape;
  shape.insert(shape.begin(), 1);
  std::vector<std::vector<int64_t>> in_shapes;
  for (int64_t i = 0; i < n_layers; ++i) {
    in_shapes.push_back(shape);
    shape = layer_output_shape(spec.layers[static_cast<size_t>(i)], shape, "layer" + std::to_string(i));
  }

  std::vector<LayerSpec> bottom_layers, top_layers;
  std::vector<std::string> bottom_names, top_names;
  ModelParams bottom_params, top_params;
  for (int64_t i = 0; i < n_layers; ++i) {
    const LayerSpec& layer = spec.layers[static_cast<size_t>(i)];
    const std::string name = "layer" + std::to_string(i);
    Rng rng(derive_seed(seed, "init.layer", static_cast<uint64_t>(i)));
    LayerParams p = init_layer_params(layer, in_shapes[static_cast<size_t>(i)], rng);
    const bool in_bottom = i < spec.split_point;
    if (in_bottom) {
      bottom_layers.push_back(layer);
      bottom_names.push_back(name);
      if (layer.has_params()) {
        bottom_params.tensors[name + ".weight"] = std::move(p.weight);
        bottom_params.tensors[name + ".bias"] = std::move(p.bias);
      }
    } else {
      top_layers.push_back(layer);
      top_names.push_back(name);
      if (layer.has_params()) {
        top_params.tensors[name + ".weight"] = std::move(p.weight);
        top_params.tensors[name + ".bias"] = std::move(p.bias);
      }
    }
  }
  SplitModel model;
  model.bottom = SequentialModel(std::move(bottom_layers), std::move(bottom_names), std::move(bottom_params));
  model.top = SequentialModel(std::move(top_layers), std::move(top_names), std::move(top_params));
  model.spec = spec;
  return model;
}

SplitModelSpec default_split_spec(const std::vector<int64_t>& input_shape, int64_t num_classes, bool frequency_input,
                                  int64_t bottom_channels, int64_t top_channels) {
  if (input_shape.size() != 3) {
    throw std::invalid_argument("default_split_spec: input shape must be [C, H, W], got " +
                                shape_to_string(input_shape));
  }
  const int64_t in_ch = input_shape[0];
  const int64_t h = input_shape[1];
  SplitModelSpec spec;
  spec.input_shape = input_shape;
  int64_t spatial;
  if (frequency_input) {
    if (bottom_channels == 0) bottom_channels = 192;
    spec.layers.push_back(LayerSpec::conv2d(in_ch, bottom_channels, 3, 1, 1));
    spatial = h;
  } else {
    if (bottom_channels == 0) bottom_channels = 16;
    spec.layers.push_back(LayerSpec::conv2d(in_ch, bottom_channels, 3, 2, 1));
    spatial = (h + 2 - 3) / 2 + 1;
  }
  spec.split_point = 1;  // the first convolution is the whole client model
  spec.layers.push_back(LayerSpec::relu());
  spec.layers.push_back(LayerSpec::conv2d(bottom_channels, top_channels, 3, 1, 1));
  spec.layers.push_back(LayerSpec::relu());
  if (spatial % 2 == 0 && spatial >= 2) {
    spec.layers.push_back(LayerSpec::avg_pool2d(2));
  }
  spec.layers.push_back(LayerSpec::linear(num_classes));
  return spec;
}

std::vector<LayerSpec> default_decoder_spec(const std::vector<int64_t>& z_shape,
                                            const std::vector<int64_t>& image_shape) {
  if (z_shape.size() != 3 || image_shape.size() != 3 || image_shape[0] != 3 || image_shape[1] != image_shape[2]) {
    throw std::invalid_argument("default_decoder_spec: expected z [C, h, w] and image [3, H, H], got " +
                                shape_to_string(z_shape) + " and " + shape_to_string(image_shape));
  }
  int64_t ch = z_shape[0];
  int64_t spatial = z_shape[1];
  const int64_t target = image_shape[1];
  std::vector<LayerSpec> layers;
  while (spatial < target) {
    if (target % spatial != 0 || (target / spatial) % 2 != 0) {
      throw std::invalid_argument("default_decoder_spec: cannot upsample " + std::to_string(spatial) + " to " +
                                  std::to_string(target) + " by doubling");
    }
    int64_t next_ch = std::max<int64_t>(8, ch / 4);
    layers.push_back(LayerSpec::conv_transpose2d(ch, next_ch, 2, 2, 0));
    layers.push_back(LayerSpec::relu());
    ch = next_ch;
    spatial *= 2;
  }
  if (spatial != target) {
    throw std::invalid_argument("default_decoder_spec: smashed data spatial size " + std::to_string(z_shape[1]) +
                                " does not divide image size " + std::to_string(target));
  }
  layers.push_back(LayerSpec::conv2d(ch, 24, 3, 1, 1));
  layers.push_back(LayerSpec::relu());
  layers.push_back(LayerSpec::conv2d(24, 3, 3, 1, 1));
  layers.push_back(LayerSpec::sigmoid_output());
  return layers;
}

namespace {

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const uint8_t* data, size_t size, const std::string& path) : data_(data), size_(size), path_(path) {}

  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() {
    const uint8_t* p = take(2);
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }
  uint32_t u32() {
    const uint8_t* p = take(4);
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
  }
  double f64() {
    const uint8_t* p = take(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string str(size_t len) {
    const uint8_t* p = take(len);
    return std::string(reinterpret_cast<const char*>(p), len);
  }
  size_t offset() const { return offset_; }
  void expect_done() const {
    if (offset_ != size_) {
      throw std::runtime_error("parameter file " + path_ + " has " + std::to_string(size_ - offset_) +
                               " unexpected trailing bytes at offset " + std::to_string(offset_));
    }
  }

 private:
  const uint8_t* take(size_t n) {
    if (offset_ + n > size_) {
      throw std::runtime_error("parameter file " + path_ + " truncated at byte offset " + std::to_string(size_) +
                               " (needed " + std::to_string(offset_ + n) + " bytes)");
    }
    const uint8_t* p = data_ + offset_;
    offset_ += n;
    return p;
  }

  const uint8_t* data_;
  size_t size_;
  size_t offset_ = 0;
  std::string path_;
};

constexpr char kMagic[4] = {'S', 'V', 'P', 'M'};
constexpr uint8_t kVersion = 1;

}  // namespace

void save_params(const ModelParams& params, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  put_u32(out, static_cast<uint32_t>(params.tensors.size()));
  for (const auto& [name, tensor] : params.tensors) {
    if (name.size() > 0xffff) throw std::invalid_argument("parameter name too long: " + name);
    put_u16(out, static_cast<uint16_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(tensor.rank()));
    for (int64_t d : tensor.shape) put_u32(out, static_cast<uint32_t>(d));
    for (double v : tensor.data) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing " + path);
}

ModelParams load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open parameter file " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size(), path);
  const std::string magic = r.str(4);
  if (magic != std::string(kMagic, 4)) {
    throw std::runtime_error("parameter file " + path + " has bad magic bytes (expected SVPM)");
  }
  const uint8_t version = r.u8();
  if (version != kVersion) {
    throw std::runtime_error("parameter file " + path + " has unsupported version " + std::to_string(version));
  }
  const uint32_t count = r.u32();
  ModelParams params;
  for (uint32_t t = 0; t < count; ++t) {
    const uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    const uint8_t rank = r.u8();
    std::vector<int64_t> shape;
    int64_t numel = 1;
    for (uint8_t i = 0; i < rank; ++i) {
      const uint32_t d = r.u32();
      if (d == 0) throw std::runtime_error("parameter file " + path + ": zero dimension in tensor '" + name + "'");
      shape.push_back(static_cast<int64_t>(d));
      numel *= static_cast<int64_t>(d);
    }
    std::vector<double> data(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i) data[static_cast<size_t>(i)] = r.f64();
    if (params.tensors.count(name)) {
      throw std::runtime_error("parameter file " + path + ": duplicate tensor name '" + name + "'");
    }
    params.tensors[name] = Tensor(std::move(shape), std::move(data));
  }
  r.expect_done();
  return params;
}

void validate_params_for(const SequentialModel& model, const ModelParams& loaded) {
  for (const auto& [name, tensor] : model.params().tensors) {
    auto it = loaded.tensors.find(name);
    if (it == loaded.tensors.end()) throw std::runtime_error("loaded parameters are missing tensor '" + name + "'");
    if (it->second.shape != tensor.shape) {
      throw std::runtime_error("loaded tensor '" + name + "' has shape " + shape_to_string(it->second.shape) +
                               " but the model expects " + shape_to_string(tensor.shape));
    }
  }
  for (const auto& [name, tensor] : loaded.tensors) {
    (void)tensor;
    if (!model.params().tensors.count(name)) {
      throw std::runtime_error("loaded parameters contain unknown tensor '" + name + "'");
    }
  }
}

}  // namespace splitveil
