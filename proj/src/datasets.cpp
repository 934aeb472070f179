// SPDX-License-Identifier: Apache-2.0
#include "splitveil/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "splitveil/rng.hpp"

namespace splitveil {

double normalize_pixel(double v01) { return (v01 - 0.5) / 0.5; }
double denormalize_pixel(double vn) { return vn * 0.5 + 0.5; }

namespace {

constexpr int64_t kCifarDim = 32;
constexpr int64_t kCifarRecord = 1 + 3 * kCifarDim * kCifarDim;

void read_cifar_file(const std::filesystem::path& path, std::vector<Sample>& out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open CIFAR-10 batch file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecord != 0) {
    const size_t offset = (bytes.size() / kCifarRecord) * kCifarRecord;
    throw std::runtime_error("malformed CIFAR-10 file " + path.string() + ": trailing " +
                             std::to_string(bytes.size() - offset) + " bytes at byte offset " +
                             std::to_string(offset) + " do not form a 3073-byte record");
  }
  const size_t count = bytes.size() / kCifarRecord;
  for (size_t r = 0; r < count; ++r) {
    const uint8_t* rec = reinterpret_cast<const uint8_t*>(bytes.data()) + r * kCifarRecord;
    const uint8_t label = rec[0];
    if (label >= 10) {
      throw std::runtime_error("malformed CIFAR-10 file " + path.string() + ": label byte " + std::to_string(label) +
                               " >= 10 at byte offset " + std::to_string(r * kCifarRecord));
    }
    Sample s;
    s.label = label;
    s.image = Tensor::zeros({3, kCifarDim, kCifarDim});
    for (int64_t i = 0; i < 3 * kCifarDim * kCifarDim; ++i) {
      s.image.data[static_cast<size_t>(i)] = normalize_pixel(static_cast<double>(rec[1 + i]) / 255.0);
    }
    out.push_back(std::move(s));
  }
}

}  // namespace

DatasetSplit load_cifar10(const std::string& dir, const Cifar10Options& options) {
  namespace fs = std::filesystem;
  std::vector<fs::path> train_files, test_files;
  if (!fs::is_directory(dir)) throw std::runtime_error("CIFAR-10 directory does not exist: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("data_batch", 0) == 0 && name.size() >= 4 && name.substr(name.size() - 4) == ".bin") {
      train_files.push_back(entry.path());
    } else if (name == "test_batch.bin") {
      test_files.push_back(entry.path());
    }
  }
  std::sort(train_files.begin(), train_files.end());
  if (train_files.empty()) throw std::runtime_error("no data_batch_*.bin files found in " + dir);

  DatasetSplit split;
  split.num_classes = 10;
  split.height = kCifarDim;
  split.width = kCifarDim;
  for (const auto& p : train_files) read_cifar_file(p, split.train);
  for (const auto& p : test_files) read_cifar_file(p, split.test);

  if (options.max_train > 0 && static_cast<int64_t>(split.train.size()) > options.max_train) {
    split.train.resize(static_cast<size_t>(options.max_train));
  }
  if (options.max_test > 0 && static_cast<int64_t>(split.test.size()) > options.max_test) {
    split.test.resize(static_cast<size_t>(options.max_test));
  }

  // Deterministic carve of the attacker's auxiliary set out of train.
  const int64_t n_train = static_cast<int64_t>(split.train.size());
  int64_t n_aux = static_cast<int64_t>(std::llround(options.aux_fraction * static_cast<double>(n_train)));
  n_aux = std::min(n_aux, n_train > 0 ? n_train - 1 : 0);
  if (n_aux > 0) {
    Rng rng(derive_seed(options.seed, "cifar10.aux_carve"));
    std::vector<int64_t> perm = rng.permutation(n_train);
    std::vector<bool> is_aux(static_cast<size_t>(n_train), false);
    for (int64_t i = 0; i < n_aux; ++i) is_aux[static_cast<size_t>(perm[static_cast<size_t>(i)])] = true;
    std::vector<Sample> train_keep, aux;
    for (int64_t i = 0; i < n_train; ++i) {
      if (is_aux[static_cast<size_t>(i)]) aux.push_back(std::move(split.train[static_cast<size_t>(i)]));
      else train_keep.push_back(std::move(split.train[static_cast<size_t>(i)]));
    }
    split.train = std::move(train_keep);
    split.aux = std::move(aux);
  }
  return split;
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

Rgb class_color(int64_t k) {
  const double hue = std::fmod(0.13 + 0.61803398875 * static_cast<double>(k), 1.0);
  return hsv_to_rgb(hue, 0.85, 0.9);
}

Sample render_shape(int64_t label, int64_t dim, Rng& rng) {
  const double quarter = static_cast<double>(dim) / 4.0;
  const double centers[4][2] = {{quarter, quarter},
                                {quarter, 3.0 * quarter},
                                {3.0 * quarter, quarter},
                                {3.0 * quarter, 3.0 * quarter}};
  const int64_t pos = label % 4;
  const bool disc = (label % 2) == 0;
  const double ci = centers[pos][0] + rng.uniform(-1.0, 1.0);
  const double cj = centers[pos][1] + rng.uniform(-1.0, 1.0);
  const double radius = quarter * rng.uniform(0.75, 1.25);
  Rgb color = class_color(label);
  color.r = std::clamp(color.r + rng.uniform(-0.08, 0.08), 0.0, 1.0);
  color.g = std::clamp(color.g + rng.uniform(-0.08, 0.08), 0.0, 1.0);
  color.b = std::clamp(color.b + rng.uniform(-0.08, 0.08), 0.0, 1.0);

  Sample s;
  s.label = label;
  s.image = Tensor::zeros({3, dim, dim});
  const int64_t plane = dim * dim;
  for (int64_t i = 0; i < dim; ++i) {
    for (int64_t j = 0; j < dim; ++j) {
      const double di = static_cast<double>(i) - ci;
      const double dj = static_cast<double>(j) - cj;
      bool inside;
      if (disc) {
        inside = di * di + dj * dj <= radius * radius;
      } else {
        inside = std::fabs(di) <= radius * 0.9 && std::fabs(dj) <= radius * 0.9;
      }
      double r, g, b;
      if (inside) {
        r = color.r;
        g = color.g;
        b = color.b;
      } else {
        r = g = b = 0.15;
      }
      r = std::clamp(r + rng.gaussian(0.0, 0.02), 0.0, 1.0);
      g = std::clamp(g + rng.gaussian(0.0, 0.02), 0.0, 1.0);
      b = std::clamp(b + rng.gaussian(0.0, 0.02), 0.0, 1.0);
      s.image.data[static_cast<size_t>(i * dim + j)] = normalize_pixel(r);
      s.image.data[static_cast<size_t>(plane + i * dim + j)] = normalize_pixel(g);
      s.image.data[static_cast<size_t>(2 * plane + i * dim + j)] = normalize_pixel(b);
    }
  }
  return s;
}

std::vector<Sample> render_balanced(int64_t count, int64_t num_classes, int64_t dim, Rng& rng) {
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) out.push_back(render_shape(i % num_classes, dim, rng));
  return out;
}

}  // namespace

DatasetSplit synthetic_shapes(int64_t n, int64_t num_classes, int64_t dim, uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("synthetic_shapes: need at least 2 classes");
  if (dim % 8 != 0 || dim <= 0) {
    throw std::invalid_argument("synthetic_shapes: dim " + std::to_string(dim) + " must be a positive multiple of 8");
  }
  if (n < num_classes) throw std::invalid_argument("synthetic_shapes: need at least one sample per class");
  DatasetSplit split;
  split.num_classes = num_classes;
  split.height = dim;
  split.width = dim;
  Rng train_rng(derive_seed(seed, "synthetic.train"));
  Rng test_rng(derive_seed(seed, "synthetic.test"));
  Rng aux_rng(derive_seed(seed, "synthetic.aux"));
  const int64_t n_test = std::max(num_classes, n / 4);
  const int64_t n_aux = std::max(num_classes, n / 5);
  split.train = render_balanced(n, num_classes, dim, train_rng);
  split.test = render_balanced(n_test, num_classes, dim, test_rng);
  split.aux = render_balanced(n_aux, num_classes, dim, aux_rng);
  return split;
}

Batch stack_batch(const std::vector<Sample>& samples, const std::vector<int64_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("stack_batch: empty index list");
  const Tensor& first = samples.at(static_cast<size_t>(indices[0])).image;
  std::vector<int64_t> shape = first.shape;
  shape.insert(shape.begin(), static_cast<int64_t>(indices.size()));
  Batch batch;
  batch.images = Tensor::zeros(shape);
  batch.labels.reserve(indices.size());
  const int64_t per = first.numel();
  for (size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = samples.at(static_cast<size_t>(indices[i]));
    if (s.image.shape != first.shape) {
      throw std::invalid_argument("stack_batch: sample " + std::to_string(indices[i]) + " has shape " +
                                  shape_to_string(s.image.shape) + " but expected " + shape_to_string(first.shape));
    }
    std::copy(s.image.data.begin(), s.image.data.end(), batch.images.data.begin() + static_cast<int64_t>(i) * per);
    batch.labels.push_back(s.label);
  }
  return batch;
}

}  // namespace splitveil
