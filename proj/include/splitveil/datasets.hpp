// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitveil/tensor.hpp"

namespace splitveil {

// One image with its class label. Images are [3, H, W] with pixel values
// normalized to [-1, 1] (mean 0.5, std 0.5 on the [0, 1] scale).
struct Sample {
  Tensor image;
  int64_t label = 0;
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> test;
  // Attacker-side auxiliary data, disjoint from train.
  std::vector<Sample> aux;
  int64_t num_classes = 0;
  int64_t height = 0;
  int64_t width = 0;
};

double normalize_pixel(double v01);
double denormalize_pixel(double vn);

struct Cifar10Options {
  // 0 = keep everything.
  int64_t max_train = 0;
  int64_t max_test = 0;
  double aux_fraction = 0.2;
  uint64_t seed = 1;
};

// Reads CIFAR-10 binary batches (data_batch_*.bin as train, test_batch.bin as
// test; 3073-byte records of 1 label byte + 3072 pixel bytes, R then G then B
// planes). The auxiliary split is carved out of train with a seeded shuffle.
DatasetSplit load_cifar10(const std::string& dir, const Cifar10Options& options = {});

// Procedurally rendered classification set: each class owns a shape kind,
// canvas position and hue, with per-sample jitter so samples within a class
// differ. Labels are exactly balanced. Train gets n samples, aux a fresh 20%
// of n, test a fresh 25% of n (at least one block of each).
DatasetSplit synthetic_shapes(int64_t n, int64_t num_classes, int64_t dim, uint64_t seed);

// Collates samples[indices] into a [N, 3, H, W] batch plus labels.
struct Batch {
  Tensor images;
  std::vector<int64_t> labels;
};
Batch stack_batch(const std::vector<Sample>& samples, const std::vector<int64_t>& indices);

}  // namespace splitveil
