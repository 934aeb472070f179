// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitveil/tensor.hpp"

namespace splitveil {

// Minimal PNG encoder (8-bit RGB, zlib-compressed). `rgb` holds height rows
// of width pixels, 3 bytes each.
void write_png_rgb(const std::string& path, int64_t width, int64_t height, const std::vector<uint8_t>& rgb);

// Renders rows of [3, H, W] images in [-1, 1] into one grid (nearest-neighbor
// upscaled) and writes it as PNG. Every row must have the same length.
void write_image_grid_png(const std::string& path, const std::vector<std::vector<Tensor>>& rows, int upscale = 6);

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  std::string series;
};

// Self-contained SVG scatter plot, one <circle> per point, one color per
// series plus a legend.
void write_scatter_svg(const std::string& path, const std::vector<ScatterPoint>& points, const std::string& x_label,
                       const std::string& y_label, const std::string& title);

// CSV with minimal quoting (fields containing commas, quotes or newlines are
// quoted and inner quotes doubled).
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string format_double(double v);  // round-trip exact, locale independent

}  // namespace splitveil
