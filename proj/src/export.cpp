// SPDX-License-Identifier: Apache-2.0
#include "splitveil/export.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "splitveil/datasets.hpp"

namespace splitveil {

namespace {

void put_u32_be(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

void append_chunk(std::string& out, const char type[4], const std::string& payload) {
  put_u32_be(out, static_cast<uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
  put_u32_be(out, crc);
}

}  // namespace

void write_png_rgb(const std::string& path, int64_t width, int64_t height, const std::vector<uint8_t>& rgb) {
  if (width <= 0 || height <= 0 || rgb.size() != static_cast<size_t>(width * height * 3)) {
    throw std::invalid_argument("write_png_rgb: buffer size " + std::to_string(rgb.size()) +
                                " does not match " + std::to_string(width) + "x" + std::to_string(height));
  }
  // Raw scanlines, each prefixed with filter byte 0.
  std::vector<uint8_t> raw(static_cast<size_t>(height * (1 + width * 3)));
  for (int64_t y = 0; y < height; ++y) {
    raw[static_cast<size_t>(y * (1 + width * 3))] = 0;
    std::memcpy(raw.data() + y * (1 + width * 3) + 1, rgb.data() + y * width * 3, static_cast<size_t>(width * 3));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("write_png_rgb: zlib compression failed");
  }
  compressed.resize(bound);

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(width));
  put_u32_be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  append_chunk(png, "IHDR", ihdr);
  append_chunk(png, "IDAT", std::string(reinterpret_cast<const char*>(compressed.data()), compressed.size()));
  append_chunk(png, "IEND", "");

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(png.data(), static_cast<std::streamsize>(png.size()));
  if (!f) throw std::runtime_error("failed writing " + path);
}

void write_image_grid_png(const std::string& path, const std::vector<std::vector<Tensor>>& rows, int upscale) {
  if (rows.empty() || rows[0].empty()) throw std::invalid_argument("write_image_grid_png: empty grid");
  const int64_t cols = static_cast<int64_t>(rows[0].size());
  const int64_t h = rows[0][0].shape[1], w = rows[0][0].shape[2];
  const int64_t pad = 2;
  const int64_t cell_h = h * upscale + pad, cell_w = w * upscale + pad;
  const int64_t out_h = cell_h * static_cast<int64_t>(rows.size()) + pad;
  const int64_t out_w = cell_w * cols + pad;
  std::vector<uint8_t> rgb(static_cast<size_t>(out_h * out_w * 3), 32);
  for (size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int64_t>(rows[r].size()) != cols) {
      throw std::invalid_argument("write_image_grid_png: ragged grid rows");
    }
    for (int64_t c = 0; c < cols; ++c) {
      const Tensor& img = rows[r][static_cast<size_t>(c)];
      if (img.rank() != 3 || img.shape[0] != 3 || img.shape[1] != h || img.shape[2] != w) {
        throw std::invalid_argument("write_image_grid_png: image has shape " + shape_to_string(img.shape));
      }
      const int64_t oy = static_cast<int64_t>(r) * cell_h + pad;
      const int64_t ox = c * cell_w + pad;
      for (int64_t y = 0; y < h * upscale; ++y) {
        for (int64_t x = 0; x < w * upscale; ++x) {
          const int64_t sy = y / upscale, sx = x / upscale;
          uint8_t* px = rgb.data() + ((oy + y) * out_w + ox + x) * 3;
          for (int ch = 0; ch < 3; ++ch) {
            double v = denormalize_pixel(img.data[static_cast<size_t>((ch * h + sy) * w + sx)]);
            v = std::clamp(v, 0.0, 1.0);
            px[ch] = static_cast<uint8_t>(std::lround(v * 255.0));
          }
        }
      }
    }
  }
  write_png_rgb(path, out_w, out_h, rgb);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {
std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}
}  // namespace

void write_scatter_svg(const std::string& path, const std::vector<ScatterPoint>& points, const std::string& x_label,
                       const std::string& y_label, const std::string& title) {
  const int width = 640, height = 480;
  const int ml = 70, mr = 150, mt = 40, mb = 55;
  const double plot_w = width - ml - mr, plot_h = height - mt - mb;

  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  if (!points.empty()) {
    xmin = xmax = points[0].x;
    ymin = ymax = points[0].y;
    for (const auto& p : points) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  }
  if (xmax - xmin < 1e-12) { xmax += 0.5; xmin -= 0.5; }
  if (ymax - ymin < 1e-12) { ymax += 0.5; ymin -= 0.5; }
  const double xpad = (xmax - xmin) * 0.08, ypad = (ymax - ymin) * 0.08;
  xmin -= xpad; xmax += xpad; ymin -= ypad; ymax += ypad;

  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * plot_w; };
  auto sy = [&](double y) { return mt + plot_h - (y - ymin) / (ymax - ymin) * plot_h; };

  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  std::vector<std::string> series_order;
  std::map<std::string, std::string> series_color;
  for (const auto& p : points) {
    if (!series_color.count(p.series)) {
      series_color[p.series] = kPalette[series_order.size() % 7];
      series_order.push_back(p.series);
    }
  }

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\" font-family=\"sans-serif\">"
      << xml_escape(title) << "</text>\n";
  // axes
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w << "\" y2=\"" << mt + plot_h
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double fx = xmin + (xmax - xmin) * t / 5.0;
    const double fy = ymin + (ymax - ymin) * t / 5.0;
    svg << "<line x1=\"" << sx(fx) << "\" y1=\"" << mt + plot_h << "\" x2=\"" << sx(fx) << "\" y2=\""
        << mt + plot_h + 5 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << sx(fx) << "\" y=\"" << mt + plot_h + 18
        << "\" text-anchor=\"middle\" font-size=\"10\" font-family=\"sans-serif\">" << fmt2(fx) << "</text>\n";
    svg << "<line x1=\"" << ml - 5 << "\" y1=\"" << sy(fy) << "\" x2=\"" << ml << "\" y2=\"" << sy(fy)
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << sy(fy) + 3
        << "\" text-anchor=\"end\" font-size=\"10\" font-family=\"sans-serif\">" << fmt2(fy) << "</text>\n";
  }
  svg << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << xml_escape(x_label)
      << "</text>\n";
  svg << "<text x=\"18\" y=\"" << mt + plot_h / 2 << "\" text-anchor=\"middle\" font-size=\"13\" "
      << "font-family=\"sans-serif\" transform=\"rotate(-90 18 " << mt + plot_h / 2 << ")\">" << xml_escape(y_label)
      << "</text>\n";
  for (const auto& p : points) {
    svg << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y) << "\" r=\"4\" fill=\"" << series_color[p.series]
        << "\" fill-opacity=\"0.8\"/>\n";
  }
  // legend
  int ly = mt + 10;
  for (const auto& s : series_order) {
    svg << "<circle cx=\"" << ml + plot_w + 18 << "\" cy=\"" << ly << "\" r=\"5\" fill=\"" << series_color[s]
        << "\"/>\n";
    svg << "<text x=\"" << ml + plot_w + 28 << "\" y=\"" << ly + 4
        << "\" font-size=\"11\" font-family=\"sans-serif\">" << xml_escape(s) << "</text>\n";
    ly += 18;
  }
  svg << "</svg>\n";

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << svg.str();
  if (!f) throw std::runtime_error("failed writing " + path);
}

namespace {
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}
}  // namespace

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << csv_field(header[i]);
  f << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size()) {
      throw std::invalid_argument("write_csv: row has " + std::to_string(row.size()) + " fields, header has " +
                                  std::to_string(header.size()));
    }
    for (size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << csv_field(row[i]);
    f << "\n";
  }
  if (!f) throw std::runtime_error("failed writing " + path);
}

}  // namespace splitveil
