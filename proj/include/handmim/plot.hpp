#pragma once

// Minimal line-plot rasterizer for the metric curves: white canvas, grid,
// axes with numeric tick labels in a 3x5 pixel font, one polyline per
// series. Output goes through the PNG writer.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "handmim/image.hpp"
#include "handmim/png.hpp"

namespace handmim {
namespace plot {

// 3x5 glyphs, one row per entry, three leftmost bits used.
inline const std::uint8_t* glyph(char c) {
  static const std::uint8_t font[][5] = {
      {0b111, 0b101, 0b101, 0b101, 0b111},  // 0
      {0b010, 0b110, 0b010, 0b010, 0b111},  // 1
      {0b111, 0b001, 0b111, 0b100, 0b111},  // 2
      {0b111, 0b001, 0b111, 0b001, 0b111},  // 3
      {0b101, 0b101, 0b111, 0b001, 0b001},  // 4
      {0b111, 0b100, 0b111, 0b001, 0b111},  // 5
      {0b111, 0b100, 0b111, 0b101, 0b111},  // 6
      {0b111, 0b001, 0b010, 0b010, 0b010},  // 7
      {0b111, 0b101, 0b111, 0b101, 0b111},  // 8
      {0b111, 0b101, 0b111, 0b001, 0b111},  // 9
      {0b000, 0b000, 0b000, 0b000, 0b010},  // .
      {0b000, 0b000, 0b111, 0b000, 0b000},  // -
      {0b010, 0b010, 0b111, 0b010, 0b010},  // +
      {0b111, 0b100, 0b110, 0b100, 0b111},  // e (drawn as E)
  };
  if (c >= '0' && c <= '9') return font[c - '0'];
  if (c == '.') return font[10];
  if (c == '-') return font[11];
  if (c == '+') return font[12];
  if (c == 'e' || c == 'E') return font[13];
  return nullptr;
}

inline void put_pixel(Image& img, int x, int y, const Vec3& c) {
  if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
  for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c(ch);
}

// Draws text with its top-left corner at (x, y); scale multiplies the 3x5
// cell. Unknown characters advance the cursor silently.
inline void draw_text(Image& img, int x, int y, const std::string& text, const Vec3& color,
                      int scale = 2) {
  int cursor = x;
  for (char c : text) {
    const std::uint8_t* g = glyph(c);
    if (g != nullptr)
      for (int r = 0; r < 5; ++r)
        for (int col = 0; col < 3; ++col)
          if (g[r] & (0b100 >> col))
            for (int sy = 0; sy < scale; ++sy)
              for (int sx = 0; sx < scale; ++sx)
                put_pixel(img, cursor + col * scale + sx, y + r * scale + sy, color);
    cursor += 4 * scale;
  }
}

inline int text_width(const std::string& text, int scale = 2) {
  return static_cast<int>(text.size()) * 4 * scale;
}

inline void draw_line(Image& img, double x0, double y0, double x1, double y1, const Vec3& c,
                      int thickness = 1) {
  double dx = x1 - x0, dy = y1 - y0;
  int steps = static_cast<int>(std::ceil(std::max(std::abs(dx), std::abs(dy)))) + 1;
  for (int i = 0; i <= steps; ++i) {
    double t = static_cast<double>(i) / steps;
    int px = static_cast<int>(std::lround(x0 + t * dx));
    int py = static_cast<int>(std::lround(y0 + t * dy));
    for (int oy = -(thickness - 1); oy <= thickness - 1; ++oy)
      for (int ox = -(thickness - 1); ox <= thickness - 1; ++ox)
        put_pixel(img, px + ox, py + oy, c);
  }
}

inline std::string format_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct Series {
  std::vector<double> x, y;
  Vec3 color = Vec3(0.1, 0.3, 0.8);
};

// Renders series into a fixed frame; x/y ranges are taken from the data
// (y sticks to [0,1] when the data fits, the natural range for fractions).
inline Image render_plot(const std::vector<Series>& series, int w = 480, int h = 360) {
  HM_CHECK(!series.empty(), InvariantError, "render_plot: no series");
  Image img(w, h);
  img.pix.setOnes();

  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = 0.0, y_max = 1.0;
  bool unit_y = true;
  for (const Series& s : series) {
    HM_CHECK(s.x.size() == s.y.size() && s.x.size() >= 2, InvariantError,
             "render_plot: series needs matched x/y of length >= 2");
    for (double v : s.x) {
      x_min = std::min(x_min, v);
      x_max = std::max(x_max, v);
    }
    for (double v : s.y) unit_y = unit_y && v >= 0.0 && v <= 1.0;
  }
  if (!unit_y) {
    y_min = std::numeric_limits<double>::infinity();
    y_max = -y_min;
    for (const Series& s : series)
      for (double v : s.y) {
        y_min = std::min(y_min, v);
        y_max = std::max(y_max, v);
      }
    if (y_max == y_min) y_max = y_min + 1.0;
  }
  if (x_max == x_min) x_max = x_min + 1.0;

  const int left = 50, right = 14, top = 14, bottom = 32;
  const double px0 = left, px1 = w - right, py0 = h - bottom, py1 = top;
  auto to_px = [&](double x) { return px0 + (x - x_min) / (x_max - x_min) * (px1 - px0); };
  auto to_py = [&](double y) { return py0 + (y - y_min) / (y_max - y_min) * (py1 - py0); };

  Vec3 grid(0.85, 0.85, 0.85), axis(0.2, 0.2, 0.2);
  const int ticks = 5;
  for (int i = 0; i <= ticks; ++i) {
    double fx = x_min + (x_max - x_min) * i / ticks;
    double fy = y_min + (y_max - y_min) * i / ticks;
    draw_line(img, to_px(fx), py0, to_px(fx), py1, grid);
    draw_line(img, px0, to_py(fy), px1, to_py(fy), grid);
    std::string xl = format_tick(fx);
    draw_text(img, static_cast<int>(to_px(fx)) - text_width(xl) / 2, h - bottom + 8, xl, axis);
    std::string yl = format_tick(fy);
    draw_text(img, left - 8 - text_width(yl), static_cast<int>(to_py(fy)) - 5, yl, axis);
  }
  draw_line(img, px0, py0, px1, py0, axis, 1);
  draw_line(img, px0, py0, px0, py1, axis, 1);

  for (const Series& s : series)
    for (std::size_t i = 0; i + 1 < s.x.size(); ++i)
      draw_line(img, to_px(s.x[i]), to_py(s.y[i]), to_px(s.x[i + 1]), to_py(s.y[i + 1]),
                s.color, 2);
  return img;
}

}  // namespace plot

struct CurveTable {
  std::vector<double> threshold;
  std::vector<double> pck_joints, pck_verts;
};

inline CurveTable read_curves_csv(const std::string& path) {
  std::ifstream in(path);
  HM_CHECK(in.good(), IoError, "cannot read " + path);
  std::string line;
  HM_CHECK(static_cast<bool>(std::getline(in, line)), IoError, path + ": empty file");
  HM_CHECK(line.rfind("threshold_mm,", 0) == 0, DataError,
           path + ": unexpected header '" + line + "'");
  CurveTable t;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string a, b, c;
    HM_CHECK(std::getline(ss, a, ',') && std::getline(ss, b, ',') && std::getline(ss, c, ','),
             DataError, path + ":" + std::to_string(lineno) + ": expected three columns");
    try {
      t.threshold.push_back(std::stod(a));
      t.pck_joints.push_back(std::stod(b));
      t.pck_verts.push_back(std::stod(c));
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": non-numeric value");
    }
  }
  HM_CHECK(t.threshold.size() >= 2, DataError, path + ": fewer than two curve points");
  return t;
}

// Reads `in_dir`/curves.csv and writes auc_pose.png, auc_mesh.png and a
// normalized curves.csv into out_dir.
inline void plot_eval_dir(const std::string& in_dir, const std::string& out_dir) {
  namespace fs = std::filesystem;
  CurveTable t = read_curves_csv((fs::path(in_dir) / "curves.csv").string());
  fs::create_directories(out_dir);

  plot::Series joints{t.threshold, t.pck_joints, Vec3(0.15, 0.35, 0.8)};
  plot::Series verts{t.threshold, t.pck_verts, Vec3(0.8, 0.25, 0.15)};
  png::write_file(plot::render_plot({joints}), (fs::path(out_dir) / "auc_pose.png").string());
  png::write_file(plot::render_plot({verts}), (fs::path(out_dir) / "auc_mesh.png").string());

  std::ofstream out((fs::path(out_dir) / "curves.csv").string(), std::ios::binary);
  HM_CHECK(out.good(), IoError, "cannot write curves under " + out_dir);
  out.precision(10);
  out << "threshold_mm,pck_joints,pck_verts\n";
  for (std::size_t i = 0; i < t.threshold.size(); ++i)
    out << t.threshold[i] << ',' << t.pck_joints[i] << ',' << t.pck_verts[i] << '\n';
}

}  // namespace handmim
