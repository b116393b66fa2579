#pragma once

// Minimal deterministic line-plot rasterizer: axes, ticks, polylines with
// markers, a legend and text from a 5x7 bitmap font. Output is RGB8 PNG.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "poisonlab/errors.hpp"
#include "poisonlab/image_io.hpp"

namespace poisonlab {

struct Color8 {
  std::uint8_t r, g, b;
};

namespace detail {

struct FontGlyph {
  char c;
  std::array<std::uint8_t, 7> rows;  // 5 bits per row, MSB is the left column
};

// Lowercase letters are drawn with their uppercase glyph.
inline constexpr FontGlyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}}, {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}}, {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
};

inline const FontGlyph* find_glyph(char c) {
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  for (const auto& g : kFont) {
    if (g.c == c) return &g;
  }
  return nullptr;
}

}  // namespace detail

class Canvas {
 public:
  Canvas(int width, int height, Color8 bg = {255, 255, 255})
      : w_(width), h_(height), px_(static_cast<std::size_t>(width) * height * 3) {
    for (std::size_t i = 0; i < px_.size(); i += 3) {
      px_[i] = bg.r;
      px_[i + 1] = bg.g;
      px_[i + 2] = bg.b;
    }
  }

  int width() const { return w_; }
  int height() const { return h_; }
  const std::vector<std::uint8_t>& pixels() const { return px_; }

  void set(int x, int y, Color8 c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    const std::size_t i = (static_cast<std::size_t>(y) * w_ + x) * 3;
    px_[i] = c.r;
    px_[i + 1] = c.g;
    px_[i + 2] = c.b;
  }

  void fill_rect(int x0, int y0, int x1, int y1, Color8 c) {
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) set(x, y, c);
    }
  }

  // Bresenham line; thickness grows the pen to a square.
  void line(int x0, int y0, int x1, int y1, Color8 c, int thickness = 1) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    const int lo = -(thickness - 1) / 2, hi = thickness / 2;
    for (;;) {
      fill_rect(x0 + lo, y0 + lo, x0 + hi, y0 + hi, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  // Text with its top-left corner at (x, y); returns the advance in pixels.
  int text(int x, int y, const std::string& s, Color8 c, int scale = 1) {
    int cx = x;
    for (char ch : s) {
      if (const auto* g = detail::find_glyph(ch)) {
        for (int row = 0; row < 7; ++row) {
          for (int col = 0; col < 5; ++col) {
            if (g->rows[row] & (0x10 >> col)) fill_rect(cx + col * scale, y + row * scale, cx + col * scale + scale - 1, y + row * scale + scale - 1, c);
          }
        }
      }
      cx += 6 * scale;
    }
    return cx - x;
  }

  static int text_width(const std::string& s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }

  void save_png(const std::filesystem::path& path) const { write_png_rgb8(path, w_, h_, px_); }

 private:
  int w_, h_;
  std::vector<std::uint8_t> px_;
};

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  double y_min = 0.0, y_max = 1.0;  // always includes the data range
  std::vector<Series> series;
};

inline constexpr std::array<Color8, 6> kSeriesColors = {{
    {31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14}, {148, 103, 189}, {140, 86, 75}}};

inline double nice_step(double span, int target_ticks) {
  const double raw = span / std::max(1, target_ticks);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

inline Canvas render_plot(const LinePlot& plot, int width = 640, int height = 420) {
  if (plot.series.empty()) throw ArgumentError("plot '" + plot.title + "' has no series");
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = plot.y_min, y_hi = plot.y_max;
  for (const auto& s : plot.series) {
    if (s.x.size() != s.y.size()) throw ArgumentError("plot series '" + s.label + "' has mismatched x/y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  if (!std::isfinite(x_lo)) x_lo = 0.0, x_hi = 1.0;
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi == y_lo) y_hi = y_lo + 1.0;

  Canvas cv(width, height);
  const Color8 ink{0, 0, 0}, grid{225, 225, 225};
  const int left = 64, right = width - 16, top = 34, bottom = height - 46;
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - y_lo) / (y_hi - y_lo) * (bottom - top))); };

  const double ys = nice_step(y_hi - y_lo, 5);
  for (double t = std::ceil(y_lo / ys) * ys; t <= y_hi + 1e-9; t += ys) {
    const int y = py(t);
    cv.line(left, y, right, y, grid);
    const std::string lab = fmt::format("{:g}", std::round(t * 1000.0) / 1000.0);
    cv.text(left - 6 - Canvas::text_width(lab), y - 3, lab, ink);
  }
  const double xs = nice_step(x_hi - x_lo, 8);
  for (double t = std::ceil(x_lo / xs) * xs; t <= x_hi + 1e-9; t += xs) {
    const int x = px(t);
    cv.line(x, bottom, x, bottom + 4, ink);
    const std::string lab = fmt::format("{:g}", std::round(t * 1000.0) / 1000.0);
    cv.text(x - Canvas::text_width(lab) / 2, bottom + 8, lab, ink);
  }
  cv.line(left, top, left, bottom, ink);
  cv.line(left, bottom, right, bottom, ink);

  cv.text((width - Canvas::text_width(plot.title, 2)) / 2, 8, plot.title, ink, 2);
  cv.text((left + right - Canvas::text_width(plot.x_label)) / 2, height - 16, plot.x_label, ink);
  cv.text(4, top - 14, plot.y_label, ink);

  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& s = plot.series[k];
    const Color8 c = kSeriesColors[k % kSeriesColors.size()];
    bool have_prev = false;
    int prev_x = 0, prev_y = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        have_prev = false;
        continue;
      }
      const int x = px(s.x[i]), y = py(s.y[i]);
      if (have_prev) cv.line(prev_x, prev_y, x, y, c, 2);
      cv.fill_rect(x - 2, y - 2, x + 2, y + 2, c);
      prev_x = x;
      prev_y = y;
      have_prev = true;
    }
    const int ly = top + 6 + static_cast<int>(k) * 12;
    const int lx = right - 8 - Canvas::text_width(s.label) - 22;
    cv.line(lx, ly + 3, lx + 16, ly + 3, c, 2);
    cv.text(lx + 20, ly, s.label, ink);
  }
  return cv;
}

inline void save_plot(const LinePlot& plot, const std::filesystem::path& path) { render_plot(plot).save_png(path); }

}  // namespace poisonlab
