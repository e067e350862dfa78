#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <filesystem>
#include <string>
#include <vector>

#include "dejavu/core/image_io.hpp"

namespace dejavu::harness {

// Minimal raster canvas for line charts with a 5x7 bitmap font.
class Canvas {
 public:
  using Color = std::array<std::uint8_t, 3>;

  Canvas(int w, int h, Color bg = {255, 255, 255}) : r_{w, h, {}} {
    r_.pixels.resize(static_cast<std::size_t>(w) * h * 3);
    for (int i = 0; i < w * h; ++i)
      for (int c = 0; c < 3; ++c) r_.pixels[static_cast<std::size_t>(i) * 3 + c] = bg[c];
  }

  int width() const { return r_.width; }
  int height() const { return r_.height; }

  void set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= r_.width || y >= r_.height) return;
    auto* p = &r_.pixels[(static_cast<std::size_t>(y) * r_.width + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void line(int x0, int y0, int x1, int y1, Color c, int thick = 1) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      for (int oy = 0; oy < thick; ++oy)
        for (int ox = 0; ox < thick; ++ox) set(x0 + ox - thick / 2, y0 + oy - thick / 2, c);
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

  void dashed_vline(int x, int y0, int y1, Color c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      if ((y / 4) % 2 == 0) set(x, y, c);
  }

  void square(int cx, int cy, int half, Color c) {
    for (int y = cy - half; y <= cy + half; ++y)
      for (int x = cx - half; x <= cx + half; ++x) set(x, y, c);
  }

  // Upper-case text; unknown characters render as blanks.
  void text(int x, int y, const std::string& s, Color c, int scale = 1) {
    for (char ch : s) {
      const auto& g = glyph(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col)
          if (g[row] & (0x10 >> col))
            for (int oy = 0; oy < scale; ++oy)
              for (int ox = 0; ox < scale; ++ox) set(x + col * scale + ox, y + row * scale + oy, c);
      x += 6 * scale;
    }
  }
  static int text_width(const std::string& s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }

  void save(const std::filesystem::path& path) const { write_png_rgb8(r_, path); }

 private:
  static const std::array<std::uint8_t, 7>& glyph(char ch) {
    static const std::array<std::uint8_t, 7> blank{};
    struct G {
      char c;
      std::array<std::uint8_t, 7> rows;
    };
    static const G table[] = {
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
        {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}}, {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
        {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}}, {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
    };
    for (const auto& g : table)
      if (g.c == ch) return g.rows;
    return blank;
  }

  Rgb8 r_;
};

struct Series {
  std::vector<double> x, y;
};

struct LinePlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> notes;  // lines printed under the title
  std::optional<double> marker_x;  // dashed vertical marker
};

inline std::string short_number(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline void line_plot(const std::filesystem::path& path, const Series& s, const LinePlotOptions& o) {
  const int W = 640, H = 420, left = 70, right = 20, top = 30 + 12 * static_cast<int>(o.notes.size() + 1),
            bottom = 50;
  Canvas cv(W, H);
  const Canvas::Color ink{30, 30, 30}, grid{215, 215, 215}, blue{30, 90, 200}, red{200, 40, 40};
  cv.text(left, 8, o.title, ink, 2);
  for (std::size_t i = 0; i < o.notes.size(); ++i) cv.text(left, 28 + 12 * static_cast<int>(i), o.notes[i], red);
  if (s.x.empty()) {
    cv.save(path);
    return;
  }
  double x0 = *std::min_element(s.x.begin(), s.x.end()), x1 = *std::max_element(s.x.begin(), s.x.end());
  double y0 = *std::min_element(s.y.begin(), s.y.end()), y1 = *std::max_element(s.y.begin(), s.y.end());
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) y1 = y0 + 1e-3;
  const double pad = 0.08 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const int pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * pw)); };
  auto py = [&](double y) { return top + ph - static_cast<int>(std::lround((y - y0) / (y1 - y0) * ph)); };
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0;
    cv.line(left, py(yv), left + pw, py(yv), grid);
    const std::string lab = short_number(yv, 4);
    cv.text(left - 6 - Canvas::text_width(lab), py(yv) - 3, lab, ink);
  }
  for (double xv : s.x) {
    const std::string lab = short_number(xv, 2);
    cv.text(px(xv) - Canvas::text_width(lab) / 2, top + ph + 8, lab, ink);
  }
  cv.line(left, top, left, top + ph, ink);
  cv.line(left, top + ph, left + pw, top + ph, ink);
  if (o.marker_x) cv.dashed_vline(px(*o.marker_x), top, top + ph, red);
  for (std::size_t i = 1; i < s.x.size(); ++i) cv.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), blue, 2);
  for (std::size_t i = 0; i < s.x.size(); ++i) cv.square(px(s.x[i]), py(s.y[i]), 3, blue);
  cv.text(left + pw / 2 - Canvas::text_width(o.x_label) / 2, H - 18, o.x_label, ink);
  cv.text(4, top - 12, o.y_label, ink);
  cv.save(path);
}

}  // namespace dejavu::harness
