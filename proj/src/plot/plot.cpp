// SPDX-License-Identifier: Apache-2.0
#include "plot/plot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "util/error.hpp"

namespace rdet::plot {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 440;
constexpr int kLeft = 70;
constexpr int kRight = 150;
constexpr int kTop = 40;
constexpr int kBottom = 60;

using Color = std::array<std::uint8_t, 3>;

constexpr Color kPalette[] = {{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14},
                              {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};

// 5x7 glyphs, one byte per row, low 5 bits used (bit 4 = leftmost column).
const std::map<char, std::array<std::uint8_t, 7>>& font() {
  static const std::map<char, std::array<std::uint8_t, 7>> glyphs = {
      {'0', {14, 17, 19, 21, 25, 17, 14}}, {'1', {4, 12, 4, 4, 4, 4, 14}},
      {'2', {14, 17, 1, 2, 4, 8, 31}},     {'3', {31, 2, 4, 2, 1, 17, 14}},
      {'4', {2, 6, 10, 18, 31, 2, 2}},     {'5', {31, 16, 30, 1, 1, 17, 14}},
      {'6', {6, 8, 16, 30, 17, 17, 14}},   {'7', {31, 1, 2, 4, 8, 8, 8}},
      {'8', {14, 17, 17, 14, 17, 17, 14}}, {'9', {14, 17, 17, 15, 1, 2, 12}},
      {'A', {14, 17, 17, 31, 17, 17, 17}}, {'B', {30, 17, 17, 30, 17, 17, 30}},
      {'C', {14, 17, 16, 16, 16, 17, 14}}, {'D', {28, 18, 17, 17, 17, 18, 28}},
      {'E', {31, 16, 16, 30, 16, 16, 31}}, {'F', {31, 16, 16, 30, 16, 16, 16}},
      {'G', {14, 17, 16, 23, 17, 17, 15}}, {'H', {17, 17, 17, 31, 17, 17, 17}},
      {'I', {14, 4, 4, 4, 4, 4, 14}},      {'J', {7, 2, 2, 2, 2, 18, 12}},
      {'K', {17, 18, 20, 24, 20, 18, 17}}, {'L', {16, 16, 16, 16, 16, 16, 31}},
      {'M', {17, 27, 21, 21, 17, 17, 17}}, {'N', {17, 17, 25, 21, 19, 17, 17}},
      {'O', {14, 17, 17, 17, 17, 17, 14}}, {'P', {30, 17, 17, 30, 16, 16, 16}},
      {'Q', {14, 17, 17, 17, 21, 18, 13}}, {'R', {30, 17, 17, 30, 20, 18, 17}},
      {'S', {15, 16, 16, 14, 1, 1, 30}},   {'T', {31, 4, 4, 4, 4, 4, 4}},
      {'U', {17, 17, 17, 17, 17, 17, 14}}, {'V', {17, 17, 17, 17, 17, 10, 4}},
      {'W', {17, 17, 17, 21, 21, 21, 10}}, {'X', {17, 17, 10, 4, 10, 17, 17}},
      {'Y', {17, 17, 17, 10, 4, 4, 4}},    {'Z', {31, 1, 2, 4, 8, 16, 31}},
      {'.', {0, 0, 0, 0, 0, 12, 12}},      {'-', {0, 0, 0, 31, 0, 0, 0}},
      {'_', {0, 0, 0, 0, 0, 0, 31}},       {':', {0, 12, 12, 0, 12, 12, 0}},
      {'/', {0, 1, 2, 4, 8, 16, 0}},       {'(', {2, 4, 8, 8, 8, 4, 2}},
      {')', {8, 4, 2, 2, 2, 4, 8}},        {'=', {0, 0, 31, 0, 31, 0, 0}},
      {'%', {24, 25, 2, 4, 8, 19, 3}},     {'+', {0, 4, 4, 31, 4, 4, 0}},
      {',', {0, 0, 0, 0, 12, 4, 8}},       {'>', {8, 4, 2, 1, 2, 4, 8}},
      {'<', {2, 4, 8, 16, 8, 4, 2}},       {'*', {0, 4, 21, 14, 21, 4, 0}},
      {' ', {0, 0, 0, 0, 0, 0, 0}},
  };
  return glyphs;
}

class Canvas {
 public:
  Canvas() { img_ = RgbImage{kWidth, kHeight, std::vector<std::uint8_t>(kWidth * kHeight * 3, 255)}; }

  void pixel(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= kWidth || y >= kHeight) return;
    auto* p = img_.pixels.data() + (static_cast<std::size_t>(y) * kWidth + x) * 3;
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void line(int x0, int y0, int x1, int y1, Color c, int thick = 1) {
    const int dx = std::abs(x1 - x0);
    const int dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1;
    const int sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      for (int t = 0; t < thick; ++t) {
        pixel(x0 + (dy == 0 ? 0 : t), y0 + (dy == 0 ? t : 0), c);
      }
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

  void fill(int x0, int y0, int x1, int y1, Color c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) {
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) pixel(x, y, c);
    }
  }

  void text(int x, int y, const std::string& s, Color c = {0, 0, 0}) {
    for (char ch : s) {
      const char key = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      const auto it = font().find(key);
      if (it != font().end()) {
        for (int r = 0; r < 7; ++r) {
          for (int col = 0; col < 5; ++col) {
            if (it->second[static_cast<std::size_t>(r)] & (16 >> col)) pixel(x + col, y + r, c);
          }
        }
      }
      x += 6;
    }
  }

  void vtext(int x, int y, const std::string& s, Color c = {0, 0, 0}) {
    for (char ch : s) {
      const char key = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      const auto it = font().find(key);
      if (it != font().end()) {
        for (int r = 0; r < 7; ++r) {
          for (int col = 0; col < 5; ++col) {
            if (it->second[static_cast<std::size_t>(r)] & (16 >> col)) pixel(x + r, y - col, c);
          }
        }
      }
      y -= 6;
    }
  }

  RgbImage take() { return std::move(img_); }

 private:
  RgbImage img_;
};

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Frame {
  Axes axes;
  int px(double x) const {
    const double span = axes.x_max - axes.x_min;
    return kLeft + static_cast<int>(std::lround((x - axes.x_min) / (span > 0 ? span : 1) * (kWidth - kLeft - kRight)));
  }
  int py(double y) const {
    const double span = axes.y_max - axes.y_min;
    return kHeight - kBottom -
           static_cast<int>(std::lround((y - axes.y_min) / (span > 0 ? span : 1) * (kHeight - kTop - kBottom)));
  }
};

void draw_frame(Canvas& c, const Frame& f, bool x_ticks = true) {
  const Color axis{0, 0, 0};
  const Color grid{225, 225, 225};
  for (int i = 0; i <= 5; ++i) {
    const double y = f.axes.y_min + (f.axes.y_max - f.axes.y_min) * i / 5.0;
    c.line(kLeft, f.py(y), kWidth - kRight, f.py(y), grid);
    const std::string lbl = tick_label(y);
    c.text(kLeft - 8 - 6 * static_cast<int>(lbl.size()), f.py(y) - 3, lbl);
    if (x_ticks) {
      const double x = f.axes.x_min + (f.axes.x_max - f.axes.x_min) * i / 5.0;
      c.line(f.px(x), kTop, f.px(x), kHeight - kBottom, grid);
      const std::string xl = tick_label(x);
      c.text(f.px(x) - 3 * static_cast<int>(xl.size()), kHeight - kBottom + 8, xl);
    }
  }
  c.line(kLeft, kTop, kLeft, kHeight - kBottom, axis);
  c.line(kLeft, kHeight - kBottom, kWidth - kRight, kHeight - kBottom, axis);
  c.text(kLeft, 14, f.axes.title);
  c.text((kLeft + kWidth - kRight) / 2 - 3 * static_cast<int>(f.axes.x_label.size()), kHeight - 22,
         f.axes.x_label);
  c.vtext(14, (kTop + kHeight - kBottom) / 2 + 3 * static_cast<int>(f.axes.y_label.size()), f.axes.y_label);
}

void draw_legend(Canvas& c, const std::vector<Series>& series) {
  int y = kTop;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Color col = kPalette[i % std::size(kPalette)];
    c.fill(kWidth - kRight + 12, y, kWidth - kRight + 22, y + 6, col);
    c.text(kWidth - kRight + 28, y, series[i].name.substr(0, 19));
    y += 14;
  }
}

}  // namespace

RgbImage line_chart(const std::vector<Series>& series, const Axes& axes) {
  Canvas c;
  const Frame f{axes};
  draw_frame(c, f);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const Series& ser = series[s];
    require(ser.x.size() == ser.y.size(), ErrorKind::Parameter, "series '" + ser.name + "' is ragged");
    const Color col = kPalette[s % std::size(kPalette)];
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      if (i > 0) c.line(f.px(ser.x[i - 1]), f.py(ser.y[i - 1]), f.px(ser.x[i]), f.py(ser.y[i]), col, 2);
      if (ser.x.size() <= 30) c.fill(f.px(ser.x[i]) - 2, f.py(ser.y[i]) - 2, f.px(ser.x[i]) + 2, f.py(ser.y[i]) + 2, col);
    }
  }
  draw_legend(c, series);
  return c.take();
}

RgbImage bar_chart(const std::vector<std::string>& categories, const std::vector<Series>& groups,
                   const Axes& axes) {
  Canvas c;
  Axes a = axes;
  a.x_min = 0.0;
  a.x_max = static_cast<double>(std::max<std::size_t>(1, categories.size()));
  const Frame f{a};
  draw_frame(c, f, false);
  const double slot = 1.0 / static_cast<double>(groups.size() + 1);
  for (std::size_t k = 0; k < categories.size(); ++k) {
    c.text(f.px(k + 0.5) - 3 * static_cast<int>(categories[k].size()), kHeight - kBottom + 8, categories[k]);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (k >= groups[g].y.size() || !std::isfinite(groups[g].y[k])) continue;
      const double x0 = k + slot * (g + 0.5);
      const double v = std::clamp(groups[g].y[k], a.y_min, a.y_max);
      c.fill(f.px(x0), f.py(std::max(a.y_min, 0.0)), f.px(x0 + slot) - 1, f.py(v),
             kPalette[g % std::size(kPalette)]);
    }
  }
  if (a.y_min < 0.0 && a.y_max > 0.0) c.line(kLeft, f.py(0.0), kWidth - kRight, f.py(0.0), {0, 0, 0});
  draw_legend(c, groups);
  return c.take();
}

RgbImage histogram_chart(const std::vector<Series>& densities, double lo, double hi, const Axes& axes) {
  Canvas c;
  Axes a = axes;
  a.x_min = lo;
  a.x_max = hi;
  const Frame f{a};
  draw_frame(c, f);
  for (std::size_t s = 0; s < densities.size(); ++s) {
    const auto& d = densities[s].y;
    if (d.empty()) continue;
    const Color col = kPalette[s % std::size(kPalette)];
    const double w = (hi - lo) / static_cast<double>(d.size());
    int prev_y = f.py(0.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const int x0 = f.px(lo + w * i);
      const int x1 = f.px(lo + w * (i + 1));
      const int y = f.py(std::min(d[i], a.y_max));
      c.line(x0, prev_y, x0, y, col, 2);
      c.line(x0, y, x1, y, col, 2);
      prev_y = y;
    }
    c.line(f.px(hi), prev_y, f.px(hi), f.py(0.0), col, 2);
  }
  draw_legend(c, densities);
  return c.take();
}

void save(const RgbImage& image, const std::filesystem::path& path) { write_png(path, image); }

}  // namespace rdet::plot
