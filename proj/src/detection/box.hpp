// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>

namespace rdet {

/// Axis-aligned box in pixel units: top-left corner plus extent.
struct Box {
  double px = 0.0;
  double py = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return px + 0.5 * w; }
  double cy() const { return py + 0.5 * h; }
  double right() const { return px + w; }
  double bottom() const { return py + h; }
  double area() const { return w * h; }

  static Box from_center(double cx, double cy, double w, double h) {
    return Box{cx - 0.5 * w, cy - 0.5 * h, w, h};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Encoded regression target relative to an anchor: (dcx, dcy, dw, dh).
using Offsets = std::array<double, 4>;

/// Encode/decode scaling pair (center, size).
struct Variances {
  double center = 0.1;
  double size = 0.2;
};

/// Intersection over union. Zero-area boxes give 0, including two identical
/// zero-area boxes.
double iou(const Box& a, const Box& b);

Offsets encode_box(const Box& gt, const Box& anchor, Variances v = {});
Box decode_box(const Offsets& offsets, const Box& anchor, Variances v = {});

/// Intersects a box with the [0,width]x[0,height] frame.
Box clip_box(const Box& b, double width, double height);

}  // namespace rdet
