// SPDX-License-Identifier: Apache-2.0
#include "detection/box.hpp"

#include <algorithm>
#include <cmath>

#include "util/error.hpp"

namespace rdet {

double iou(const Box& a, const Box& b) {
  const double area_a = std::max(0.0, a.w) * std::max(0.0, a.h);
  const double area_b = std::max(0.0, b.w) * std::max(0.0, b.h);
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double iw = std::min(a.right(), b.right()) - std::max(a.px, b.px);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.py, b.py);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return std::clamp(inter / (area_a + area_b - inter), 0.0, 1.0);
}

Offsets encode_box(const Box& gt, const Box& anchor, Variances v) {
  require(anchor.w > 0.0 && anchor.h > 0.0, ErrorKind::Parameter,
          "encode_box: anchor dimensions must be positive");
  require(gt.w > 0.0 && gt.h > 0.0, ErrorKind::Parameter,
          "encode_box: ground-truth dimensions must be positive");
  return {(gt.cx() - anchor.cx()) / (anchor.w * v.center),
          (gt.cy() - anchor.cy()) / (anchor.h * v.center), std::log(gt.w / anchor.w) / v.size,
          std::log(gt.h / anchor.h) / v.size};
}

Box decode_box(const Offsets& o, const Box& anchor, Variances v) {
  require(anchor.w > 0.0 && anchor.h > 0.0, ErrorKind::Parameter,
          "decode_box: anchor dimensions must be positive");
  const double cx = anchor.cx() + o[0] * v.center * anchor.w;
  const double cy = anchor.cy() + o[1] * v.center * anchor.h;
  const double w = anchor.w * std::exp(o[2] * v.size);
  const double h = anchor.h * std::exp(o[3] * v.size);
  return Box::from_center(cx, cy, w, h);
}

Box clip_box(const Box& b, double width, double height) {
  const double x0 = std::clamp(b.px, 0.0, width);
  const double y0 = std::clamp(b.py, 0.0, height);
  const double x1 = std::clamp(b.right(), 0.0, width);
  const double y1 = std::clamp(b.bottom(), 0.0, height);
  return Box{x0, y0, x1 - x0, y1 - y0};
}

}  // namespace rdet
