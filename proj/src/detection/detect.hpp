// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "detection/anchors.hpp"
#include "detection/losses.hpp"

namespace rdet {

struct Detection {
  Box box;
  int label = 0;  // 1..C
  double confidence = 0.0;
};

using DetectionSet = std::vector<Detection>;

struct DetectParams {
  double conf_threshold = 0.01;
  double nms_iou = 0.45;
  int top_k = 200;
};

/// Greedy NMS: visits boxes by descending score (lower index first on ties)
/// and drops any box whose IoU with an already kept box exceeds `iou_threshold`.
/// Returns kept indices in visiting order.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold);

/// Softmax, per-class confidence floor, per-class NMS on clipped decoded boxes,
/// then the `top_k` most confident detections overall.
DetectionSet detect(const DetectorOutput& out, const AnchorSet& anchors, const DetectParams& params = {});

}  // namespace rdet
