// SPDX-License-Identifier: Apache-2.0
#include "detection/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "util/error.hpp"

namespace rdet {

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold) {
  require(boxes.size() == scores.size(), ErrorKind::Parameter, "nms: box/score count mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> kept;
  for (int i : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](int j) {
      return iou(boxes[i], boxes[j]) > iou_threshold;
    });
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

DetectionSet detect(const DetectorOutput& out, const AnchorSet& anchors, const DetectParams& params) {
  require(params.conf_threshold > 0.0 && params.conf_threshold < 1.0, ErrorKind::Parameter,
          "detect: confidence threshold must lie in (0,1)");
  require(params.nms_iou > 0.0 && params.nms_iou < 1.0, ErrorKind::Parameter,
          "detect: NMS IoU must lie in (0,1)");
  require(static_cast<std::size_t>(out.num_anchors()) == anchors.size(), ErrorKind::Parameter,
          "detect: output rows do not match the anchor count");
  const int width = out.num_classes() + 1;
  const int n = out.num_anchors();

  Tensor probs(out.class_logits.shape());
  for (int a = 0; a < n; ++a) {
    const double* row = out.class_logits.data() + static_cast<std::size_t>(a) * width;
    double* p = probs.data() + static_cast<std::size_t>(a) * width;
    double mx = *std::max_element(row, row + width);
    double s = 0.0;
    for (int c = 0; c < width; ++c) s += (p[c] = std::exp(row[c] - mx));
    for (int c = 0; c < width; ++c) p[c] /= s;
  }

  std::vector<Box> decoded(n);
  bool have_decoded = false;
  DetectionSet all;
  for (int c = 1; c < width; ++c) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int a = 0; a < n; ++a) {
      const double conf = probs[static_cast<std::size_t>(a) * width + c];
      if (conf < params.conf_threshold) continue;
      if (!have_decoded) {
        for (int b = 0; b < n; ++b) {
          Offsets o;
          for (int j = 0; j < 4; ++j) o[j] = out.box_offsets[static_cast<std::size_t>(b) * 4 + j];
          decoded[b] = clip_box(decode_box(o, anchors.anchors[b], anchors.variances), anchors.width,
                                anchors.height);
        }
        have_decoded = true;
      }
      boxes.push_back(decoded[a]);
      scores.push_back(conf);
    }
    for (int i : nms(boxes, scores, params.nms_iou)) {
      all.push_back(Detection{boxes[i], c, scores[i]});
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  if (all.size() > static_cast<std::size_t>(std::max(0, params.top_k))) all.resize(params.top_k);
  return all;
}

}  // namespace rdet
