// SPDX-License-Identifier: Apache-2.0
#include "detection/anchors.hpp"

#include <algorithm>
#include <cmath>

#include "util/error.hpp"

namespace rdet {

AnchorSet build_anchors(int height, int width, const std::vector<ScaleSpec>& specs,
                        Variances variances) {
  require(!specs.empty(), ErrorKind::Parameter, "build_anchors: no scale specs");
  require(height > 0 && width > 0, ErrorKind::Parameter, "build_anchors: bad image size");
  AnchorSet set;
  set.variances = variances;
  set.height = height;
  set.width = width;
  for (const ScaleSpec& s : specs) {
    require(s.grid >= 1, ErrorKind::Parameter, "build_anchors: grid must be >= 1");
    require(!s.sizes.empty() && !s.ratios.empty(), ErrorKind::Parameter,
            "build_anchors: each scale needs sizes and ratios");
    for (double v : s.sizes) require(v > 0.0, ErrorKind::Parameter, "anchor size must be positive");
    for (double v : s.ratios) require(v > 0.0, ErrorKind::Parameter, "anchor ratio must be positive");
    set.grids.push_back(s.grid);
    set.anchors_per_cell.push_back(s.anchors_per_cell());
    const double step_x = static_cast<double>(width) / s.grid;
    const double step_y = static_cast<double>(height) / s.grid;
    for (int y = 0; y < s.grid; ++y) {
      for (int x = 0; x < s.grid; ++x) {
        const double cx = (x + 0.5) * step_x;
        const double cy = (y + 0.5) * step_y;
        for (double size : s.sizes) {
          for (double ratio : s.ratios) {
            const double r = std::sqrt(ratio);
            set.anchors.push_back(Box::from_center(cx, cy, size * r, size / r));
          }
        }
      }
    }
  }
  return set;
}

std::vector<ScaleSpec> default_scale_specs(int height, int width) {
  const double s = std::min(height, width);
  const std::vector<double> ratios = {1.0, 2.0, 0.5};
  return {ScaleSpec{8, {0.25 * s}, ratios}, ScaleSpec{4, {0.45 * s}, ratios},
          ScaleSpec{2, {0.7 * s}, ratios}};
}

int MatchResult::num_positive() const {
  return static_cast<int>(std::count_if(matched_gt.begin(), matched_gt.end(),
                                        [](int g) { return g >= 0; }));
}

MatchResult match_anchors(const AnchorSet& anchors, std::span<const Box> gts,
                          std::span<const int> labels, double threshold) {
  require(threshold > 0.0 && threshold < 1.0, ErrorKind::Parameter,
          "match_anchors: threshold must lie in (0,1)");
  require(gts.size() == labels.size(), ErrorKind::Parameter,
          "match_anchors: box and label counts differ");
  const std::size_t n_anchor = anchors.size();
  const std::size_t n_gt = gts.size();
  MatchResult m;
  m.matched_gt.assign(n_anchor, -1);
  m.target_offsets.assign(n_anchor, Offsets{0, 0, 0, 0});
  m.target_class.assign(n_anchor, 0);
  if (n_gt == 0) return m;

  std::vector<double> overlap(n_gt * n_anchor);
  for (std::size_t g = 0; g < n_gt; ++g) {
    for (std::size_t a = 0; a < n_anchor; ++a) overlap[g * n_anchor + a] = iou(gts[g], anchors.anchors[a]);
  }

  std::vector<bool> claimed(n_anchor, false);
  for (std::size_t g = 0; g < n_gt; ++g) {
    std::size_t best = n_anchor;
    double best_iou = -1.0;
    for (std::size_t a = 0; a < n_anchor; ++a) {
      if (claimed[a]) continue;
      if (overlap[g * n_anchor + a] > best_iou) {
        best_iou = overlap[g * n_anchor + a];
        best = a;
      }
    }
    if (best == n_anchor) continue;  // more gts than anchors
    claimed[best] = true;
    m.matched_gt[best] = static_cast<int>(g);
  }

  for (std::size_t a = 0; a < n_anchor; ++a) {
    if (claimed[a]) continue;
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < n_gt; ++g) {
      if (overlap[g * n_anchor + a] > best_iou) {
        best_iou = overlap[g * n_anchor + a];
        best = static_cast<int>(g);
      }
    }
    if (best_iou >= threshold) m.matched_gt[a] = best;
  }

  for (std::size_t a = 0; a < n_anchor; ++a) {
    const int g = m.matched_gt[a];
    if (g < 0) continue;
    m.target_class[a] = labels[static_cast<std::size_t>(g)];
    m.target_offsets[a] = encode_box(gts[static_cast<std::size_t>(g)], anchors.anchors[a], anchors.variances);
  }
  return m;
}

}  // namespace rdet
