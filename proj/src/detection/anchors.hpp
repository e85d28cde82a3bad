// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "detection/box.hpp"

namespace rdet {

/// One detection scale: a grid x grid tiling with one anchor per (size, ratio).
/// Ratios are width/height.
struct ScaleSpec {
  int grid = 1;
  std::vector<double> sizes;
  std::vector<double> ratios;

  int anchors_per_cell() const { return static_cast<int>(sizes.size() * ratios.size()); }
};

/// Prior boxes ordered (scale, row, col, size, ratio).
struct AnchorSet {
  std::vector<Box> anchors;
  Variances variances;
  int height = 0;
  int width = 0;
  std::vector<int> grids;
  std::vector<int> anchors_per_cell;

  std::size_t size() const { return anchors.size(); }
};

AnchorSet build_anchors(int height, int width, const std::vector<ScaleSpec>& specs,
                        Variances variances = {});

/// Three scales on 8x8, 4x4 and 2x2 grids with ratios {1, 2, 1/2}.
std::vector<ScaleSpec> default_scale_specs(int height, int width);

/// Assignment of anchors to ground truth for one image.
struct MatchResult {
  std::vector<int> matched_gt;  // -1 = background
  std::vector<Offsets> target_offsets;
  std::vector<int> target_class;  // 0 = background

  int num_positive() const;
};

/// Each gt first claims its best unclaimed anchor regardless of threshold
/// (gts in index order, lowest anchor index on ties); the remaining anchors are
/// positive when their best IoU reaches `threshold` (lowest gt index on ties).
MatchResult match_anchors(const AnchorSet& anchors, std::span<const Box> gts,
                          std::span<const int> labels, double threshold = 0.5);

}  // namespace rdet
