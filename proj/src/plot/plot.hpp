// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "data/png_io.hpp"

namespace rdet::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;
};

/// Polyline chart with a legend.
RgbImage line_chart(const std::vector<Series>& series, const Axes& axes);

/// Grouped bars: groups[g].y[c] is the bar of group g in category c.
RgbImage bar_chart(const std::vector<std::string>& categories, const std::vector<Series>& groups,
                   const Axes& axes);

/// Overlaid step outlines of binned densities over [lo, hi].
RgbImage histogram_chart(const std::vector<Series>& densities, double lo, double hi, const Axes& axes);

void save(const RgbImage& image, const std::filesystem::path& path);

}  // namespace rdet::plot
