// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nn/tensor.hpp"

namespace rdet {

/// Interleaved 8-bit RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);

/// (3,H,W) tensor in [0,255] <-> 8-bit raster (values rounded and clamped).
RgbImage to_rgb(const Tensor& chw);
Tensor from_rgb(const RgbImage& image);

}  // namespace rdet
