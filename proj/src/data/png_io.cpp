// SPDX-License-Identifier: Apache-2.0
#include "data/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "util/error.hpp"

namespace rdet {

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  require(image.width > 0 && image.height > 0 &&
              image.pixels.size() == static_cast<std::size_t>(image.width) * image.height * 3,
          ErrorKind::Parameter, "write_png: malformed raster");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, tmp.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    fail(ErrorKind::Io, "cannot write " + path.string() + ": " + msg);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorKind::Io, "cannot move " + tmp.string() + " to " + path.string());
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    fail(ErrorKind::Io, "cannot read " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    fail(ErrorKind::Io, "cannot decode " + path.string() + ": " + msg);
  }
  return out;
}

RgbImage to_rgb(const Tensor& chw) {
  require(chw.rank() == 3 && chw.dim(0) == 3, ErrorKind::Parameter, "to_rgb: expects (3,H,W)");
  RgbImage out;
  out.height = chw.dim(1);
  out.width = chw.dim(2);
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  const std::size_t plane = static_cast<std::size_t>(out.width) * out.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(std::nearbyint(chw[c * plane + i]), 0.0, 255.0);
      out.pixels[i * 3 + c] = static_cast<std::uint8_t>(v);
    }
  }
  return out;
}

Tensor from_rgb(const RgbImage& image) {
  Tensor out({3, image.height, image.width});
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) out[c * plane + i] = image.pixels[i * 3 + c];
  }
  return out;
}

}  // namespace rdet
