// SPDX-License-Identifier: Apache-2.0
#include "data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "data/png_io.hpp"
#include "util/error.hpp"
#include "util/fs.hpp"
#include "util/rng.hpp"

namespace rdet {

namespace fs = std::filesystem;
using nlohmann::json;

void validate_sample(const ImageSample& sample, int num_classes) {
  const Tensor& p = sample.pixels;
  require(p.rank() == 3 && p.dim(0) == 3, ErrorKind::Validation,
          "image must have shape (3,H,W), got " + shape_str(p.shape()));
  for (double v : p.values()) {
    require(v >= 0.0 && v <= 255.0, ErrorKind::Validation, "pixel value outside [0,255]");
  }
  require(sample.boxes.size() == sample.labels.size(), ErrorKind::Validation,
          "box and label counts differ");
  for (std::size_t i = 0; i < sample.boxes.size(); ++i) {
    const Box& b = sample.boxes[i];
    require(b.w > 0.0 && b.h > 0.0 && b.px >= 0.0 && b.py >= 0.0 && b.right() <= p.dim(2) &&
                b.bottom() <= p.dim(1),
            ErrorKind::Validation, "box " + std::to_string(i) + " is degenerate or out of frame");
    require(sample.labels[i] >= 1 && sample.labels[i] <= num_classes, ErrorKind::Validation,
            "label " + std::to_string(sample.labels[i]) + " outside 1.." +
                std::to_string(num_classes));
  }
}

Dataset Dataset::subset(std::size_t begin, std::size_t end) const {
  require(begin <= end && end <= samples.size(), ErrorKind::Parameter, "subset range out of bounds");
  Dataset out;
  out.manifest.class_names = manifest.class_names;
  out.manifest.height = manifest.height;
  out.manifest.width = manifest.width;
  for (std::size_t i = begin; i < end; ++i) {
    if (i < manifest.samples.size()) out.manifest.samples.push_back(manifest.samples[i]);
    out.samples.push_back(samples[i]);
  }
  return out;
}

const std::vector<std::string>& shape_kind_names() {
  static const std::vector<std::string> names = {"circle",  "square", "triangle", "diamond",
                                                 "cross",   "ring",   "hbar",     "vbar"};
  return names;
}

namespace {

// u, v are pixel-centre coordinates normalised by the half extent.
bool inside_shape(int kind, double u, double v) {
  const double au = std::abs(u);
  const double av = std::abs(v);
  switch (kind) {
    case 1: return u * u + v * v <= 1.0;
    case 2: return au <= 0.85 && av <= 0.85;
    case 3: return v >= -0.9 && v <= 0.9 && au <= (v + 0.9) / 1.8;
    case 4: return au + av <= 1.0;
    case 5: return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);
    case 6: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.36;
    }
    case 7: return au <= 1.0 && av <= 0.45;
    case 8: return au <= 0.45 && av <= 1.0;
    default: return false;
  }
}

double clamp_pixel(double v) { return std::clamp(std::nearbyint(v), 0.0, 255.0); }

ImageSample render_image(Rng& rng, int height, int width, int num_classes,
                         std::vector<int>& class_counts) {
  ImageSample s;
  s.pixels = Tensor({3, height, width});
  const std::size_t plane = static_cast<std::size_t>(height) * width;

  double base[3];
  for (double& c : base) c = rng.uniform(40.0, 215.0);
  const double freq_x = rng.uniform(0.05, 0.4);
  const double freq_y = rng.uniform(0.05, 0.4);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  const double amp = rng.uniform(4.0, 14.0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double stripe = amp * std::sin(freq_x * x + freq_y * y + phase);
      for (int c = 0; c < 3; ++c) {
        s.pixels[c * plane + static_cast<std::size_t>(y) * width + x] =
            clamp_pixel(base[c] + stripe + rng.uniform(-6.0, 6.0));
      }
    }
  }

  const int max_size = std::min(64, std::min(height, width) / 2);
  const int min_size = 16;
  const int wanted = rng.uniform_int(1, 4);
  std::vector<unsigned char> mask(plane);
  for (int attempt = 0; attempt < 60 && static_cast<int>(s.boxes.size()) < wanted; ++attempt) {
    const int kind = rng.uniform_int(1, num_classes);
    const int size = rng.uniform_int(min_size, max_size);
    const double half = 0.5 * size;
    const double cx = rng.uniform(half, width - half);
    const double cy = rng.uniform(half, height - half);

    std::fill(mask.begin(), mask.end(), 0);
    int x0 = width, y0 = height, x1 = -1, y1 = -1;
    for (int y = std::max(0, static_cast<int>(cy - half) - 1);
         y <= std::min(height - 1, static_cast<int>(cy + half) + 1); ++y) {
      for (int x = std::max(0, static_cast<int>(cx - half) - 1);
           x <= std::min(width - 1, static_cast<int>(cx + half) + 1); ++x) {
        if (inside_shape(kind, (x + 0.5 - cx) / half, (y + 0.5 - cy) / half)) {
          mask[static_cast<std::size_t>(y) * width + x] = 1;
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
      }
    }
    if (x1 < x0 || y1 < y0) continue;
    const Box box{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 - x0 + 1),
                  static_cast<double>(y1 - y0 + 1)};
    if (box.w < 4 || box.h < 4) continue;
    const Box padded{box.px - 2, box.py - 2, box.w + 4, box.h + 4};
    const bool overlaps = std::any_of(s.boxes.begin(), s.boxes.end(),
                                      [&](const Box& other) { return iou(padded, other) > 0.0; });
    if (overlaps) continue;

    double color[3];
    for (int tries = 0; tries < 32; ++tries) {
      double dist = 0.0;
      for (int c = 0; c < 3; ++c) {
        color[c] = rng.uniform(0.0, 255.0);
        dist += std::abs(color[c] - base[c]);
      }
      if (dist >= 120.0) break;
    }
    for (std::size_t i = 0; i < plane; ++i) {
      if (!mask[i]) continue;
      for (int c = 0; c < 3; ++c) {
        s.pixels[c * plane + i] = clamp_pixel(color[c] + rng.uniform(-4.0, 4.0));
      }
    }
    s.boxes.push_back(box);
    s.labels.push_back(kind);
    ++class_counts[kind - 1];
  }
  return s;
}

json box_json(const Box& b) { return json::array({b.px, b.py, b.w, b.h}); }

}  // namespace

Dataset generate_shapes_dataset(const ShapesParams& params, GenerationLog* log) {
  require(params.count >= 1, ErrorKind::Parameter, "dataset size must be at least 1");
  require(params.height >= 64 && params.width >= 64, ErrorKind::Parameter,
          "image size must be at least 64x64");
  require(params.num_classes >= 2 && params.num_classes <= 8, ErrorKind::Parameter,
          "class count must be in [2, 8]");
  Dataset ds;
  ds.manifest.height = params.height;
  ds.manifest.width = params.width;
  const auto& names = shape_kind_names();
  ds.manifest.class_names.assign(names.begin(), names.begin() + params.num_classes);
  std::vector<int> counts(params.num_classes, 0);
  for (int i = 0; i < params.count; ++i) {
    Rng rng(derive_seed(params.seed, static_cast<std::uint64_t>(i)));
    ImageSample sample = render_image(rng, params.height, params.width, params.num_classes, counts);
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06d.png", i);
    ds.manifest.samples.push_back(SampleRecord{name, sample.boxes, sample.labels});
    ds.samples.push_back(std::move(sample));
  }
  if (log) log->class_counts = counts;
  return ds;
}

std::string serialize_annotations(const DatasetManifest& manifest) {
  std::string out;
  json header = {{"type", "manifest"},
                 {"classes", manifest.class_names},
                 {"image_size", json::array({manifest.height, manifest.width})}};
  out += header.dump();
  out += '\n';
  for (const SampleRecord& r : manifest.samples) {
    json boxes = json::array();
    for (const Box& b : r.boxes) boxes.push_back(box_json(b));
    json line = {{"image", r.image}, {"boxes", boxes}, {"labels", r.labels}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

DatasetManifest parse_annotations(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  DatasetManifest m;
  bool have_header = false;
  auto invalid = [&](const std::string& why) {
    fail(ErrorKind::Validation, "annotation line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      invalid(std::string("malformed JSON (") + e.what() + ")");
    }
    if (!have_header) {
      if (!j.is_object() || j.value("type", "") != "manifest") invalid("expected manifest header");
      try {
        m.class_names = j.at("classes").get<std::vector<std::string>>();
        const auto size = j.at("image_size").get<std::vector<int>>();
        if (size.size() != 2) invalid("image_size must be [h, w]");
        m.height = size[0];
        m.width = size[1];
      } catch (const json::exception& e) {
        invalid(std::string("bad manifest header (") + e.what() + ")");
      }
      if (m.class_names.empty()) invalid("manifest lists no classes");
      if (m.height <= 0 || m.width <= 0) invalid("image_size must be positive");
      have_header = true;
      continue;
    }
    SampleRecord r;
    try {
      r.image = j.at("image").get<std::string>();
      for (const auto& b : j.at("boxes")) {
        if (!b.is_array() || b.size() != 4) invalid("box must be [px, py, w, h]");
        r.boxes.push_back(Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                              b[3].get<double>()});
      }
      r.labels = j.at("labels").get<std::vector<int>>();
    } catch (const json::exception& e) {
      invalid(std::string("bad record (") + e.what() + ")");
    }
    if (r.image.empty()) invalid("empty image path");
    if (r.boxes.size() != r.labels.size()) invalid("box and label counts differ");
    for (std::size_t i = 0; i < r.boxes.size(); ++i) {
      const Box& b = r.boxes[i];
      const std::string which = "box " + std::to_string(i);
      if (!(b.w > 0.0)) invalid(which + " has non-positive width");
      if (!(b.h > 0.0)) invalid(which + " has non-positive height");
      if (b.px < 0.0 || b.py < 0.0 || b.right() > m.width || b.bottom() > m.height) {
        invalid(which + " lies outside the image frame");
      }
      if (r.labels[i] < 1 || r.labels[i] > m.num_classes()) {
        invalid("unknown class " + std::to_string(r.labels[i]));
      }
    }
    m.samples.push_back(std::move(r));
  }
  if (!have_header) fail(ErrorKind::Validation, "annotation file has no manifest header");
  return m;
}

void save_annotations(const DatasetManifest& manifest, const fs::path& path) {
  write_file_atomic(path, serialize_annotations(manifest));
}

DatasetManifest load_annotations(const fs::path& path) {
  require(fs::exists(path), ErrorKind::Io, "annotation file not found: " + path.string());
  return parse_annotations(read_file(path));
}

fs::path write_dataset(const Dataset& dataset, const fs::path& dir) {
  require(dataset.samples.size() == dataset.manifest.samples.size(), ErrorKind::Parameter,
          "dataset rasters and records are not aligned");
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    write_png(dir / dataset.manifest.samples[i].image, to_rgb(dataset.samples[i].pixels));
  }
  const fs::path annotations = dir / kAnnotationFile;
  save_annotations(dataset.manifest, annotations);
  return annotations;
}

Dataset load_dataset(const fs::path& annotation_path) {
  Dataset ds;
  ds.manifest = load_annotations(annotation_path);
  const fs::path root = annotation_path.parent_path();
  for (const SampleRecord& r : ds.manifest.samples) {
    ImageSample s;
    s.pixels = from_rgb(read_png(root / r.image));
    require(s.height() == ds.manifest.height && s.width() == ds.manifest.width,
            ErrorKind::Validation,
            r.image + ": raster size does not match the manifest image_size");
    s.boxes = r.boxes;
    s.labels = r.labels;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace rdet
