// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "detection/box.hpp"
#include "nn/tensor.hpp"

namespace rdet {

/// One training/evaluation unit: a (3,H,W) raster in [0,255] with its
/// ground truth. Labels are 1..C; 0 is reserved for background.
struct ImageSample {
  Tensor pixels;
  std::vector<Box> boxes;
  std::vector<int> labels;

  int height() const { return pixels.dim(1); }
  int width() const { return pixels.dim(2); }
};

/// Throws a validation error when any ImageSample invariant fails.
void validate_sample(const ImageSample& sample, int num_classes);

struct SampleRecord {
  std::string image;  // path relative to the annotation file's directory
  std::vector<Box> boxes;
  std::vector<int> labels;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
  std::vector<SampleRecord> samples;
  std::vector<std::string> class_names;
  int height = 0;
  int width = 0;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Manifest plus decoded rasters, index-aligned with `manifest.samples`.
struct Dataset {
  DatasetManifest manifest;
  std::vector<ImageSample> samples;

  std::size_t size() const { return samples.size(); }
  /// Subset by index, preserving order.
  Dataset subset(std::size_t begin, std::size_t end) const;
};

struct ShapesParams {
  int count = 200;
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  int num_classes = 3;
};

/// Per-class object counts recorded while rendering (index 0 = class 1).
struct GenerationLog {
  std::vector<int> class_counts;
};

/// Shape kinds in class order; the first `num_classes` are used.
const std::vector<std::string>& shape_kind_names();

/// Renders the synthetic shapes corpus. Identical parameters give
/// bit-identical output; each image gets its own derived seed.
Dataset generate_shapes_dataset(const ShapesParams& params, GenerationLog* log = nullptr);

/// Annotation file name written next to the images directory.
inline constexpr const char* kAnnotationFile = "annotations.jsonl";

std::string serialize_annotations(const DatasetManifest& manifest);
DatasetManifest parse_annotations(const std::string& text);

void save_annotations(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_annotations(const std::filesystem::path& path);

/// Writes rasters under `dir/<record.image>` and the annotation file
/// `dir/annotations.jsonl`. Returns the annotation path.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Loads annotations and decodes every referenced raster.
Dataset load_dataset(const std::filesystem::path& annotation_path);

}  // namespace rdet
