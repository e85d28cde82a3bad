// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>

#include "data/dataset.hpp"
#include "data/png_io.hpp"
#include "util/error.hpp"
#include "util/fs.hpp"

using namespace rdet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("rdet_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Parameter;
}

}  // namespace

TEST_CASE("generation is deterministic for equal parameters") {
  ShapesParams p;
  p.count = 10;
  p.seed = 7;
  p.height = 128;
  p.width = 128;
  p.num_classes = 3;
  const Dataset a = generate_shapes_dataset(p);
  const Dataset b = generate_shapes_dataset(p);
  CHECK(serialize_annotations(a.manifest) == serialize_annotations(b.manifest));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.samples[i].pixels == b.samples[i].pixels);

  p.seed = 8;
  const Dataset c = generate_shapes_dataset(p);
  CHECK(serialize_annotations(a.manifest) != serialize_annotations(c.manifest));
}

TEST_CASE("single 64x64 image keeps its boxes in frame") {
  ShapesParams p;
  p.count = 1;
  p.seed = 0;
  p.num_classes = 2;
  const Dataset d = generate_shapes_dataset(p);
  REQUIRE(d.size() == 1);
  REQUIRE(d.manifest.samples.size() == 1);
  for (const Box& b : d.samples[0].boxes) {
    CHECK(b.px >= 0);
    CHECK(b.py >= 0);
    CHECK(b.right() <= 64);
    CHECK(b.bottom() <= 64);
  }
}

TEST_CASE("class histogram recount matches the generation log") {
  ShapesParams p;
  p.count = 200;
  p.seed = 3;
  p.height = 128;
  p.width = 128;
  p.num_classes = 3;
  GenerationLog log;
  const Dataset d = generate_shapes_dataset(p, &log);
  std::map<int, int> recount;
  for (const SampleRecord& r : d.manifest.samples) {
    for (int l : r.labels) ++recount[l];
  }
  REQUIRE(log.class_counts.size() == 3);
  for (int c = 1; c <= 3; ++c) CHECK(recount[c] == log.class_counts[c - 1]);
}

TEST_CASE("generated samples satisfy the sample invariants") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ShapesParams p;
    p.count = 220;
    p.seed = seed;
    p.num_classes = 2 + static_cast<int>(seed % 3);
    const Dataset d = generate_shapes_dataset(p);
    for (const ImageSample& s : d.samples) {
      CHECK_NOTHROW(validate_sample(s, p.num_classes));
      CHECK(s.boxes.size() >= 1);
      CHECK(s.boxes.size() <= 4);
      ++checked;
    }
  }
  CHECK(checked >= 1000);
}

TEST_CASE("generation rejects bad sizes and class counts") {
  ShapesParams p;
  p.height = 32;
  CHECK(kind_of([&] { generate_shapes_dataset(p); }) == ErrorKind::Parameter);
  p = ShapesParams{};
  p.num_classes = 9;
  CHECK(kind_of([&] { generate_shapes_dataset(p); }) == ErrorKind::Parameter);
  p.num_classes = 1;
  CHECK(kind_of([&] { generate_shapes_dataset(p); }) == ErrorKind::Parameter);
  p = ShapesParams{};
  p.count = 0;
  CHECK(kind_of([&] { generate_shapes_dataset(p); }) == ErrorKind::Parameter);
}

TEST_CASE("annotation round trips") {
  const fs::path dir = scratch("roundtrip");

  SUBCASE("empty manifest") {
    DatasetManifest m;
    m.class_names = {"circle", "square"};
    m.height = 64;
    m.width = 64;
    save_annotations(m, dir / "empty.jsonl");
    const std::string text = read_file(dir / "empty.jsonl");
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    CHECK(load_annotations(dir / "empty.jsonl") == m);
  }

  SUBCASE("one sample") {
    ShapesParams p;
    p.count = 1;
    const Dataset d = generate_shapes_dataset(p);
    save_annotations(d.manifest, dir / "one.jsonl");
    CHECK(load_annotations(dir / "one.jsonl") == d.manifest);
  }

  SUBCASE("fifty samples re-saved byte for byte") {
    ShapesParams p;
    p.count = 50;
    p.seed = 11;
    const Dataset d = generate_shapes_dataset(p);
    save_annotations(d.manifest, dir / "first.jsonl");
    const DatasetManifest back = load_annotations(dir / "first.jsonl");
    CHECK(back == d.manifest);
    save_annotations(back, dir / "second.jsonl");
    CHECK(read_file(dir / "first.jsonl") == read_file(dir / "second.jsonl"));
  }
}

TEST_CASE("hand-written fixture loads verbatim") {
  const DatasetManifest m = load_annotations(fs::path(RDET_TEST_FIXTURES) / "two_records.jsonl");
  CHECK(m.class_names == std::vector<std::string>{"circle", "square", "triangle"});
  CHECK(m.height == 64);
  CHECK(m.width == 64);
  REQUIRE(m.samples.size() == 2);
  CHECK(m.samples[0].image == "images/a.png");
  REQUIRE(m.samples[0].boxes.size() == 2);
  CHECK(m.samples[0].boxes[0] == Box{4, 6, 20, 18});
  CHECK(m.samples[0].boxes[1] == Box{30.5, 31, 12, 10});
  CHECK(m.samples[0].labels == std::vector<int>{1, 3});
  CHECK(m.samples[1].image == "images/b.png");
  CHECK(m.samples[1].boxes[0] == Box{0, 0, 64, 64});
  CHECK(m.samples[1].labels == std::vector<int>{2});
}

TEST_CASE("malformed annotation records are rejected with their line") {
  try {
    load_annotations(fs::path(RDET_TEST_FIXTURES) / "negative_width.jsonl");
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Validation);
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }

  const auto bad = [](const std::string& record) {
    return std::string("{\"type\":\"manifest\",\"classes\":[\"a\",\"b\"],\"image_size\":[64,64]}\n") + record;
  };
  CHECK(kind_of([&] { parse_annotations(bad(R"({"image":"x.png","boxes":[[1,1,5,5]],"labels":[3]})")); }) ==
        ErrorKind::Validation);
  CHECK(kind_of([&] { parse_annotations(bad(R"({"image":"x.png","boxes":[[60,1,5,5]],"labels":[1]})")); }) ==
        ErrorKind::Validation);
  CHECK(kind_of([&] { parse_annotations(bad(R"({"image":"x.png","boxes":[[1,1,5,5]],"labels":[1,2]})")); }) ==
        ErrorKind::Validation);
  CHECK(kind_of([&] { parse_annotations(bad("{not json")); }) == ErrorKind::Validation);
  CHECK(kind_of([&] { load_annotations("/nonexistent/annotations.jsonl"); }) == ErrorKind::Io);
}

TEST_CASE("dataset write and load reproduce rasters exactly") {
  const fs::path dir = scratch("rasters");
  ShapesParams p;
  p.count = 6;
  p.seed = 4;
  const Dataset d = generate_shapes_dataset(p);
  const fs::path ann = write_dataset(d, dir);
  const Dataset back = load_dataset(ann);
  CHECK(back.manifest == d.manifest);
  REQUIRE(back.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    // Generated rasters are integral, so the 8-bit round trip is lossless.
    CHECK(back.samples[i].pixels == d.samples[i].pixels);
    CHECK(back.samples[i].boxes == d.samples[i].boxes);
  }
}

TEST_CASE("png conversion rounds and clamps") {
  Tensor t({3, 1, 2});
  t[0] = -4.0;
  t[1] = 300.0;
  t[2] = 12.4;
  t[3] = 12.6;
  t[4] = 0.0;
  t[5] = 255.0;
  const Tensor back = from_rgb(to_rgb(t));
  CHECK(back[0] == 0.0);
  CHECK(back[1] == 255.0);
  CHECK(back[2] == 12.0);
  CHECK(back[3] == 13.0);
}
