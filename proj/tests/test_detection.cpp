// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "detection/anchors.hpp"
#include "detection/detect.hpp"
#include "detection/losses.hpp"
#include "model/detector.hpp"
#include "nn/ops.hpp"
#include "support.hpp"
#include "util/error.hpp"

using namespace rdet;

namespace {

Box random_box(std::mt19937_64& g, double frame, double min_size = 2.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double w = min_size + u(g) * (frame / 2);
  const double h = min_size + u(g) * (frame / 2);
  return Box{u(g) * (frame - w), u(g) * (frame - h), w, h};
}

Box grid_box(std::mt19937_64& g, int frame) {
  std::uniform_int_distribution<int> pos(0, frame - 4);
  const int x = pos(g);
  const int y = pos(g);
  std::uniform_int_distribution<int> wx(2, frame - x);
  std::uniform_int_distribution<int> wy(2, frame - y);
  return Box{double(x), double(y), double(std::min(wx(g), 24)), double(std::min(wy(g), 24))};
}

MatchResult manual_match(int anchors, const std::vector<int>& positive_class) {
  MatchResult m;
  m.matched_gt.assign(anchors, -1);
  m.target_class.assign(anchors, 0);
  m.target_offsets.assign(anchors, Offsets{0, 0, 0, 0});
  for (std::size_t a = 0; a < positive_class.size(); ++a) {
    if (positive_class[a] > 0) {
      m.matched_gt[a] = 0;
      m.target_class[a] = positive_class[a];
    }
  }
  return m;
}

DetectorOutput make_output(int anchors, int classes) {
  DetectorOutput o;
  o.class_logits = Tensor({anchors, classes + 1}, 0.0);
  o.box_offsets = Tensor({anchors, 4}, 0.0);
  return o;
}

/// Rule-by-rule reference for anchor matching over the full IoU matrix.
std::vector<int> match_reference(const AnchorSet& anchors, const std::vector<Box>& gts, double thr) {
  const std::size_t na = anchors.size();
  std::vector<int> out(na, -1);
  std::vector<bool> claimed(na, false);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    double best = -1;
    std::size_t arg = na;
    for (std::size_t a = 0; a < na; ++a) {
      const double v = oracle::box_iou(gts[g], anchors.anchors[a]);
      if (!claimed[a] && v > best) {
        best = v;
        arg = a;
      }
    }
    claimed[arg] = true;
    out[arg] = static_cast<int>(g);
  }
  for (std::size_t a = 0; a < na; ++a) {
    if (claimed[a]) continue;
    double best = -1;
    int arg = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = oracle::box_iou(gts[g], anchors.anchors[a]);
      if (v > best) {
        best = v;
        arg = static_cast<int>(g);
      }
    }
    if (best >= thr) out[a] = arg;
  }
  return out;
}

}  // namespace

TEST_CASE("anchor construction") {
  SUBCASE("single cell") {
    const AnchorSet s = build_anchors(64, 64, {ScaleSpec{1, {20.0}, {1.0}}});
    REQUIRE(s.size() == 1);
    CHECK(s.anchors[0].cx() == doctest::Approx(32.0));
    CHECK(s.anchors[0].cy() == doctest::Approx(32.0));
    CHECK(s.anchors[0].w == doctest::Approx(20.0));
    CHECK(s.anchors[0].h == doctest::Approx(20.0));
  }
  SUBCASE("counting") {
    const AnchorSet s =
        build_anchors(64, 64, {ScaleSpec{4, {10.0}, {1.0, 2.0}}, ScaleSpec{2, {20.0}, {1.0, 2.0}}});
    CHECK(s.size() == 40);
  }
  SUBCASE("default layout") {
    const auto specs = default_scale_specs(64, 64);
    int expected = 0;
    for (int g : {8, 4, 2}) expected += g * g * 3;
    const AnchorSet s = build_anchors(64, 64, specs);
    CHECK(expected == 252);
    CHECK(static_cast<int>(s.size()) == expected);
    for (const Box& b : s.anchors) {
      CHECK(b.w > 0);
      CHECK(b.h > 0);
    }
  }
  SUBCASE("centers sit at cell centers") {
    const AnchorSet s = build_anchors(64, 64, {ScaleSpec{4, {8.0}, {1.0}}});
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        const Box& b = s.anchors[r * 4 + c];
        CHECK(b.cx() == doctest::Approx(16.0 * c + 8.0));
        CHECK(b.cy() == doctest::Approx(16.0 * r + 8.0));
      }
    }
  }
  SUBCASE("empty specs") {
    CHECK_THROWS_AS(build_anchors(64, 64, {}), Error);
  }
}

TEST_CASE("iou values") {
  CHECK(iou(Box{0, 0, 10, 10}, Box{0, 0, 10, 10}) == 1.0);
  CHECK(iou(Box{0, 0, 10, 10}, Box{10, 10, 5, 5}) == 0.0);
  CHECK(iou(Box{0, 0, 10, 10}, Box{5, 0, 10, 10}) == doctest::Approx(50.0 / 150.0).epsilon(1e-12));
  CHECK(iou(Box{3, 3, 0, 0}, Box{3, 3, 0, 0}) == 0.0);
}

TEST_CASE("iou is symmetric, bounded, and 1 only for identical boxes") {
  std::mt19937_64 g(1);
  for (int t = 0; t < 2000; ++t) {
    const Box a = grid_box(g, 40);
    const Box b = t % 7 == 0 ? a : grid_box(g, 40);
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK((v == 1.0) == (a == b));
  }
}

TEST_CASE("box encoding") {
  const Box anchor{10, 10, 10, 10};
  const Offsets zero = encode_box(anchor, anchor);
  for (double v : zero) CHECK(v == 0.0);

  const Offsets o = encode_box(Box{12, 10, 10, 10}, anchor, Variances{0.1, 0.2});
  CHECK(o[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(o[1] == doctest::Approx(0.0));
  CHECK(o[2] == doctest::Approx(0.0));
  CHECK(o[3] == doctest::Approx(0.0));

  std::mt19937_64 g(2);
  for (int t = 0; t < 1000; ++t) {
    const Box b = random_box(g, 100);
    const Box a = random_box(g, 100);
    const Box back = decode_box(encode_box(b, a), a);
    CHECK(oracle::close_rel(back.px, b.px, 1e-6, 1e-9));
    CHECK(oracle::close_rel(back.py, b.py, 1e-6, 1e-9));
    CHECK(oracle::close_rel(back.w, b.w, 1e-6));
    CHECK(oracle::close_rel(back.h, b.h, 1e-6));
  }
  CHECK_THROWS_AS(encode_box(Box{0, 0, 5, 5}, Box{0, 0, 0, 5}), Error);
  CHECK_THROWS_AS(decode_box(Offsets{0, 0, 0, 0}, Box{0, 0, 5, -1}), Error);
}

TEST_CASE("anchor matching") {
  const AnchorSet anchors = build_anchors(64, 64, default_scale_specs(64, 64));

  SUBCASE("exact overlap") {
    const int k = 37;
    const std::vector<Box> gts{anchors.anchors[k]};
    const std::vector<int> labels{2};
    const MatchResult m = match_anchors(anchors, gts, labels);
    CHECK(m.matched_gt[k] == 0);
    CHECK(m.target_class[k] == 2);
  }
  SUBCASE("no ground truth") {
    const MatchResult m = match_anchors(anchors, {}, {});
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      CHECK(m.matched_gt[a] == -1);
      CHECK(m.target_class[a] == 0);
    }
    CHECK(m.num_positive() == 0);
  }
  SUBCASE("best match below threshold stays positive") {
    const std::vector<Box> gts{Box{30, 30, 3, 3}};
    const std::vector<int> labels{1};
    double best = 0.0;
    for (const Box& a : anchors.anchors) best = std::max(best, oracle::box_iou(gts[0], a));
    REQUIRE(best < 0.5);
    const MatchResult m = match_anchors(anchors, gts, labels);
    const auto ref = match_reference(anchors, gts, 0.5);
    CHECK(m.matched_gt == ref);
    CHECK(m.num_positive() == 1);
  }
  SUBCASE("random instances agree with the reference and match every gt") {
    std::mt19937_64 g(3);
    for (int t = 0; t < 300; ++t) {
      std::vector<Box> gts;
      std::vector<int> labels;
      const int n = 1 + t % 4;
      for (int i = 0; i < n; ++i) {
        gts.push_back(t % 3 == 0 ? grid_box(g, 64) : random_box(g, 64, 4.0));
        labels.push_back(1 + i % 3);
      }
      const MatchResult m = match_anchors(anchors, gts, labels);
      CHECK(m.matched_gt == match_reference(anchors, gts, 0.5));
      for (int i = 0; i < n; ++i) {
        CHECK(std::count(m.matched_gt.begin(), m.matched_gt.end(), i) >= 1);
      }
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        if (m.matched_gt[a] < 0) {
          CHECK(m.target_class[a] == 0);
        } else {
          CHECK(m.target_class[a] == labels[m.matched_gt[a]]);
          const Offsets want = encode_box(gts[m.matched_gt[a]], anchors.anchors[a], anchors.variances);
          for (int j = 0; j < 4; ++j) CHECK(m.target_offsets[a][j] == want[j]);
        }
      }
    }
  }
}

TEST_CASE("localization loss values") {
  DetectorOutput out = make_output(3, 2);
  MatchResult m = manual_match(3, {1, 0, 0});
  CHECK(localization_loss(out, m) == 0.0);
  out.box_offsets[1] = 0.5;
  CHECK(localization_loss(out, m) == doctest::Approx(0.125).epsilon(1e-12));
  out.box_offsets[1] = 2.0;
  CHECK(localization_loss(out, m) == doctest::Approx(1.5).epsilon(1e-12));
  // Offsets of negatives do not count.
  out.box_offsets[5] = 9.0;
  CHECK(localization_loss(out, m) == doctest::Approx(1.5).epsilon(1e-12));
  const MatchResult none = manual_match(3, {0, 0, 0});
  CHECK(localization_loss(out, none) == 0.0);
}

TEST_CASE("classification loss values") {
  SUBCASE("perfect prediction") {
    DetectorOutput out = make_output(4, 3);
    const MatchResult m = manual_match(4, {2, 0, 0, 0});
    for (int a = 0; a < 4; ++a) out.class_logits[a * 4 + (a == 0 ? 2 : 0)] = 60.0;
    CHECK(classification_loss(out, m) <= 1e-7);
  }
  SUBCASE("uniform distribution over four classes") {
    const DetectorOutput out = make_output(5, 3);
    const MatchResult m = manual_match(5, {1, 0, 0, 0, 0});
    CHECK(classification_loss(out, m, 0.0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("mining keeps exactly the six hardest negatives") {
    std::mt19937_64 g(4);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int t = 0; t < 50; ++t) {
      DetectorOutput out = make_output(12, 2);
      for (double& v : out.class_logits.values()) v = n(g);
      const MatchResult m = manual_match(12, {1, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0});
      std::vector<std::pair<double, int>> neg;
      for (int a = 0; a < 12; ++a) {
        if (m.matched_gt[a] >= 0) continue;
        const double* row = out.class_logits.data() + a * 3;
        const double lse = std::log(std::exp(row[0]) + std::exp(row[1]) + std::exp(row[2]));
        neg.push_back({lse - row[0], a});
      }
      REQUIRE(neg.size() == 10);
      std::stable_sort(neg.begin(), neg.end(), [](auto& x, auto& y) { return x.first > y.first; });
      std::vector<int> want;
      for (int i = 0; i < 6; ++i) want.push_back(neg[i].second);
      std::vector<int> got = mine_hard_negatives(out, m, 3.0);
      std::sort(got.begin(), got.end());
      std::sort(want.begin(), want.end());
      CHECK(got == want);

      double expect = 0.0;
      for (int a : {0, 2}) {
        const double* row = out.class_logits.data() + a * 3;
        const double lse = std::log(std::exp(row[0]) + std::exp(row[1]) + std::exp(row[2]));
        expect += lse - row[m.target_class[a]];
      }
      for (int i = 0; i < 6; ++i) expect += neg[i].first;
      CHECK(classification_loss(out, m, 3.0) == doctest::Approx(expect / 2.0).epsilon(1e-10));
    }
  }
  SUBCASE("one negative when nothing is positive") {
    DetectorOutput out = make_output(6, 2);
    out.class_logits[3 * 3 + 1] = 5.0;
    const MatchResult m = manual_match(6, {0, 0, 0, 0, 0, 0});
    const auto mined = mine_hard_negatives(out, m, 3.0);
    REQUIRE(mined.size() == 1);
    CHECK(mined[0] == 3);
  }
}

TEST_CASE("losses are nonnegative and zero at perfect predictions") {
  std::mt19937_64 g(5);
  std::normal_distribution<double> n(0.0, 1.5);
  for (int t = 0; t < 200; ++t) {
    DetectorOutput out = make_output(10, 3);
    for (double& v : out.class_logits.values()) v = n(g);
    for (double& v : out.box_offsets.values()) v = n(g);
    std::vector<int> cls(10, 0);
    for (int a = 0; a < 10; ++a) cls[a] = (g() % 3 == 0) ? 1 + static_cast<int>(g() % 3) : 0;
    MatchResult m = manual_match(10, cls);
    for (int a = 0; a < 10; ++a) {
      for (int j = 0; j < 4; ++j) m.target_offsets[a][j] = n(g);
    }
    CHECK(localization_loss(out, m) >= 0.0);
    CHECK(classification_loss(out, m) >= 0.0);

    for (int a = 0; a < 10; ++a) {
      for (int j = 0; j < 4; ++j) out.box_offsets[a * 4 + j] = m.target_offsets[a][j];
      for (int c = 0; c < 4; ++c) out.class_logits[a * 4 + c] = c == m.target_class[a] ? 40.0 : 0.0;
    }
    CHECK(localization_loss(out, m) == 0.0);
    CHECK(classification_loss(out, m) <= 1e-7);
  }
}

TEST_CASE("analytic loss gradients match finite differences") {
  std::mt19937_64 g(6);
  std::normal_distribution<double> n(0.0, 1.0);
  int compared = 0;
  int skipped = 0;
  for (int t = 0; t < 40; ++t) {
    DetectorOutput out = make_output(9, 2);
    for (double& v : out.class_logits.values()) v = n(g);
    for (double& v : out.box_offsets.values()) v = 1.6 * n(g);
    MatchResult m = manual_match(9, {1, 0, 2, 0, 0, 0, 1, 0, 0});
    for (int a = 0; a < 9; ++a) {
      for (int j = 0; j < 4; ++j) m.target_offsets[a][j] = n(g);
    }
    const LossGrad lg = localization_loss_grad(out, m);
    const LossGrad cg = classification_loss_grad(out, m);
    CHECK(lg.value == doctest::Approx(localization_loss(out, m)).epsilon(1e-12));
    CHECK(cg.value == doctest::Approx(classification_loss(out, m)).epsilon(1e-12));
    for (std::size_t i = 0; i < out.box_offsets.size(); ++i) {
      const auto e = oracle::central_difference([&] { return localization_loss(out, m); }, out.box_offsets[i], 1e-5);
      if (!e.smooth) {
        ++skipped;
        continue;
      }
      ++compared;
      CHECK(oracle::close_rel(lg.d_offsets[i], e.value, 1e-3));
    }
    for (std::size_t i = 0; i < out.class_logits.size(); ++i) {
      const auto e =
          oracle::central_difference([&] { return classification_loss(out, m); }, out.class_logits[i], 1e-5);
      if (!e.smooth) {
        ++skipped;
        continue;
      }
      ++compared;
      CHECK(oracle::close_rel(cg.d_logits[i], e.value, 1e-3));
    }
  }
  CHECK(compared > 20 * skipped);
}

TEST_CASE("nms") {
  SUBCASE("duplicates") {
    const std::vector<Box> boxes{Box{5, 5, 10, 10}, Box{5, 5, 10, 10}};
    const auto kept = nms(boxes, {0.8, 0.9}, 0.45);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0] == 1);
  }
  SUBCASE("agrees with exhaustive subset search") {
    std::mt19937_64 g(7);
    for (int t = 0; t < 600; ++t) {
      const int n = 1 + t % 8;
      std::vector<Box> boxes;
      std::vector<double> scores;
      for (int i = 0; i < n; ++i) {
        boxes.push_back(grid_box(g, 30));
        scores.push_back((g() % 5) / 5.0 + 0.1);
      }
      CHECK(nms(boxes, scores, 0.45) == oracle::nms_bruteforce(boxes, scores, 0.45));
    }
  }
}

TEST_CASE("detect") {
  SUBCASE("all background") {
    const AnchorSet anchors = build_anchors(64, 64, {ScaleSpec{1, {20.0}, {1.0}}});
    DetectorOutput out = make_output(1, 3);
    out.class_logits[0] = 80.0;
    CHECK(detect(out, anchors).empty());
  }
  SUBCASE("matches a reference pipeline") {
    const AnchorSet anchors = build_anchors(64, 64, {ScaleSpec{2, {24.0}, {1.0, 2.0}}});
    std::mt19937_64 g(8);
    std::normal_distribution<double> n(0.0, 1.5);
    for (int t = 0; t < 200; ++t) {
      DetectorOutput out = make_output(8, 2);
      for (double& v : out.class_logits.values()) v = n(g);
      for (double& v : out.box_offsets.values()) v = 0.6 * n(g);
      DetectParams p;
      p.conf_threshold = 0.2;
      p.top_k = 1 + t % 6;
      const DetectionSet got = detect(out, anchors, p);

      DetectionSet want;
      for (int c = 1; c <= 2; ++c) {
        std::vector<Box> boxes;
        std::vector<double> scores;
        for (int a = 0; a < 8; ++a) {
          const double* row = out.class_logits.data() + a * 3;
          const double s = std::exp(row[0]) + std::exp(row[1]) + std::exp(row[2]);
          const double conf = std::exp(row[c]) / s;
          if (conf < p.conf_threshold) continue;
          const Box& an = anchors.anchors[a];
          const double* o = out.box_offsets.data() + a * 4;
          const double cx = an.cx() + o[0] * 0.1 * an.w;
          const double cy = an.cy() + o[1] * 0.1 * an.h;
          const double w = an.w * std::exp(o[2] * 0.2);
          const double h = an.h * std::exp(o[3] * 0.2);
          const double x0 = std::clamp(cx - w / 2, 0.0, 64.0);
          const double y0 = std::clamp(cy - h / 2, 0.0, 64.0);
          const double x1 = std::clamp(cx + w / 2, 0.0, 64.0);
          const double y1 = std::clamp(cy + h / 2, 0.0, 64.0);
          boxes.push_back(Box{x0, y0, x1 - x0, y1 - y0});
          scores.push_back(conf);
        }
        for (int i : oracle::nms_bruteforce(boxes, scores, p.nms_iou)) want.push_back({boxes[i], c, scores[i]});
      }
      std::stable_sort(want.begin(), want.end(),
                       [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
      if (static_cast<int>(want.size()) > p.top_k) want.resize(p.top_k);

      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].label == want[i].label);
        CHECK(got[i].confidence == doctest::Approx(want[i].confidence).epsilon(1e-12));
        CHECK(got[i].box.px == doctest::Approx(want[i].box.px).epsilon(1e-9));
        CHECK(got[i].box.w == doctest::Approx(want[i].box.w).epsilon(1e-9));
        CHECK(got[i].confidence >= 0.0);
        CHECK(got[i].confidence <= 1.0);
        CHECK(got[i].box.px >= 0.0);
        CHECK(got[i].box.right() <= 64.0 + 1e-9);
      }
    }
  }
}

TEST_CASE("detector forward contract") {
  ModelConfig cfg;
  cfg.variant = Variant::Standard;
  cfg.seed = 3;
  const Detector model(cfg);
  ShapesParams sp;
  sp.count = 1;
  sp.seed = 2;
  const Dataset d = generate_shapes_dataset(sp);
  const Tensor batch = make_batch({&d.samples[0].pixels});

  const ForwardResult a = model.forward(Var::constant(batch));
  const ForwardResult b = model.forward(Var::constant(batch));
  CHECK(a.predictions.value() == b.predictions.value());
  CHECK(a.predictions.value().dim(1) == static_cast<int>(model.anchors().size()));
  CHECK(a.predictions.value().dim(2) == cfg.num_classes + 5);

  Tensor wrong({1, 3, 32, 32}, 0.0);
  CHECK_THROWS_AS(model.forward(Var::constant(wrong)), Error);
}

TEST_CASE("detection loss gradient in pixels matches finite differences") {
  for (Variant v : {Variant::Standard, Variant::RobustDetCfr}) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.seed = 5;
    const Detector model(cfg);
    ShapesParams sp;
    sp.count = 1;
    sp.seed = 9;
    const Dataset d = generate_shapes_dataset(sp);
    const ImageSample* s = &d.samples[0];
    std::vector<MatchResult> matches{match_anchors(model.anchors(), s->boxes, s->labels)};
    Tensor x = make_batch({&s->pixels});
    const auto loss = [&] {
      return multibox_loss(model.forward(Var::constant(x)).predictions, matches, cfg.num_classes, LossKind::Det)
          .value()[0];
    };
    Var xv = Var::leaf(x);
    Var l = multibox_loss(model.forward(xv).predictions, matches, cfg.num_classes, LossKind::Det);
    backward(l);
    const Tensor grad = xv.grad();
    std::mt19937_64 g(10);
    int compared = 0;
    for (int t = 0; t < 12 && compared < 5; ++t) {
      const std::size_t i = g() % x.size();
      const auto e = oracle::central_difference(loss, x[i], 0.1);
      if (!e.smooth) continue;
      ++compared;
      CHECK(oracle::close_rel(grad[i], e.value, 1e-3));
    }
    CHECK(compared == 5);
  }
}
