// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations and helpers shared by the unit and
// acceptance suites. Nothing here calls the library code it is compared with.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "detection/box.hpp"
#include "detection/detect.hpp"
#include "evaluation/evaluate.hpp"
#include "nn/tensor.hpp"

namespace oracle {

inline double box_iou(const rdet::Box& a, const rdet::Box& b) {
  const double ix = std::max(0.0, std::min(a.px + a.w, b.px + b.w) - std::max(a.px, b.px));
  const double iy = std::max(0.0, std::min(a.py + a.h, b.py + b.h) - std::max(a.py, b.py));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 && inter > 0.0 ? inter / uni : 0.0;
}

/// Direct nested-loop cross-correlation of one (C,H,W) image with an
/// (O,C,k,k) kernel and (O) bias.
inline std::vector<double> conv_direct(const std::vector<double>& x, int c, int h, int w,
                                       const std::vector<double>& k, const std::vector<double>& b,
                                       int o, int ks, int stride, int pad, int& oh, int& ow) {
  oh = (h + 2 * pad - ks) / stride + 1;
  ow = (w + 2 * pad - ks) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(o) * oh * ow, 0.0);
  for (int oc = 0; oc < o; ++oc) {
    for (int r = 0; r < oh; ++r) {
      for (int q = 0; q < ow; ++q) {
        double acc = b[oc];
        for (int ic = 0; ic < c; ++ic) {
          for (int u = 0; u < ks; ++u) {
            for (int v = 0; v < ks; ++v) {
              const int yy = r * stride - pad + u;
              const int xx = q * stride - pad + v;
              if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
              acc += k[((static_cast<std::size_t>(oc) * c + ic) * ks + u) * ks + v] *
                     x[(static_cast<std::size_t>(ic) * h + yy) * w + xx];
            }
          }
        }
        y[(static_cast<std::size_t>(oc) * oh + r) * ow + q] = acc;
      }
    }
  }
  return y;
}

/// KL(P || M) written out term by term with 0 log 0 = 0.
inline double kl(const std::vector<double>& p, const std::vector<double>& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * (std::log(p[i]) - std::log(m[i]));
  }
  return s;
}

inline double js(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl(p, m) + 0.5 * kl(q, m);
}

/// NMS by exhaustive subset search: the kept set S is the unique subset in
/// which a box belongs to S exactly when no earlier-ranked member of S
/// overlaps it above the threshold. Returns kept indices in rank order.
inline std::vector<int> nms_bruteforce(const std::vector<rdet::Box>& boxes,
                                       const std::vector<double>& scores, double thr) {
  const int n = static_cast<int>(boxes.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> rank(n);
  for (int i = 0; i < n; ++i) rank[order[i]] = i;
  std::optional<std::uint32_t> found;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      bool suppressed = false;
      for (int j = 0; j < n; ++j) {
        if ((mask >> j & 1u) && rank[j] < rank[i] && box_iou(boxes[i], boxes[j]) > thr) suppressed = true;
      }
      const bool in = mask >> i & 1u;
      if (in == suppressed) ok = false;
    }
    if (ok) {
      found = mask;
      break;
    }
  }
  std::vector<int> kept;
  for (int idx : order) {
    if (*found >> idx & 1u) kept.push_back(idx);
  }
  return kept;
}

/// AP for one class by exhaustive enumeration of detection-to-gt
/// assignments. Detections are ranked by descending confidence (stable in
/// image then insertion order). The accepted assignment is the one where
/// every detection holds the highest-IoU gt (lowest index on ties) among
/// those not held by higher-ranked detections, provided that IoU reaches the
/// threshold, and holds nothing otherwise.
struct ApOracle {
  double ap = 0.0;
  std::vector<bool> tp;  // in rank order
  std::vector<double> precision;
  std::vector<double> recall;
};

inline ApOracle ap_bruteforce(const std::vector<rdet::DetectionSet>& dets,
                              const std::vector<rdet::GroundTruth>& gts, int label, double thr,
                              bool eleven_point = false) {
  struct Cand {
    double conf;
    int image;
    rdet::Box box;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    for (const auto& d : dets[i]) {
      if (d.label == label) cands.push_back({d.confidence, static_cast<int>(i), d.box});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.conf > b.conf; });
  struct G {
    int image;
    rdet::Box box;
  };
  std::vector<G> gl;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    for (std::size_t g = 0; g < gts[i].boxes.size(); ++g) {
      if (gts[i].labels[g] == label) gl.push_back({static_cast<int>(i), gts[i].boxes[g]});
    }
  }
  const int nd = static_cast<int>(cands.size());
  const int ng = static_cast<int>(gl.size());

  auto valid = [&](const std::vector<int>& a) {
    std::vector<bool> held(ng, false);
    for (int d = 0; d < nd; ++d) {
      int best = -1;
      double best_iou = -1.0;
      for (int g = 0; g < ng; ++g) {
        if (held[g] || gl[g].image != cands[d].image) continue;
        const double v = box_iou(cands[d].box, gl[g].box);
        if (v > best_iou) {
          best_iou = v;
          best = g;
        }
      }
      const int want = best >= 0 && best_iou >= thr ? best : -1;
      if (a[d] != want) return false;
      if (want >= 0) held[want] = true;
    }
    return true;
  };

  std::vector<int> assign(nd, -1);
  std::optional<std::vector<int>> chosen;
  int solutions = 0;
  std::function<void(int, std::vector<bool>&)> rec = [&](int d, std::vector<bool>& used) {
    if (d == nd) {
      if (valid(assign)) {
        ++solutions;
        chosen = assign;
      }
      return;
    }
    assign[d] = -1;
    rec(d + 1, used);
    for (int g = 0; g < ng; ++g) {
      if (used[g]) continue;
      used[g] = true;
      assign[d] = g;
      rec(d + 1, used);
      used[g] = false;
    }
    assign[d] = -1;
  };
  std::vector<bool> used(ng, false);
  rec(0, used);

  ApOracle out;
  if (solutions != 1) {
    out.ap = std::nan("");
    return out;
  }
  int tp = 0;
  for (int d = 0; d < nd; ++d) {
    const bool hit = (*chosen)[d] >= 0;
    tp += hit ? 1 : 0;
    out.tp.push_back(hit);
    out.precision.push_back(static_cast<double>(tp) / (d + 1));
    out.recall.push_back(ng > 0 ? static_cast<double>(tp) / ng : 0.0);
  }
  if (ng == 0 || nd == 0) return out;
  if (eleven_point) {
    double s = 0.0;
    for (int t = 0; t <= 10; ++t) {
      double best = 0.0;
      for (int d = 0; d < nd; ++d) {
        if (out.recall[d] >= t / 10.0) best = std::max(best, out.precision[d]);
      }
      s += best;
    }
    out.ap = s / 11.0;
    return out;
  }
  // Every rank where recall rises contributes its recall step times the best
  // precision achieved at that recall or beyond.
  double prev = 0.0;
  for (int d = 0; d < nd; ++d) {
    if (out.recall[d] == prev) continue;
    double best = 0.0;
    for (int j = d; j < nd; ++j) best = std::max(best, out.precision[j]);
    out.ap += (out.recall[d] - prev) * best;
    prev = out.recall[d];
  }
  return out;
}

/// Smooth-L1 with breakpoint 1.
inline double smooth_l1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

/// Relative agreement with a small absolute floor for values near zero.
inline bool close_rel(double a, double b, double rel, double abs_floor = 1e-8) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

/// Central difference of f at x along coordinate i with step h; the second
/// estimate at h/2 flags kinks.
struct FdEstimate {
  double value = 0.0;
  bool smooth = true;
};

inline FdEstimate central_difference(const std::function<double()>& f, double& coord, double h,
                                     double kink_tol = 1e-2) {
  const double orig = coord;
  coord = orig + h;
  const double fp = f();
  coord = orig - h;
  const double fm = f();
  coord = orig + 0.5 * h;
  const double fp2 = f();
  coord = orig - 0.5 * h;
  const double fm2 = f();
  coord = orig;
  const double d1 = (fp - fm) / (2.0 * h);
  const double d2 = (fp2 - fm2) / h;
  FdEstimate e;
  e.value = d2;
  e.smooth = close_rel(d1, d2, kink_tol, 1e-9);
  return e;
}

}  // namespace oracle
