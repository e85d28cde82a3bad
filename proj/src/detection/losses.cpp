// SPDX-License-Identifier: Apache-2.0
#include "detection/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "util/error.hpp"

namespace rdet {

namespace {

// log-sum-exp of one logit row and its softmax.
double log_softmax_row(const double* logits, int width, double* probs) {
  double mx = logits[0];
  for (int c = 1; c < width; ++c) mx = std::max(mx, logits[c]);
  double s = 0.0;
  for (int c = 0; c < width; ++c) s += (probs[c] = std::exp(logits[c] - mx));
  for (int c = 0; c < width; ++c) probs[c] /= s;
  return mx + std::log(s);
}

void check_shapes(const DetectorOutput& out, const MatchResult& match) {
  require(out.class_logits.rank() == 2 && out.box_offsets.rank() == 2 &&
              out.box_offsets.dim(1) == 4 && out.class_logits.dim(0) == out.box_offsets.dim(0),
          ErrorKind::Parameter, "detector output has inconsistent shapes");
  require(match.matched_gt.size() == static_cast<std::size_t>(out.num_anchors()),
          ErrorKind::Parameter, "match result does not cover every anchor");
}

}  // namespace

DetectorOutput output_row(const Tensor& rows, int n, int num_classes) {
  require(rows.rank() == 3 && rows.dim(2) == num_classes + 5, ErrorKind::Parameter,
          "prediction rows must be (N, A, C+5)");
  const int anchors = rows.dim(1);
  const int k = rows.dim(2);
  DetectorOutput out{Tensor({anchors, num_classes + 1}), Tensor({anchors, 4})};
  const double* src = rows.data() + static_cast<std::size_t>(n) * anchors * k;
  for (int a = 0; a < anchors; ++a) {
    for (int c = 0; c <= num_classes; ++c) out.class_logits[static_cast<std::size_t>(a) * (num_classes + 1) + c] = src[a * k + c];
    for (int j = 0; j < 4; ++j) out.box_offsets[static_cast<std::size_t>(a) * 4 + j] = src[a * k + num_classes + 1 + j];
  }
  return out;
}

double smooth_l1(double d) {
  const double ad = std::abs(d);
  return ad < 1.0 ? 0.5 * d * d : ad - 0.5;
}

std::vector<int> mine_hard_negatives(const DetectorOutput& out, const MatchResult& match,
                                     double neg_pos_ratio) {
  check_shapes(out, match);
  const int anchors = out.num_anchors();
  const int width = out.num_classes() + 1;
  std::vector<double> probs(width);
  std::vector<std::pair<double, int>> candidates;
  for (int a = 0; a < anchors; ++a) {
    if (match.matched_gt[a] >= 0) continue;
    const double* row = out.class_logits.data() + static_cast<std::size_t>(a) * width;
    const double lse = log_softmax_row(row, width, probs.data());
    candidates.emplace_back(lse - row[0], a);
  }
  const int pos = match.num_positive();
  const auto cap = pos == 0 ? std::size_t{1}
                            : static_cast<std::size_t>(std::floor(neg_pos_ratio * pos));
  const std::size_t keep = std::min(cap, candidates.size());
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  std::vector<int> out_idx;
  out_idx.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out_idx.push_back(candidates[i].second);
  return out_idx;
}

LossGrad localization_loss_grad(const DetectorOutput& out, const MatchResult& match) {
  check_shapes(out, match);
  LossGrad r{0.0, Tensor(out.class_logits.shape()), Tensor(out.box_offsets.shape())};
  const double norm = std::max(1, match.num_positive());
  for (int a = 0; a < out.num_anchors(); ++a) {
    if (match.matched_gt[a] < 0) continue;
    for (int j = 0; j < 4; ++j) {
      const double d = out.box_offsets[static_cast<std::size_t>(a) * 4 + j] - match.target_offsets[a][j];
      r.value += smooth_l1(d);
      r.d_offsets[static_cast<std::size_t>(a) * 4 + j] = (std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0)) / norm;
    }
  }
  r.value /= norm;
  return r;
}

double localization_loss(const DetectorOutput& out, const MatchResult& match) {
  return localization_loss_grad(out, match).value;
}

LossGrad classification_loss_grad(const DetectorOutput& out, const MatchResult& match,
                                  double neg_pos_ratio) {
  check_shapes(out, match);
  const int width = out.num_classes() + 1;
  LossGrad r{0.0, Tensor(out.class_logits.shape()), Tensor(out.box_offsets.shape())};
  const double norm = std::max(1, match.num_positive());
  std::vector<int> selected;
  for (int a = 0; a < out.num_anchors(); ++a) {
    if (match.matched_gt[a] >= 0) selected.push_back(a);
  }
  const std::vector<int> negatives = mine_hard_negatives(out, match, neg_pos_ratio);
  selected.insert(selected.end(), negatives.begin(), negatives.end());
  std::vector<double> probs(width);
  for (int a : selected) {
    const double* row = out.class_logits.data() + static_cast<std::size_t>(a) * width;
    const int target = match.target_class[a];
    const double lse = log_softmax_row(row, width, probs.data());
    r.value += lse - row[target];
    double* g = r.d_logits.data() + static_cast<std::size_t>(a) * width;
    for (int c = 0; c < width; ++c) g[c] = (probs[c] - (c == target ? 1.0 : 0.0)) / norm;
  }
  r.value /= norm;
  return r;
}

double classification_loss(const DetectorOutput& out, const MatchResult& match,
                           double neg_pos_ratio) {
  return classification_loss_grad(out, match, neg_pos_ratio).value;
}

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::Cls: return "cls";
    case LossKind::Loc: return "loc";
    case LossKind::Det: return "det";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "cls") return LossKind::Cls;
  if (name == "loc") return LossKind::Loc;
  if (name == "det") return LossKind::Det;
  fail(ErrorKind::Parameter, "unknown loss kind '" + name + "' (expected cls, loc or det)");
}

Var multibox_loss(const Var& rows, const std::vector<MatchResult>& matches, int num_classes,
                  LossKind kind, double neg_pos_ratio) {
  const Tensor& pred = rows.value();
  require(pred.rank() == 3 && static_cast<std::size_t>(pred.dim(0)) == matches.size(),
          ErrorKind::Parameter, "multibox_loss: one match result per image required");
  const int n_batch = pred.dim(0);
  const int anchors = pred.dim(1);
  const int k = pred.dim(2);
  Tensor values({n_batch});
  auto grads = std::make_shared<Tensor>(pred.shape(), 0.0);
  for (int n = 0; n < n_batch; ++n) {
    const DetectorOutput out = output_row(pred, n, num_classes);
    double v = 0.0;
    double* g = grads->data() + static_cast<std::size_t>(n) * anchors * k;
    if (kind != LossKind::Loc) {
      const LossGrad cls = classification_loss_grad(out, matches[n], neg_pos_ratio);
      v += cls.value;
      for (int a = 0; a < anchors; ++a) {
        for (int c = 0; c <= num_classes; ++c) g[a * k + c] += cls.d_logits[static_cast<std::size_t>(a) * (num_classes + 1) + c];
      }
    }
    if (kind != LossKind::Cls) {
      const LossGrad loc = localization_loss_grad(out, matches[n]);
      v += loc.value;
      for (int a = 0; a < anchors; ++a) {
        for (int j = 0; j < 4; ++j) g[a * k + num_classes + 1 + j] += loc.d_offsets[static_cast<std::size_t>(a) * 4 + j];
      }
    }
    values[n] = v;
  }
  return make_node(std::move(values), {rows}, [grads, anchors, k](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& dst = in.grad_buffer();
    const std::size_t per = static_cast<std::size_t>(anchors) * k;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += self.grad[i / per] * (*grads)[i];
  });
}

}  // namespace rdet
