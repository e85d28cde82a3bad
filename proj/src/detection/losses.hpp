// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "detection/anchors.hpp"
#include "nn/autograd.hpp"

namespace rdet {

/// Raw head output for one image: (A, C+1) logits with background at column 0,
/// and (A, 4) encoded offsets.
struct DetectorOutput {
  Tensor class_logits;
  Tensor box_offsets;

  int num_anchors() const { return class_logits.dim(0); }
  int num_classes() const { return class_logits.dim(1) - 1; }
};

/// Splits row n of a (N, A, C+1+4) prediction tensor into a DetectorOutput.
DetectorOutput output_row(const Tensor& rows, int n, int num_classes);

inline constexpr double kNegPosRatio = 3.0;

double smooth_l1(double d);

/// Loss value with gradients with respect to the logits and offsets.
struct LossGrad {
  double value = 0.0;
  Tensor d_logits;
  Tensor d_offsets;
};

/// Indices of the background anchors with the highest background
/// cross-entropy, at most ratio * #pos of them (1 when #pos = 0); ties keep
/// the lower anchor index first.
std::vector<int> mine_hard_negatives(const DetectorOutput& out, const MatchResult& match,
                                     double neg_pos_ratio);

/// Sum of smooth-L1 over the offsets of positive anchors, divided by max(1, #pos).
double localization_loss(const DetectorOutput& out, const MatchResult& match);
LossGrad localization_loss_grad(const DetectorOutput& out, const MatchResult& match);

/// Cross-entropy over positives and mined negatives, divided by max(1, #pos).
double classification_loss(const DetectorOutput& out, const MatchResult& match,
                           double neg_pos_ratio = kNegPosRatio);
LossGrad classification_loss_grad(const DetectorOutput& out, const MatchResult& match,
                                  double neg_pos_ratio = kNegPosRatio);

enum class LossKind { Cls, Loc, Det };

const char* loss_kind_name(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

/// Per-image detection loss over a (N, A, C+1+4) prediction node; returns (N).
Var multibox_loss(const Var& rows, const std::vector<MatchResult>& matches, int num_classes,
                  LossKind kind, double neg_pos_ratio = kNegPosRatio);

}  // namespace rdet
