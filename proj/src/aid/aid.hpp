// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "nn/autograd.hpp"
#include "util/rng.hpp"

namespace rdet {

/// Adversarial image discriminator: four stride-2 3x3 convolutions with ReLU,
/// global average pooling, a linear layer and a softmax over M outputs.
struct AidNetwork {
  std::vector<Var> conv_weights;
  std::vector<Var> conv_biases;
  Var fc_weight;
  Var fc_bias;

  int mixture_size() const { return fc_weight.value().dim(0); }
};

AidNetwork make_aid(int mixture_size, Rng& rng);

/// Images (N,3,H,W) in [0,255] -> mixture weights (N,M) on the simplex.
Var aid_forward(const AidNetwork& net, const Var& images);

/// Jensen-Shannon divergence with natural logarithms, 0*log(0/q) = 0.
double js_divergence(std::span<const double> p, std::span<const double> q);

/// dJS/dp; dJS/dq follows by swapping arguments. Zero where p_i = 0.
std::vector<double> js_divergence_grad(std::span<const double> p, std::span<const double> q);

enum class ImageType { Clean, Adversarial };

struct Triplet {
  int anchor = 0;
  int positive = 0;
  int negative = 0;
};

/// One triplet per image that has both a same-type partner and an
/// opposite-type image; partners are drawn uniformly with `rng`.
std::vector<Triplet> sample_triplets(std::span<const ImageType> types, Rng& rng);

/// True when some type has at least two images and the other at least one.
bool usable_triplet_batch(std::span<const ImageType> types);

inline constexpr double kTripletMargin = 0.6;

struct TripletLoss {
  double value = 0.0;
  std::vector<Triplet> triplets;
  bool no_triplets = false;  // warning: nothing to train on
};

/// Mean over sampled triplets of [JS(a,p) - JS(a,n) + margin]_+ for a (N,M)
/// matrix of mixture rows.
TripletLoss aid_triplet_loss(const Tensor& mixtures, std::span<const ImageType> types,
                             double margin, Rng& rng);

/// Same hinge mean over fixed triplets as a graph node (scalar); zero when
/// `triplets` is empty.
Var aid_triplet_loss(const Var& mixtures, const std::vector<Triplet>& triplets, double margin);

}  // namespace rdet
