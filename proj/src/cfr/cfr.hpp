// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "nn/autograd.hpp"
#include "nn/mode.hpp"
#include "util/rng.hpp"

namespace rdet {

/// Diagonal Gaussian over a feature map; sigma is a standard deviation.
struct GaussianFeature {
  Tensor mu;
  Tensor sigma;

  std::size_t count() const { return mu.size(); }
};

/// 1x1 mean / log-variance heads at the split point and the upsampling decoder.
struct CfrNetwork {
  Var mu_weight, mu_bias;
  Var logvar_weight, logvar_bias;
  std::vector<Var> decoder_weights;  // transposed-convolution kernels (Cin, Cout, k, k)
  std::vector<Var> decoder_biases;
  std::vector<int> decoder_strides;
  int channels = 0;
};

/// `upsample_blocks` stride-2 transposed convolutions followed by a 1x1
/// projection to RGB.
CfrNetwork make_cfr(int channels, int upsample_blocks, Rng& rng);

/// Graph nodes of the predicted distribution; sigma = exp(logvar / 2).
struct CfrEncoding {
  Var mu;
  Var logvar;
};

CfrEncoding cfr_encode(const CfrNetwork& net, const Var& features);
GaussianFeature to_gaussian(const CfrEncoding& enc);

/// Train: mu + sigma * eps with eps ~ N(0, I) from `noise`; eval: mu itself.
Tensor sample_feature(const GaussianFeature& g, Mode mode, Rng& noise);
Var sample_feature(const CfrEncoding& enc, Mode mode, Rng* noise);

/// Decoder output (N,3,H,W) on the [0,1] pixel scale.
Var reconstruct(const CfrNetwork& net, const Var& z);

/// Mean squared error over all elements.
double reconstruction_loss(const Tensor& recon, const Tensor& target);
Var reconstruction_loss(const Var& recon, const Tensor& target);

/// sum_i (1/2N)(-log sigma_i^2 + mu_i^2 + sigma_i^2 - 1) over one feature map.
double kld_loss(const GaussianFeature& g);
/// Per-image KL term averaged over the batch, parameterised by log-variance.
Var kld_loss(const CfrEncoding& enc);

}  // namespace rdet
