// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "nn/autograd.hpp"
#include "util/rng.hpp"

namespace rdet {

/// M convolution kernels of identical shape with their biases.
struct KernelBank {
  Var weights;  // (M, O, C, k, k)
  Var biases;   // (M, O)

  int size() const { return weights.value().dim(0); }
  int out_channels() const { return weights.value().dim(1); }
  int in_channels() const { return weights.value().dim(2); }
  int kernel() const { return weights.value().dim(3); }
};

/// He-initialised bank. Every member starts as the same kernel, so a bank
/// mixed with any mixture initially behaves like one plain convolution.
KernelBank make_kernel_bank(int m, int out_channels, int in_channels, int kernel, Rng& rng);

/// Checks length M, non-negativity and unit sum within 1e-5.
void validate_mixture(std::span<const double> mixture, int m);

struct CombinedKernel {
  Tensor weight;  // (O, C, k, k)
  Tensor bias;    // (O)
};

/// Convex combination sum_i mixture_i * (kernel_i, bias_i).
CombinedKernel combine_kernels(const KernelBank& bank, std::span<const double> mixture);

/// Convolution of each image with the kernel its own mixture row selects;
/// `mixture` is (N, M). Differentiable in x, the bank and the mixture.
Var aaconv_forward(const Var& x, const KernelBank& bank, const Var& mixture, int stride, int pad);

}  // namespace rdet
