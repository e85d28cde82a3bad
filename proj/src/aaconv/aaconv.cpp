// SPDX-License-Identifier: Apache-2.0
#include "aaconv/aaconv.hpp"

#include <cmath>

#include "nn/ops.hpp"
#include "util/error.hpp"

namespace rdet {

KernelBank make_kernel_bank(int m, int out_channels, int in_channels, int kernel, Rng& rng) {
  require(m >= 1, ErrorKind::Parameter, "kernel bank needs at least one kernel");
  const double stddev = std::sqrt(2.0 / (in_channels * kernel * kernel));
  Tensor single({out_channels, in_channels, kernel, kernel});
  for (double& v : single.values()) v = stddev * rng.normal();
  Tensor weights({m, out_channels, in_channels, kernel, kernel});
  for (int i = 0; i < m; ++i) {
    double* dst = weights.data() + single.size() * i;
    std::copy(single.values().begin(), single.values().end(), dst);
    // Members start apart so the mixture sees distinct kernels.
    if (m > 1) {
      for (std::size_t j = 0; j < single.size(); ++j) dst[j] += 0.5 * stddev * rng.normal();
    }
  }
  return KernelBank{Var::leaf(std::move(weights)), Var::leaf(Tensor({m, out_channels}, 0.0))};
}

void validate_mixture(std::span<const double> mixture, int m) {
  require(static_cast<int>(mixture.size()) == m, ErrorKind::Parameter,
          "mixture has " + std::to_string(mixture.size()) + " weights for a bank of " +
              std::to_string(m));
  double total = 0.0;
  for (double p : mixture) {
    require(std::isfinite(p) && p >= -1e-12, ErrorKind::Validation, "mixture weight is negative");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-5, ErrorKind::Validation,
          "mixture weights sum to " + std::to_string(total) + ", not 1");
}

CombinedKernel combine_kernels(const KernelBank& bank, std::span<const double> mixture) {
  const int m = bank.size();
  validate_mixture(mixture, m);
  const Tensor& w = bank.weights.value();
  const Tensor& b = bank.biases.value();
  const std::size_t w_item = w.size() / m;
  const std::size_t b_item = b.size() / m;
  Shape ws(w.shape().begin() + 1, w.shape().end());
  CombinedKernel out{Tensor(ws, 0.0), Tensor({bank.out_channels()}, 0.0)};
  for (int i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < w_item; ++j) out.weight[j] += mixture[i] * w[w_item * i + j];
    for (std::size_t j = 0; j < b_item; ++j) out.bias[j] += mixture[i] * b[b_item * i + j];
  }
  return out;
}

Var aaconv_forward(const Var& x, const KernelBank& bank, const Var& mixture, int stride, int pad) {
  const Tensor& mix = mixture.value();
  require(mix.rank() == 2 && mix.dim(1) == bank.size(), ErrorKind::Parameter,
          "aaconv: mixture must be (N, M) with M = " + std::to_string(bank.size()));
  require(x.value().rank() == 4 && x.value().dim(0) == mix.dim(0), ErrorKind::Parameter,
          "aaconv: one mixture row per image required");
  for (int n = 0; n < mix.dim(0); ++n) {
    validate_mixture(std::span<const double>(mix.data() + static_cast<std::size_t>(n) * mix.dim(1),
                                             static_cast<std::size_t>(mix.dim(1))),
                     bank.size());
  }
  const Var weights = ops::mix_bank(bank.weights, mixture);
  const Var biases = ops::mix_bank(bank.biases, mixture);
  return ops::conv2d(x, weights, biases, stride, pad);
}

}  // namespace rdet
