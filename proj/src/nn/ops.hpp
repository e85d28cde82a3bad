// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "nn/autograd.hpp"

namespace rdet::ops {

struct ConvGeometry {
  int channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

// Raw lowering helpers, exposed for tests and for layers that manage their own
// buffers. `col` is (channels*kernel*kernel) x (out_h*out_w), row-major.
void im2col(const double* image, const ConvGeometry& g, double* col);
void col2im_add(const double* col, const ConvGeometry& g, double* image);

/// 2-D convolution. `weight` is (O,C,k,k) shared by the batch or (N,O,C,k,k)
/// per image; `bias` is (O) or (N,O) to match.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

/// Transposed convolution; `weight` is (C_in, C_out, k, k), `bias` (C_out).
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

/// Per-image convex mixing of a parameter bank: bank (M, ...) and mix (N, M)
/// give (N, ...), out_n = sum_i mix(n,i) * bank_i.
Var mix_bank(const Var& bank, const Var& mix);

Var relu(const Var& x);
Var global_avg_pool(const Var& x);
/// x (N,I), weight (O,I), bias (O) -> (N,O).
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Row-wise exponential normalisation of an (N,M) matrix.
Var softmax_rows(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double value);
Var exp(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);

/// Weighted sum of scalar nodes.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights);

/// Rearranges detection-head maps (N, A_s*K, g, g) into per-anchor rows
/// (N, total_anchors, K) in (scale, row, col, anchor) order.
Var anchor_rows(const std::vector<Var>& heads, const std::vector<int>& anchors_per_cell,
                int row_width);

}  // namespace rdet::ops
