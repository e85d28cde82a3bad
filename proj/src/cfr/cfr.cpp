// SPDX-License-Identifier: Apache-2.0
#include "cfr/cfr.hpp"

#include <cmath>

#include "nn/ops.hpp"
#include "util/error.hpp"

namespace rdet {

namespace {

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = stddev * rng.normal();
  return t;
}

}  // namespace

CfrNetwork make_cfr(int channels, int upsample_blocks, Rng& rng) {
  require(channels > 0 && upsample_blocks >= 0, ErrorKind::Parameter, "bad CFR configuration");
  CfrNetwork net;
  net.channels = channels;
  // Mean head starts at the identity so a pretrained backbone keeps its features.
  Tensor mu_w({channels, channels, 1, 1}, 0.0);
  for (int c = 0; c < channels; ++c) mu_w[static_cast<std::size_t>(c) * channels + c] = 1.0;
  for (double& v : mu_w.values()) v += 0.01 * rng.normal();
  net.mu_weight = Var::leaf(std::move(mu_w));
  net.mu_bias = Var::leaf(Tensor({channels}, 0.0));
  net.logvar_weight = Var::leaf(normal_init({channels, channels, 1, 1}, 0.01, rng));
  net.logvar_bias = Var::leaf(Tensor({channels}, -4.0));

  int in = channels;
  for (int i = 0; i < upsample_blocks; ++i) {
    const int out = std::max(8, in / 2);
    net.decoder_weights.push_back(Var::leaf(normal_init({in, out, 2, 2}, std::sqrt(2.0 / in), rng)));
    net.decoder_biases.push_back(Var::leaf(Tensor({out}, 0.0)));
    net.decoder_strides.push_back(2);
    in = out;
  }
  net.decoder_weights.push_back(Var::leaf(normal_init({in, 3, 1, 1}, std::sqrt(1.0 / in), rng)));
  net.decoder_biases.push_back(Var::leaf(Tensor({3}, 0.5)));
  net.decoder_strides.push_back(1);
  return net;
}

CfrEncoding cfr_encode(const CfrNetwork& net, const Var& features) {
  require(features.value().rank() == 4 && features.value().dim(1) == net.channels,
          ErrorKind::Parameter,
          "CFR input must have " + std::to_string(net.channels) + " channels, got " +
              shape_str(features.shape()));
  return CfrEncoding{ops::conv2d(features, net.mu_weight, net.mu_bias, 1, 0),
                     ops::conv2d(features, net.logvar_weight, net.logvar_bias, 1, 0)};
}

GaussianFeature to_gaussian(const CfrEncoding& enc) {
  GaussianFeature g{enc.mu.value(), enc.logvar.value()};
  for (double& v : g.sigma.values()) v = std::exp(0.5 * v);
  return g;
}

Tensor sample_feature(const GaussianFeature& g, Mode mode, Rng& noise) {
  require(g.mu.same_shape(g.sigma), ErrorKind::Parameter, "mu and sigma shapes differ");
  if (mode == Mode::Eval) return g.mu;
  Tensor z = g.mu;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += g.sigma[i] * noise.normal();
  return z;
}

Var sample_feature(const CfrEncoding& enc, Mode mode, Rng* noise) {
  if (mode == Mode::Eval) return enc.mu;
  require(noise != nullptr, ErrorKind::Parameter, "training-mode sampling needs a noise source");
  Tensor eps(enc.mu.shape());
  for (double& v : eps.values()) v = noise->normal();
  const Var sigma = ops::exp(ops::scale(enc.logvar, 0.5));
  return ops::add(enc.mu, ops::mul(sigma, Var::constant(std::move(eps))));
}

Var reconstruct(const CfrNetwork& net, const Var& z) {
  require(z.value().rank() == 4 && z.value().dim(1) == net.channels, ErrorKind::Parameter,
          "reconstruct: feature shape " + shape_str(z.shape()) + " does not match the split point");
  Var h = z;
  for (std::size_t i = 0; i < net.decoder_weights.size(); ++i) {
    h = ops::conv_transpose2d(h, net.decoder_weights[i], net.decoder_biases[i],
                              net.decoder_strides[i], 0);
    if (i + 1 < net.decoder_weights.size()) h = ops::relu(h);
  }
  return h;
}

double reconstruction_loss(const Tensor& recon, const Tensor& target) {
  require(recon.same_shape(target) && recon.size() > 0, ErrorKind::Parameter,
          "reconstruction_loss: shape mismatch " + shape_str(recon.shape()) + " vs " +
              shape_str(target.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double d = recon[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(recon.size());
}

Var reconstruction_loss(const Var& recon, const Tensor& target) {
  const double value = reconstruction_loss(recon.value(), target);
  auto residual = std::make_shared<Tensor>(recon.value());
  for (std::size_t i = 0; i < residual->size(); ++i) (*residual)[i] -= target[i];
  return make_node(Tensor({1}, value), {recon}, [residual](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const double k = 2.0 * self.grad[0] / static_cast<double>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (*residual)[i];
  });
}

double kld_loss(const GaussianFeature& g) {
  require(g.mu.same_shape(g.sigma) && g.count() > 0, ErrorKind::Parameter,
          "kld_loss: mu and sigma shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < g.count(); ++i) {
    const double var = g.sigma[i] * g.sigma[i];
    s += -std::log(var) + g.mu[i] * g.mu[i] + var - 1.0;
  }
  return s / (2.0 * static_cast<double>(g.count()));
}

Var kld_loss(const CfrEncoding& enc) {
  const Tensor& mu = enc.mu.value();
  const Tensor& lv = enc.logvar.value();
  require(mu.same_shape(lv) && mu.rank() == 4, ErrorKind::Parameter, "kld_loss: shape mismatch");
  const double total = static_cast<double>(mu.size());
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) s += -lv[i] + mu[i] * mu[i] + std::exp(lv[i]) - 1.0;
  // Every image has the same element count, so the mean of per-image terms
  // equals the batch-wide mean.
  const double value = s / (2.0 * total);
  return make_node(Tensor({1}, value), {enc.mu, enc.logvar}, [total](Node& self) {
    Node& m = *self.parents[0];
    Node& l = *self.parents[1];
    const double k = self.grad[0] / (2.0 * total);
    if (m.requires_grad) {
      Tensor& g = m.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * 2.0 * m.value[i];
    }
    if (l.requires_grad) {
      Tensor& g = l.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (std::exp(l.value[i]) - 1.0);
    }
  });
}

}  // namespace rdet
