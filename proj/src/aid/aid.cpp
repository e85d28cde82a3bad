// SPDX-License-Identifier: Apache-2.0
#include "aid/aid.hpp"

#include <cmath>

#include "nn/ops.hpp"
#include "util/error.hpp"

namespace rdet {

namespace {

constexpr int kAidChannels[] = {3, 8, 16, 16, 16};

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / fan_in);
  for (double& v : t.values()) v = stddev * rng.normal();
  return t;
}

double xlogy_ratio(double x, double y) { return x > 0.0 ? x * std::log(x / y) : 0.0; }

std::span<const double> row(const Tensor& t, int r) {
  const auto width = static_cast<std::size_t>(t.dim(1));
  return {t.data() + width * r, width};
}

}  // namespace

AidNetwork make_aid(int mixture_size, Rng& rng) {
  require(mixture_size >= 1, ErrorKind::Parameter, "AID needs at least one output");
  AidNetwork net;
  for (int i = 0; i < 4; ++i) {
    const int in = kAidChannels[i];
    const int out = kAidChannels[i + 1];
    net.conv_weights.push_back(Var::leaf(he_normal({out, in, 3, 3}, in * 9, rng)));
    net.conv_biases.push_back(Var::leaf(Tensor({out}, 0.0)));
  }
  const int feat = kAidChannels[4];
  Tensor fc({mixture_size, feat});
  for (double& v : fc.values()) v = rng.normal() / std::sqrt(static_cast<double>(feat));
  net.fc_weight = Var::leaf(std::move(fc));
  net.fc_bias = Var::leaf(Tensor({mixture_size}, 0.0));
  return net;
}

Var aid_forward(const AidNetwork& net, const Var& images) {
  require(images.value().rank() == 4 && images.value().dim(1) == 3, ErrorKind::Parameter,
          "AID expects (N,3,H,W) images, got " + shape_str(images.shape()));
  require(images.value().dim(2) >= 16 && images.value().dim(3) >= 16, ErrorKind::Parameter,
          "AID input is smaller than 16x16");
  Var h = ops::scale(images, 1.0 / 255.0);
  for (std::size_t i = 0; i < net.conv_weights.size(); ++i) {
    h = ops::relu(ops::conv2d(h, net.conv_weights[i], net.conv_biases[i], 2, 1));
  }
  return ops::softmax_rows(ops::linear(ops::global_avg_pool(h), net.fc_weight, net.fc_bias));
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size() && !p.empty(), ErrorKind::Parameter,
          "js_divergence: distributions differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    s += 0.5 * xlogy_ratio(p[i], m) + 0.5 * xlogy_ratio(q[i], m);
  }
  return std::max(0.0, s);
}

std::vector<double> js_divergence_grad(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), ErrorKind::Parameter, "js_divergence: distributions differ in length");
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) g[i] = 0.5 * std::log(p[i] / (0.5 * (p[i] + q[i])));
  }
  return g;
}

bool usable_triplet_batch(std::span<const ImageType> types) {
  int clean = 0;
  int adv = 0;
  for (ImageType t : types) (t == ImageType::Clean ? clean : adv)++;
  return (clean >= 2 && adv >= 1) || (adv >= 2 && clean >= 1);
}

std::vector<Triplet> sample_triplets(std::span<const ImageType> types, Rng& rng) {
  std::vector<Triplet> out;
  const int n = static_cast<int>(types.size());
  for (int a = 0; a < n; ++a) {
    std::vector<int> same;
    std::vector<int> other;
    for (int j = 0; j < n; ++j) {
      if (j == a) continue;
      (types[j] == types[a] ? same : other).push_back(j);
    }
    if (same.empty() || other.empty()) continue;
    const int p = same[rng.uniform_int(0, static_cast<int>(same.size()) - 1)];
    const int q = other[rng.uniform_int(0, static_cast<int>(other.size()) - 1)];
    out.push_back(Triplet{a, p, q});
  }
  return out;
}

TripletLoss aid_triplet_loss(const Tensor& mixtures, std::span<const ImageType> types,
                             double margin, Rng& rng) {
  require(mixtures.rank() == 2 && static_cast<std::size_t>(mixtures.dim(0)) == types.size(),
          ErrorKind::Parameter, "triplet loss: one type label per mixture row required");
  require(margin > 0.0, ErrorKind::Parameter, "triplet margin must be positive");
  TripletLoss r;
  r.triplets = sample_triplets(types, rng);
  if (r.triplets.empty()) {
    r.no_triplets = true;
    return r;
  }
  for (const Triplet& t : r.triplets) {
    const double pre = js_divergence(row(mixtures, t.anchor), row(mixtures, t.positive)) -
                       js_divergence(row(mixtures, t.anchor), row(mixtures, t.negative)) + margin;
    r.value += std::max(0.0, pre);
  }
  r.value /= static_cast<double>(r.triplets.size());
  return r;
}

Var aid_triplet_loss(const Var& mixtures, const std::vector<Triplet>& triplets, double margin) {
  const Tensor& pi = mixtures.value();
  require(pi.rank() == 2, ErrorKind::Parameter, "triplet loss expects an (N,M) matrix");
  if (triplets.empty()) return Var::constant(Tensor({1}, 0.0));
  const int m = pi.dim(1);
  auto grad = std::make_shared<Tensor>(pi.shape(), 0.0);
  double value = 0.0;
  const double inv = 1.0 / static_cast<double>(triplets.size());
  for (const Triplet& t : triplets) {
    const auto a = row(pi, t.anchor);
    const auto p = row(pi, t.positive);
    const auto n = row(pi, t.negative);
    const double pre = js_divergence(a, p) - js_divergence(a, n) + margin;
    if (pre <= 0.0) continue;
    value += pre;
    const auto dap_a = js_divergence_grad(a, p);
    const auto dap_p = js_divergence_grad(p, a);
    const auto dan_a = js_divergence_grad(a, n);
    const auto dan_n = js_divergence_grad(n, a);
    for (int i = 0; i < m; ++i) {
      (*grad)[static_cast<std::size_t>(t.anchor) * m + i] += inv * (dap_a[i] - dan_a[i]);
      (*grad)[static_cast<std::size_t>(t.positive) * m + i] += inv * dap_p[i];
      (*grad)[static_cast<std::size_t>(t.negative) * m + i] -= inv * dan_n[i];
    }
  }
  return make_node(Tensor({1}, value * inv), {mixtures}, [grad](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * (*grad)[i];
  });
}

}  // namespace rdet
