// SPDX-License-Identifier: Apache-2.0
#include "attacks/pgd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "data/png_io.hpp"
#include "nn/ops.hpp"
#include "util/error.hpp"
#include "util/fs.hpp"

namespace rdet {

namespace {

Tensor pgd_steps(const Tensor& x, Tensor x_adv, const GradientOracle& grad, const AttackConfig& cfg) {
  for (int s = 0; s < cfg.steps; ++s) {
    const Tensor g = grad(x_adv);
    require(g.same_shape(x_adv), ErrorKind::Parameter, "gradient oracle returned the wrong shape");
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        fail(ErrorKind::Numeric, "non-finite input gradient at PGD step " + std::to_string(s) +
                                     ", element " + std::to_string(i));
      }
      const double sign = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      x_adv[i] += cfg.alpha * sign;
    }
    x_adv = project(x_adv, x, cfg.eps);
  }
  return x_adv;
}

void add_uniform_start(double* values, std::size_t count, double eps, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) values[i] += rng.uniform(-eps, eps);
}

bool uses_random_start(const AttackConfig& cfg) { return cfg.random_start && cfg.steps > 0; }

}  // namespace

void validate_attack_config(const AttackConfig& cfg) {
  require(cfg.steps >= 0, ErrorKind::Parameter, "attack steps must be non-negative");
  require(std::isfinite(cfg.eps) && cfg.eps >= 0.0, ErrorKind::Parameter,
          "attack eps must be non-negative");
  require(cfg.steps == 0 || (std::isfinite(cfg.alpha) && cfg.alpha > 0.0), ErrorKind::Parameter,
          "attack alpha must be positive when steps > 0");
  require(cfg.loss_kind != LossKind::Det, ErrorKind::Parameter, "attack loss must be cls or loc");
}

Tensor project(const Tensor& x_adv, const Tensor& x, double eps) {
  require(x_adv.same_shape(x), ErrorKind::Parameter,
          "project: shape mismatch " + shape_str(x_adv.shape()) + " vs " + shape_str(x.shape()));
  Tensor out = x_adv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(std::clamp(out[i], x[i] - eps, x[i] + eps), 0.0, 255.0);
  }
  return out;
}

Tensor pgd_iterate(const Tensor& x, const GradientOracle& grad, const AttackConfig& cfg, Rng& rng) {
  validate_attack_config(cfg);
  Tensor start = x;
  if (uses_random_start(cfg)) {
    add_uniform_start(start.data(), start.size(), cfg.eps, rng);
    start = project(start, x, cfg.eps);
  }
  return pgd_steps(x, std::move(start), grad, cfg);
}

Var attack_loss(const Detector& model, const Var& images, const std::vector<MatchResult>& matches,
                LossKind kind) {
  ForwardOptions opts;
  opts.mode = Mode::Eval;
  opts.mixture = MixtureSource::Discriminator;
  const ForwardResult r = model.forward(images, opts);
  return multibox_loss(r.predictions, matches, model.num_classes(), kind);
}

std::vector<MatchResult> match_samples(const Detector& model,
                                       std::span<const ImageSample* const> samples) {
  std::vector<MatchResult> out;
  out.reserve(samples.size());
  for (const ImageSample* s : samples) out.push_back(match_anchors(model.anchors(), s->boxes, s->labels));
  return out;
}

Tensor pgd_attack(const Detector& model, const ImageSample& sample, const AttackConfig& cfg) {
  const ImageSample* one[] = {&sample};
  const std::uint64_t seed[] = {cfg.seed};
  return batch_item(pgd_attack_batch(model, one, cfg, seed), 0);
}

Tensor pgd_attack_batch(const Detector& model, std::span<const ImageSample* const> samples,
                        const AttackConfig& cfg, std::span<const std::uint64_t> seeds) {
  validate_attack_config(cfg);
  require(!samples.empty(), ErrorKind::Parameter, "attack on an empty batch");
  require(seeds.size() == samples.size(), ErrorKind::Parameter, "one attack seed per image required");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i]->boxes.empty()) {
      fail(ErrorKind::AttackInapplicable,
           "image " + std::to_string(i) + " has no ground-truth boxes; the detection loss is undefined");
    }
  }
  std::vector<const Tensor*> rasters;
  for (const ImageSample* s : samples) rasters.push_back(&s->pixels);
  const Tensor x = make_batch(rasters);

  Tensor start = x;
  if (uses_random_start(cfg)) {
    const std::size_t per_image = x.size() / samples.size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      Rng rng(seeds[i]);
      add_uniform_start(start.data() + per_image * i, per_image, cfg.eps, rng);
    }
    start = project(start, x, cfg.eps);
  }
  if (cfg.steps == 0) return start;

  const std::vector<MatchResult> matches = match_samples(model, samples);
  const ParameterFreeze freeze(model);
  const GradientOracle oracle = [&](const Tensor& x_adv) {
    const Var input = Var::leaf(x_adv);
    backward(ops::sum(attack_loss(model, input, matches, cfg.loss_kind)));
    return input.grad();
  };
  return pgd_steps(x, std::move(start), oracle, cfg);
}

double linf_distance(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), ErrorKind::Parameter, "linf_distance: shape mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

std::filesystem::path save_attack_artifacts(const std::vector<Tensor>& adversarial,
                                            const std::vector<const ImageSample*>& originals,
                                            const AttackConfig& cfg,
                                            const std::filesystem::path& dir) {
  require(adversarial.size() == originals.size(), ErrorKind::Parameter,
          "one original per adversarial image required");
  nlohmann::json images = nlohmann::json::array();
  double worst = 0.0;
  double worst_saved = 0.0;
  for (std::size_t i = 0; i < adversarial.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "adv_%06zu.png", i);
    const RgbImage img = to_rgb(adversarial[i]);
    write_png(dir / name, img);
    const double d = linf_distance(adversarial[i], originals[i]->pixels);
    const double d_saved = linf_distance(from_rgb(img), originals[i]->pixels);
    worst = std::max(worst, d);
    worst_saved = std::max(worst_saved, d_saved);
    images.push_back({{"file", name}, {"linf", d}, {"linf_saved", d_saved}});
  }
  nlohmann::json doc = {
      {"config",
       {{"loss_kind", loss_kind_name(cfg.loss_kind)},
        {"steps", cfg.steps},
        {"eps", cfg.eps},
        {"alpha", cfg.alpha},
        {"random_start", cfg.random_start},
        {"seed", cfg.seed}}},
      {"max_linf", worst},
      {"max_linf_saved", worst_saved},
      {"images", images}};
  const auto path = dir / "attack.json";
  write_file_atomic(path, doc.dump(2) + "\n");
  return path;
}

}  // namespace rdet
