// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "data/dataset.hpp"
#include "detection/losses.hpp"
#include "model/detector.hpp"

namespace rdet {

/// PGD settings on the 0-255 pixel scale.
struct AttackConfig {
  LossKind loss_kind = LossKind::Cls;
  int steps = 20;
  double eps = 8.0;
  double alpha = 2.0;
  bool random_start = false;
  std::uint64_t seed = 0;
};

void validate_attack_config(const AttackConfig& cfg);

/// Clamp to [x - eps, x + eps], then to [0, 255].
Tensor project(const Tensor& x_adv, const Tensor& x, double eps);

/// Gradient of the attacked loss at the current iterate.
using GradientOracle = std::function<Tensor(const Tensor& x_adv)>;

/// Sign-gradient ascent with projection after every step. The random start
/// (uniform in [-eps, eps]) is drawn from `rng` only when steps > 0.
Tensor pgd_iterate(const Tensor& x, const GradientOracle& grad, const AttackConfig& cfg, Rng& rng);

/// Per-image loss of the chosen kind on a batch of rasters, differentiable in
/// the pixels. Runs the model in eval mode with the discriminator in the graph.
Var attack_loss(const Detector& model, const Var& images, const std::vector<MatchResult>& matches,
                LossKind kind);

std::vector<MatchResult> match_samples(const Detector& model,
                                       std::span<const ImageSample* const> samples);

/// Adversarial counterpart of one sample; the random start uses cfg.seed.
Tensor pgd_attack(const Detector& model, const ImageSample& sample, const AttackConfig& cfg);

/// Attacks a batch at once; image i uses seeds[i] for its random start and
/// gets the same result as pgd_attack with that seed.
Tensor pgd_attack_batch(const Detector& model, std::span<const ImageSample* const> samples,
                        const AttackConfig& cfg, std::span<const std::uint64_t> seeds);

/// Largest absolute pixel difference.
double linf_distance(const Tensor& a, const Tensor& b);

/// Writes each adversarial raster as a PNG under `dir` plus `attack.json`
/// recording the config and the achieved L-infinity distances. Returns the
/// sidecar path.
std::filesystem::path save_attack_artifacts(const std::vector<Tensor>& adversarial,
                                            const std::vector<const ImageSample*>& originals,
                                            const AttackConfig& cfg,
                                            const std::filesystem::path& dir);

}  // namespace rdet
