// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "attacks/pgd.hpp"
#include "model/detector.hpp"

namespace rdet {

/// Coefficients of beta * (L_det + a * L_aid) + b * L_re + c * L_kld.
struct LossWeights {
  double beta = 0.75;
  double a = 3.0;
  double b = 0.16;
  double c = 5.0;
};

void validate_loss_weights(const LossWeights& w);

/// Weighted sum of the four loss components. Throws a numeric error naming the
/// first non-finite component.
double total_loss(double l_det, double l_aid, double l_re, double l_kld, const LossWeights& w);

struct TrainConfig {
  Variant variant = Variant::Standard;
  int epochs = 10;          // adversarial epochs (clean epochs for the standard variant)
  int pretrain_epochs = 10; // clean epochs with a uniform mixture
  int batch_size = 32;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  AttackConfig attack{LossKind::Cls, 20, 8.0, 2.0, true, 0};
  LossWeights loss_weights;
  bool cfr_enabled = false;
  int num_kernels = 4;
  double margin = 0.6;
  bool augment = true;  // random horizontal flips
  std::uint64_t seed = 0;

  /// The variant actually trained: cfr_enabled upgrades robustdet to robustdet-cfr.
  Variant effective_variant() const;
};

void validate_train_config(const TrainConfig& cfg);

/// Flat `key = value` text; '#' starts a comment. Unknown keys, duplicate keys
/// and malformed values are parameter errors naming the line.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string serialize_train_config(const TrainConfig& cfg);

}  // namespace rdet
