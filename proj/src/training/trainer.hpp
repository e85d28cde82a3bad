// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "aid/aid.hpp"
#include "data/dataset.hpp"
#include "training/checkpoint.hpp"

namespace rdet {

/// Graph nodes of every loss term for one combined batch.
struct LossTerms {
  Var l_det;  // mean over images of the per-image multibox loss
  Var l_aid;
  Var l_re;
  Var l_kld;
  Var total;
  bool no_triplets = false;
};

/// Runs the model in train mode on `images` (N,3,H,W) and assembles the
/// weighted objective. `recon_target` is the clean counterpart of every row
/// on the [0,1] scale; it is ignored when the model has no CFR branch.
/// `types` labels each row for the triplet loss (empty disables L_aid).
LossTerms training_losses(const Detector& model, const Var& images,
                          const std::vector<MatchResult>& matches, std::span<const ImageType> types,
                          const Tensor& recon_target, const TrainConfig& cfg, MixtureSource mixture,
                          std::uint64_t step_seed);

struct StepMetrics {
  std::int64_t step = 0;
  bool adversarial = false;
  LossKind attack_kind = LossKind::Cls;
  double l_det = 0.0;
  double l_aid = 0.0;
  double l_re = 0.0;
  double l_kld = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  int images = 0;      // rows in the combined batch
  int clean_only = 0;  // samples that could not be attacked
  bool no_triplets = false;
};

enum class StepKind { Clean, Adversarial };

/// PyTorch-style SGD: v = momentum * v + (g + wd * p); p -= lr * v. Parameters
/// that received no gradient are left alone.
void sgd_update(const Detector& model, OptimizerState& opt, double lr, double momentum,
                double weight_decay);

OptimizerState make_optimizer_state(const Detector& model);

Tensor flip_horizontal(const Tensor& chw);
ImageSample flip_horizontal(const ImageSample& sample);

/// One optimisation step. Adversarial steps attack every clean image (cls on
/// even step indices, loc on odd), then train on the clean images plus their
/// counterparts. Clean steps use a uniform mixture.
StepMetrics train_step(const Detector& model, OptimizerState& opt,
                       std::span<const ImageSample* const> batch, const TrainConfig& cfg,
                       StepKind kind, std::int64_t step_index, std::uint64_t step_seed);

std::string metrics_json_line(const StepMetrics& m);

inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kMetricsFile = "metrics.jsonl";

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  /// Returning false stops after the epoch's checkpoint.
  std::function<bool(int epoch, int total_epochs)> on_epoch;
};

/// Seed of the model initialisation for a training seed.
std::uint64_t model_seed(std::uint64_t train_seed);

/// Clean pretraining epochs then adversarial epochs (all clean for the
/// standard variant). Writes `checkpoint.bin` after every epoch and appends
/// one metrics line per step. An existing checkpoint in `out_dir` with the
/// same config is resumed.
Checkpoint train(const TrainConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir,
                 const TrainHooks& hooks = {});

}  // namespace rdet
