// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "model/detector.hpp"
#include "training/config.hpp"

namespace rdet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// SGD momentum buffers, index-aligned with Detector::parameters().
struct OptimizerState {
  std::vector<Tensor> velocity;
  std::int64_t step = 0;
};

struct NamedTensor {
  std::string name;
  Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  int epochs_done = 0;
  std::vector<NamedTensor> params;
  OptimizerState optimizer;
};

Checkpoint make_checkpoint(const Detector& model, const TrainConfig& train,
                           const OptimizerState& optimizer, int epochs_done);
/// Builds the detector and copies the stored parameters into it.
Detector restore_model(const Checkpoint& ckpt);

/// Versioned binary blob: magic, version, JSON header, raw parameter and
/// velocity values, FNV-1a trailer.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Hash over parameter values, for mutation checks.
std::uint64_t parameter_hash(const Detector& model);

}  // namespace rdet
