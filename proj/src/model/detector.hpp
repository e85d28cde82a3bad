// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aaconv/aaconv.hpp"
#include "aid/aid.hpp"
#include "cfr/cfr.hpp"
#include "detection/anchors.hpp"
#include "nn/mode.hpp"

namespace rdet {

/// The four trainable models built from one code path.
enum class Variant { Standard, AdversarialTraining, RobustDet, RobustDetCfr };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);
bool variant_is_adversarial(Variant v);

struct ModelConfig {
  Variant variant = Variant::Standard;
  int height = 64;
  int width = 64;
  int num_classes = 3;
  /// Kernel bank size M; forced to 1 for variants without the discriminator.
  int num_kernels = 4;
  std::uint64_t seed = 0;

  bool use_aid() const { return variant == Variant::RobustDet || variant == Variant::RobustDetCfr; }
  bool use_cfr() const { return variant == Variant::RobustDetCfr; }
  int bank_size() const { return use_aid() ? num_kernels : 1; }
};

/// Validates sizes: square images whose side is 8 * 2^k with side >= 64.
void validate_model_config(const ModelConfig& cfg);

struct NamedParam {
  std::string name;
  Var var;
};

/// How the mixture for the adversarially-aware layers is obtained.
enum class MixtureSource { Discriminator, Uniform };

struct ForwardOptions {
  Mode mode = Mode::Eval;
  MixtureSource mixture = MixtureSource::Discriminator;
  Rng* noise = nullptr;            // CFR sampling in train mode
  bool reconstruct = false;        // run the CFR decoder
};

struct ForwardResult {
  Var predictions;  // (N, A, C+5): C+1 logits then 4 offsets per anchor
  Var mixture;      // (N, M)
  std::optional<CfrEncoding> encoding;
  Var features;        // split-point features fed to the rest of the network
  Var reconstruction;  // (N,3,H,W) on [0,1] when requested
};

/// Reduced SSD-style detector. The first stride-2 blocks are static
/// convolutions; every layer after the split point and all detection heads
/// are adversarially-aware convolutions driven by one mixture per image.
class Detector {
 public:
  explicit Detector(const ModelConfig& cfg);

  Detector(Detector&&) noexcept = default;
  Detector& operator=(Detector&&) noexcept = default;
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  /// Deep copy with independent parameter storage.
  Detector clone() const;

  const ModelConfig& config() const { return cfg_; }
  const AnchorSet& anchors() const { return anchors_; }
  int num_classes() const { return cfg_.num_classes; }

  /// `images` is (N,3,H,W) in [0,255].
  ForwardResult forward(const Var& images, const ForwardOptions& opts = {}) const;

  const std::vector<NamedParam>& parameters() const { return params_; }
  void zero_grad() const;
  /// Toggles gradient tracking on every parameter.
  void set_trainable(bool trainable) const;

  /// Convolution layers of the detection pathway, in data-flow order, with
  /// the indices of their parameters in parameters().
  struct Layer {
    std::string name;
    std::vector<std::size_t> params;
  };
  const std::vector<Layer>& detection_layers() const { return layers_; }

 private:
  struct StaticConv {
    Var weight;
    Var bias;
    int stride;
  };
  struct AwareConv {
    KernelBank bank;
    int stride;
  };

  void register_params();

  ModelConfig cfg_;
  AnchorSet anchors_;
  std::vector<StaticConv> stem_;
  std::vector<AwareConv> trunk_;
  std::vector<AwareConv> heads_;
  std::optional<AidNetwork> aid_;
  std::optional<CfrNetwork> cfr_;
  std::vector<NamedParam> params_;
  std::vector<Layer> layers_;
};

/// Turns gradient tracking off for every parameter and restores the previous
/// flags on destruction.
class ParameterFreeze {
 public:
  explicit ParameterFreeze(const Detector& model);
  ~ParameterFreeze();
  ParameterFreeze(const ParameterFreeze&) = delete;
  ParameterFreeze& operator=(const ParameterFreeze&) = delete;

 private:
  std::vector<Var> vars_;
  std::vector<bool> flags_;
};

/// Stacks sample rasters into an (N,3,H,W) batch.
Tensor make_batch(const std::vector<const Tensor*>& images);

/// Image n of an (N,C,H,W) batch.
Tensor batch_item(const Tensor& batch, int n);

}  // namespace rdet
