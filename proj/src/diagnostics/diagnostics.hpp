// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attacks/pgd.hpp"
#include "detection/detect.hpp"

namespace rdet {

struct GradientVector {
  std::string label;
  std::vector<double> values;
};

/// g1.g2 / |g2|^2. Undefined-ratio error when g2 is zero.
double gradient_entanglement(std::span<const double> g1, std::span<const double> g2);
double gradient_entanglement(const GradientVector& g1, const GradientVector& g2);

/// Ratios for one layer in both normalisation directions; empty when the
/// normalising gradient vanishes.
struct LayerEntanglement {
  std::string layer;
  std::optional<double> clean_on_adv;  // g_clean.g_adv / |g_adv|^2
  std::optional<double> adv_on_clean;  // g_adv.g_clean / |g_clean|^2
};

/// Pairs per-layer gradients (same order and labels) into a profile.
std::vector<LayerEntanglement> entanglement_profile(const std::vector<GradientVector>& clean,
                                                    const std::vector<GradientVector>& adv);

/// Per-layer parameter gradients of the batch-mean L_det in eval mode.
std::vector<GradientVector> layer_gradients(const Detector& model, const Tensor& images,
                                            const std::vector<MatchResult>& matches);

/// `adv_images` (N,3,H,W) are the counterparts of `clean`.
std::vector<LayerEntanglement> layerwise_entanglement(const Detector& model,
                                                      std::span<const ImageSample* const> clean,
                                                      const Tensor& adv_images);

/// Mean over defined layers of one direction.
double mean_clean_on_adv(const std::vector<LayerEntanglement>& profile);
double mean_adv_on_clean(const std::vector<LayerEntanglement>& profile);

enum class ProbeDirection { CleanToClean, CleanToAdv, AdvToClean };
const char* probe_direction_name(ProbeDirection d);
ProbeDirection parse_probe_direction(const std::string& name);

struct ConflictRecord {
  ProbeDirection direction = ProbeDirection::CleanToClean;
  int m = 1;
  std::vector<double> delta;  // per evaluated image: after - before

  double mean() const;
  double mean_abs() const;
};

/// Per-image eval-mode L_det.
std::vector<double> per_image_detection_loss(const Detector& model, const Tensor& images,
                                             const std::vector<MatchResult>& matches);

/// Clones the model, takes m plain SGD steps on the batch-mean L_det of
/// `train_images` and reports the per-image change of L_det on `eval_images`.
ConflictRecord conflict_probe(const Detector& model, const Tensor& train_images,
                              const std::vector<MatchResult>& train_matches,
                              const Tensor& eval_images, const std::vector<MatchResult>& eval_matches,
                              ProbeDirection direction, int m, double learning_rate,
                              std::uint64_t seed = 0);

/// Builds the clean or adversarial batches the direction asks for, attacking
/// with the original model, then runs the probe.
ConflictRecord conflict_probe(const Detector& model, std::span<const ImageSample* const> batch_train,
                              std::span<const ImageSample* const> batch_eval, ProbeDirection direction,
                              int m, double learning_rate, const AttackConfig& attack);

struct ConfidenceHistogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<int> counts;  // empty when nothing is retained
  std::vector<double> density;
  int retained = 0;
};

/// Bins confidences >= threshold over [threshold, 1]; the last bin is closed.
ConfidenceHistogram confidence_histogram(std::span<const DetectionSet> detections, double threshold,
                                         int bins);

std::string entanglement_json(const std::vector<LayerEntanglement>& profile);
std::string conflict_json(const std::vector<ConflictRecord>& records);
std::string histogram_json(const std::vector<std::pair<std::string, ConfidenceHistogram>>& hists);

}  // namespace rdet
