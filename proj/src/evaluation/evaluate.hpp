// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attacks/pgd.hpp"
#include "detection/detect.hpp"

namespace rdet {

struct GroundTruth {
  std::vector<Box> boxes;
  std::vector<int> labels;
};

struct PrPoint {
  double precision = 0.0;
  double recall = 0.0;
  double confidence = 0.0;
};

enum class ApMethod { AllPoint, ElevenPoint };

/// Greedy confidence-ordered matching result for one class.
struct ClassAp {
  int label = 0;
  double ap = 0.0;
  int num_gt = 0;
  int num_detections = 0;
  std::vector<PrPoint> curve;
};

/// Detections of `label` are visited by descending confidence (stable in image
/// then insertion order). Each takes the unclaimed gt of the same image and
/// class with the highest IoU (lowest index on ties) when that IoU reaches
/// `iou_thr`; otherwise it is a false positive.
ClassAp average_precision(std::span<const DetectionSet> detections, std::span<const GroundTruth> gts,
                          int label, double iou_thr = 0.5, ApMethod method = ApMethod::AllPoint);

/// Area under the precision envelope, or the 11-point VOC average.
double ap_from_curve(const std::vector<PrPoint>& curve, ApMethod method);

struct EvalReport {
  std::string condition = "clean";
  double map = 0.0;
  std::vector<ClassAp> classes;  // classes present in the ground truth
  int images = 0;
  int unattacked = 0;  // images without ground truth, evaluated clean
  double mean_linf = 0.0;
  double max_linf = 0.0;
  std::optional<AttackConfig> attack;
};

/// mAP over injected detections; classes absent from the ground truth are
/// excluded.
EvalReport evaluate_detections(std::span<const DetectionSet> detections,
                               std::span<const GroundTruth> gts, int num_classes,
                               double iou_thr = 0.5, ApMethod method = ApMethod::AllPoint);

struct EvalOptions {
  std::optional<AttackConfig> attack;
  DetectParams detect;
  ApMethod method = ApMethod::AllPoint;
  double iou_thr = 0.5;
  int batch_size = 16;
};

struct EvalRun {
  EvalReport report;
  std::vector<DetectionSet> detections;
};

/// Runs the model (attacking each image first when requested; image i uses
/// seed derive_seed(attack.seed, i)) and scores the detections.
EvalRun evaluate(const Detector& model, const Dataset& data, const EvalOptions& opts = {});

/// Eval-mode detections for a batch of rasters.
std::vector<DetectionSet> run_detector(const Detector& model, const Tensor& images,
                                       const DetectParams& params = {});

std::string condition_label(const std::optional<AttackConfig>& attack);
std::string report_json(const EvalReport& report, const std::vector<std::string>& class_names);
/// One row per curve point: class,confidence,precision,recall.
std::string pr_curves_csv(const EvalReport& report);

struct SweepRow {
  int steps = 0;
  double map = 0.0;
};

/// mAP under PGD for every step count in `steps_list`.
std::vector<SweepRow> attack_sweep(const Detector& model, const Dataset& data, LossKind kind,
                                   const std::vector<int>& steps_list, double eps,
                                   const EvalOptions& base = {});
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace rdet
