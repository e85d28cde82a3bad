// SPDX-License-Identifier: Apache-2.0
#include "evaluation/evaluate.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "util/error.hpp"

namespace rdet {

namespace {

struct Candidate {
  double confidence;
  int image;
  Box box;
};

}  // namespace

double ap_from_curve(const std::vector<PrPoint>& curve, ApMethod method) {
  if (curve.empty()) return 0.0;
  if (method == ApMethod::ElevenPoint) {
    double sum = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double r = t / 10.0;
      double best = 0.0;
      for (const PrPoint& p : curve) {
        if (p.recall >= r) best = std::max(best, p.precision);
      }
      sum += best;
    }
    return sum / 11.0;
  }
  std::vector<double> rec{0.0};
  std::vector<double> prec{0.0};
  for (const PrPoint& p : curve) {
    rec.push_back(p.recall);
    prec.push_back(p.precision);
  }
  rec.push_back(1.0);
  prec.push_back(0.0);
  for (std::size_t i = prec.size() - 1; i > 0; --i) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < rec.size(); ++i) {
    if (rec[i] != rec[i - 1]) ap += (rec[i] - rec[i - 1]) * prec[i];
  }
  return ap;
}

ClassAp average_precision(std::span<const DetectionSet> detections, std::span<const GroundTruth> gts,
                          int label, double iou_thr, ApMethod method) {
  require(iou_thr > 0.0 && iou_thr < 1.0, ErrorKind::Parameter, "iou threshold must lie in (0,1)");
  require(detections.size() == gts.size(), ErrorKind::Parameter,
          "one detection set per ground-truth image required");
  ClassAp out;
  out.label = label;
  std::vector<std::vector<int>> gt_index(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) {
    for (std::size_t g = 0; g < gts[i].boxes.size(); ++g) {
      if (gts[i].labels[g] == label) gt_index[i].push_back(static_cast<int>(g));
    }
    out.num_gt += static_cast<int>(gt_index[i].size());
  }
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    for (const Detection& d : detections[i]) {
      if (d.label == label) cands.push_back({d.confidence, static_cast<int>(i), d.box});
    }
  }
  out.num_detections = static_cast<int>(cands.size());
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.confidence > b.confidence; });

  std::vector<std::vector<bool>> claimed(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) claimed[i].assign(gt_index[i].size(), false);
  int tp = 0;
  int fp = 0;
  for (const Candidate& c : cands) {
    const auto& idx = gt_index[static_cast<std::size_t>(c.image)];
    auto& used = claimed[static_cast<std::size_t>(c.image)];
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (used[k]) continue;
      const double v = iou(c.box, gts[static_cast<std::size_t>(c.image)].boxes[static_cast<std::size_t>(idx[k])]);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(k);
      }
    }
    if (best >= 0 && best_iou >= iou_thr) {
      used[static_cast<std::size_t>(best)] = true;
      ++tp;
    } else {
      ++fp;
    }
    const double recall = out.num_gt > 0 ? static_cast<double>(tp) / out.num_gt : 0.0;
    out.curve.push_back({static_cast<double>(tp) / (tp + fp), recall, c.confidence});
  }
  out.ap = out.num_gt > 0 ? ap_from_curve(out.curve, method) : 0.0;
  return out;
}

EvalReport evaluate_detections(std::span<const DetectionSet> detections,
                               std::span<const GroundTruth> gts, int num_classes, double iou_thr,
                               ApMethod method) {
  EvalReport r;
  r.images = static_cast<int>(gts.size());
  double sum = 0.0;
  for (int label = 1; label <= num_classes; ++label) {
    ClassAp c = average_precision(detections, gts, label, iou_thr, method);
    if (c.num_gt == 0) continue;
    sum += c.ap;
    r.classes.push_back(std::move(c));
  }
  r.map = r.classes.empty() ? 0.0 : sum / static_cast<double>(r.classes.size());
  return r;
}

std::vector<DetectionSet> run_detector(const Detector& model, const Tensor& images,
                                       const DetectParams& params) {
  const ParameterFreeze freeze(model);
  ForwardOptions opts;
  opts.mode = Mode::Eval;
  const ForwardResult r = model.forward(Var::constant(images), opts);
  std::vector<DetectionSet> out;
  for (int n = 0; n < images.dim(0); ++n) {
    out.push_back(detect(output_row(r.predictions.value(), n, model.num_classes()), model.anchors(), params));
  }
  return out;
}

std::string condition_label(const std::optional<AttackConfig>& attack) {
  if (!attack) return "clean";
  return std::string("A_") + loss_kind_name(attack->loss_kind);
}

EvalRun evaluate(const Detector& model, const Dataset& data, const EvalOptions& opts) {
  require(data.size() > 0, ErrorKind::Validation, "evaluation dataset is empty");
  require(opts.batch_size >= 1, ErrorKind::Parameter, "eval batch_size must be positive");
  if (opts.attack) validate_attack_config(*opts.attack);
  EvalRun run;
  run.detections.resize(data.size());
  double linf_sum = 0.0;
  int attacked = 0;
  std::vector<GroundTruth> gts;
  for (const ImageSample& s : data.samples) gts.push_back({s.boxes, s.labels});

  const std::size_t bs = static_cast<std::size_t>(opts.batch_size);
  for (std::size_t start = 0; start < data.size(); start += bs) {
    const std::size_t end = std::min(data.size(), start + bs);
    std::vector<const Tensor*> rows;
    std::vector<Tensor> adv_items;
    adv_items.reserve(end - start);
    if (opts.attack) {
      std::vector<const ImageSample*> targets;
      std::vector<std::uint64_t> seeds;
      std::vector<std::size_t> where;
      for (std::size_t i = start; i < end; ++i) {
        if (data.samples[i].boxes.empty()) continue;
        targets.push_back(&data.samples[i]);
        seeds.push_back(derive_seed(opts.attack->seed, i));
        where.push_back(i);
      }
      Tensor adv;
      if (!targets.empty()) adv = pgd_attack_batch(model, targets, *opts.attack, seeds);
      std::size_t k = 0;
      for (std::size_t i = start; i < end; ++i) {
        if (k < where.size() && where[k] == i) {
          adv_items.push_back(batch_item(adv, static_cast<int>(k)));
          const double d = linf_distance(adv_items.back(), data.samples[i].pixels);
          linf_sum += d;
          run.report.max_linf = std::max(run.report.max_linf, d);
          ++attacked;
          ++k;
          rows.push_back(&adv_items.back());
        } else {
          ++run.report.unattacked;
          rows.push_back(&data.samples[i].pixels);
        }
      }
    } else {
      for (std::size_t i = start; i < end; ++i) rows.push_back(&data.samples[i].pixels);
    }
    auto dets = run_detector(model, make_batch(rows), opts.detect);
    for (std::size_t i = start; i < end; ++i) run.detections[i] = std::move(dets[i - start]);
  }

  EvalReport scored = evaluate_detections(run.detections, gts, model.num_classes(), opts.iou_thr, opts.method);
  scored.condition = condition_label(opts.attack);
  scored.unattacked = run.report.unattacked;
  scored.max_linf = run.report.max_linf;
  scored.mean_linf = attacked > 0 ? linf_sum / attacked : 0.0;
  scored.attack = opts.attack;
  run.report = std::move(scored);
  return run;
}

std::string report_json(const EvalReport& r, const std::vector<std::string>& class_names) {
  nlohmann::json classes = nlohmann::json::array();
  for (const ClassAp& c : r.classes) {
    nlohmann::json j = {{"label", c.label}, {"ap", c.ap}, {"num_gt", c.num_gt},
                        {"num_detections", c.num_detections}};
    if (c.label >= 1 && static_cast<std::size_t>(c.label) <= class_names.size()) {
      j["name"] = class_names[static_cast<std::size_t>(c.label - 1)];
    }
    classes.push_back(j);
  }
  nlohmann::json doc = {{"condition", r.condition}, {"map", r.map},       {"images", r.images},
                        {"unattacked", r.unattacked}, {"mean_linf", r.mean_linf},
                        {"max_linf", r.max_linf},   {"classes", classes}};
  if (r.attack) {
    doc["attack"] = {{"loss_kind", loss_kind_name(r.attack->loss_kind)}, {"steps", r.attack->steps},
                     {"eps", r.attack->eps}, {"alpha", r.attack->alpha},
                     {"random_start", r.attack->random_start}, {"seed", r.attack->seed}};
  }
  return doc.dump(2) + "\n";
}

std::string pr_curves_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "class,confidence,precision,recall\n";
  for (const ClassAp& c : r.classes) {
    for (const PrPoint& p : c.curve) {
      os << c.label << ',' << p.confidence << ',' << p.precision << ',' << p.recall << '\n';
    }
  }
  return os.str();
}

std::vector<SweepRow> attack_sweep(const Detector& model, const Dataset& data, LossKind kind,
                                   const std::vector<int>& steps_list, double eps,
                                   const EvalOptions& base) {
  std::vector<SweepRow> rows;
  for (int steps : steps_list) {
    EvalOptions opts = base;
    AttackConfig ac = base.attack.value_or(AttackConfig{});
    ac.loss_kind = kind;
    ac.steps = steps;
    ac.eps = eps;
    opts.attack = ac;
    rows.push_back({steps, evaluate(model, data, opts).report.map});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "steps,map\n";
  for (const SweepRow& r : rows) os << r.steps << ',' << r.map << '\n';
  return os.str();
}

}  // namespace rdet
