// SPDX-License-Identifier: Apache-2.0
#include "diagnostics/diagnostics.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "nn/ops.hpp"
#include "util/error.hpp"

namespace rdet {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::optional<double> ratio_or_empty(std::span<const double> g1, std::span<const double> g2) {
  if (dot(g2, g2) == 0.0) return std::nullopt;
  return gradient_entanglement(g1, g2);
}

Tensor sample_batch(std::span<const ImageSample* const> samples) {
  std::vector<const Tensor*> rows;
  for (const ImageSample* s : samples) rows.push_back(&s->pixels);
  return make_batch(rows);
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

double gradient_entanglement(std::span<const double> g1, std::span<const double> g2) {
  require(g1.size() == g2.size() && !g1.empty(), ErrorKind::Parameter,
          "entanglement needs gradients of equal, nonzero length");
  for (std::size_t i = 0; i < g1.size(); ++i) {
    require(std::isfinite(g1[i]) && std::isfinite(g2[i]), ErrorKind::Numeric, "non-finite gradient entry");
  }
  const double norm = dot(g2, g2);
  require(norm > 0.0, ErrorKind::UndefinedRatio, "entanglement ratio undefined: |g2| = 0");
  return dot(g1, g2) / norm;
}

double gradient_entanglement(const GradientVector& g1, const GradientVector& g2) {
  return gradient_entanglement(std::span<const double>(g1.values), std::span<const double>(g2.values));
}

std::vector<LayerEntanglement> entanglement_profile(const std::vector<GradientVector>& clean,
                                                    const std::vector<GradientVector>& adv) {
  require(clean.size() == adv.size(), ErrorKind::Parameter, "layer lists differ in length");
  std::vector<LayerEntanglement> out;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    require(clean[i].label == adv[i].label && clean[i].values.size() == adv[i].values.size(),
            ErrorKind::Parameter, "layer '" + clean[i].label + "' does not line up");
    out.push_back({clean[i].label, ratio_or_empty(clean[i].values, adv[i].values),
                   ratio_or_empty(adv[i].values, clean[i].values)});
  }
  return out;
}

std::vector<GradientVector> layer_gradients(const Detector& model, const Tensor& images,
                                            const std::vector<MatchResult>& matches) {
  const Detector probe = model.clone();
  probe.set_trainable(true);
  ForwardOptions opts;
  opts.mode = Mode::Eval;
  const ForwardResult r = probe.forward(Var::constant(images), opts);
  backward(ops::mean(multibox_loss(r.predictions, matches, probe.num_classes(), LossKind::Det)));
  std::vector<GradientVector> out;
  for (const Detector::Layer& layer : probe.detection_layers()) {
    GradientVector g{layer.name, {}};
    for (std::size_t idx : layer.params) {
      const Tensor grad = probe.parameters()[idx].var.grad();
      g.values.insert(g.values.end(), grad.values().begin(), grad.values().end());
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<LayerEntanglement> layerwise_entanglement(const Detector& model,
                                                      std::span<const ImageSample* const> clean,
                                                      const Tensor& adv_images) {
  const Tensor clean_images = sample_batch(clean);
  require(clean_images.same_shape(adv_images), ErrorKind::Parameter,
          "adversarial batch must align with the clean batch");
  const auto matches = match_samples(model, clean);
  return entanglement_profile(layer_gradients(model, clean_images, matches),
                              layer_gradients(model, adv_images, matches));
}

double mean_clean_on_adv(const std::vector<LayerEntanglement>& profile) {
  double s = 0.0;
  int n = 0;
  for (const auto& l : profile) {
    if (l.clean_on_adv) {
      s += *l.clean_on_adv;
      ++n;
    }
  }
  require(n > 0, ErrorKind::UndefinedRatio, "no layer has a defined entanglement ratio");
  return s / n;
}

double mean_adv_on_clean(const std::vector<LayerEntanglement>& profile) {
  double s = 0.0;
  int n = 0;
  for (const auto& l : profile) {
    if (l.adv_on_clean) {
      s += *l.adv_on_clean;
      ++n;
    }
  }
  require(n > 0, ErrorKind::UndefinedRatio, "no layer has a defined entanglement ratio");
  return s / n;
}

const char* probe_direction_name(ProbeDirection d) {
  switch (d) {
    case ProbeDirection::CleanToClean: return "clean-clean";
    case ProbeDirection::CleanToAdv: return "clean-adv";
    case ProbeDirection::AdvToClean: return "adv-clean";
  }
  return "?";
}

ProbeDirection parse_probe_direction(const std::string& name) {
  for (ProbeDirection d :
       {ProbeDirection::CleanToClean, ProbeDirection::CleanToAdv, ProbeDirection::AdvToClean}) {
    if (name == probe_direction_name(d)) return d;
  }
  fail(ErrorKind::Parameter, "unknown probe direction '" + name + "' (expected clean-clean, clean-adv or adv-clean)");
}

double ConflictRecord::mean() const {
  double s = 0.0;
  for (double d : delta) s += d;
  return delta.empty() ? 0.0 : s / static_cast<double>(delta.size());
}

double ConflictRecord::mean_abs() const {
  double s = 0.0;
  for (double d : delta) s += std::abs(d);
  return delta.empty() ? 0.0 : s / static_cast<double>(delta.size());
}

std::vector<double> per_image_detection_loss(const Detector& model, const Tensor& images,
                                             const std::vector<MatchResult>& matches) {
  const ParameterFreeze freeze(model);
  ForwardOptions opts;
  opts.mode = Mode::Eval;
  const ForwardResult r = model.forward(Var::constant(images), opts);
  const Var loss = multibox_loss(r.predictions, matches, model.num_classes(), LossKind::Det);
  return loss.value().vector();
}

ConflictRecord conflict_probe(const Detector& model, const Tensor& train_images,
                              const std::vector<MatchResult>& train_matches,
                              const Tensor& eval_images, const std::vector<MatchResult>& eval_matches,
                              ProbeDirection direction, int m, double learning_rate,
                              std::uint64_t seed) {
  require(m >= 0, ErrorKind::Parameter, "probe step count must be non-negative");
  require(std::isfinite(learning_rate) && learning_rate >= 0.0, ErrorKind::Parameter,
          "probe learning rate must be non-negative");
  const Detector probe = model.clone();
  probe.set_trainable(true);
  ConflictRecord rec;
  rec.direction = direction;
  rec.m = m;
  const std::vector<double> before = per_image_detection_loss(probe, eval_images, eval_matches);
  for (int step = 0; step < m; ++step) {
    Rng noise(derive_seed(seed, static_cast<std::uint64_t>(step)));
    ForwardOptions opts;
    opts.mode = Mode::Train;
    opts.noise = &noise;
    probe.zero_grad();
    const ForwardResult r = probe.forward(Var::constant(train_images), opts);
    backward(ops::mean(multibox_loss(r.predictions, train_matches, probe.num_classes(), LossKind::Det)));
    for (const NamedParam& p : probe.parameters()) {
      if (!p.var.has_grad()) continue;
      Var v = p.var;
      Tensor& w = v.mutable_value();
      const Tensor& g = v.node()->grad;
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= learning_rate * g[k];
    }
  }
  const std::vector<double> after = per_image_detection_loss(probe, eval_images, eval_matches);
  for (std::size_t i = 0; i < after.size(); ++i) {
    const double d = after[i] - before[i];
    require(std::isfinite(d), ErrorKind::Numeric, "non-finite loss change in conflict probe");
    rec.delta.push_back(d);
  }
  return rec;
}

ConflictRecord conflict_probe(const Detector& model, std::span<const ImageSample* const> batch_train,
                              std::span<const ImageSample* const> batch_eval, ProbeDirection direction,
                              int m, double learning_rate, const AttackConfig& attack) {
  require(!batch_train.empty() && !batch_eval.empty(), ErrorKind::Parameter, "probe batches must be nonempty");
  auto adversarial = [&](std::span<const ImageSample* const> batch, std::uint64_t salt) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < batch.size(); ++i) seeds.push_back(derive_seed(attack.seed, salt + i));
    return pgd_attack_batch(model, batch, attack, seeds);
  };
  const Tensor train_images = direction == ProbeDirection::AdvToClean ? adversarial(batch_train, 0)
                                                                      : sample_batch(batch_train);
  const Tensor eval_images = direction == ProbeDirection::CleanToAdv ? adversarial(batch_eval, 1u << 20)
                                                                     : sample_batch(batch_eval);
  return conflict_probe(model, train_images, match_samples(model, batch_train), eval_images,
                        match_samples(model, batch_eval), direction, m, learning_rate, attack.seed);
}

ConfidenceHistogram confidence_histogram(std::span<const DetectionSet> detections, double threshold,
                                         int bins) {
  require(threshold > 0.0 && threshold < 1.0, ErrorKind::Parameter, "threshold must lie in (0,1)");
  require(bins >= 2, ErrorKind::Parameter, "need at least two bins");
  ConfidenceHistogram h;
  h.lo = threshold;
  h.hi = 1.0;
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  const double width = (h.hi - h.lo) / bins;
  for (const DetectionSet& set : detections) {
    for (const Detection& d : set) {
      if (d.confidence < threshold) continue;
      int b = static_cast<int>((d.confidence - h.lo) / width);
      b = std::clamp(b, 0, bins - 1);
      ++counts[static_cast<std::size_t>(b)];
      ++h.retained;
    }
  }
  if (h.retained == 0) return h;
  h.counts = counts;
  for (int c : counts) h.density.push_back(c / (h.retained * width));
  return h;
}

std::string entanglement_json(const std::vector<LayerEntanglement>& profile) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : profile) {
    layers.push_back({{"layer", l.layer},
                      {"clean_on_adv", optional_json(l.clean_on_adv)},
                      {"adv_on_clean", optional_json(l.adv_on_clean)}});
  }
  nlohmann::json doc = {{"layers", layers}};
  try {
    doc["mean_clean_on_adv"] = mean_clean_on_adv(profile);
    doc["mean_adv_on_clean"] = mean_adv_on_clean(profile);
  } catch (const Error&) {
    doc["mean_clean_on_adv"] = nullptr;
    doc["mean_adv_on_clean"] = nullptr;
  }
  return doc.dump(2) + "\n";
}

std::string conflict_json(const std::vector<ConflictRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const ConflictRecord& r : records) {
    arr.push_back({{"direction", probe_direction_name(r.direction)},
                   {"m", r.m},
                   {"mean", r.mean()},
                   {"mean_abs", r.mean_abs()},
                   {"delta", r.delta}});
  }
  return nlohmann::json({{"records", arr}}).dump(2) + "\n";
}

std::string histogram_json(const std::vector<std::pair<std::string, ConfidenceHistogram>>& hists) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [name, h] : hists) {
    arr.push_back({{"condition", name},
                   {"lo", h.lo},
                   {"hi", h.hi},
                   {"retained", h.retained},
                   {"counts", h.counts},
                   {"density", h.density}});
  }
  return nlohmann::json({{"histograms", arr}}).dump(2) + "\n";
}

}  // namespace rdet
