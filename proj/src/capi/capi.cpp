// SPDX-License-Identifier: Apache-2.0
#include "robustdet/robustdet.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "diagnostics/diagnostics.hpp"
#include "evaluation/evaluate.hpp"
#include "plot/plot.hpp"
#include "training/trainer.hpp"
#include "util/error.hpp"
#include "util/fs.hpp"

struct rd_dataset {
  rdet::Dataset data;
};

struct rd_model {
  rdet::Checkpoint checkpoint;
  rdet::Detector detector;
};

namespace {

thread_local std::string g_last_error;

rd_status status_of(rdet::ErrorKind kind) {
  switch (kind) {
    case rdet::ErrorKind::Parameter: return RD_ERR_PARAMETER;
    case rdet::ErrorKind::Io: return RD_ERR_IO;
    case rdet::ErrorKind::Validation: return RD_ERR_VALIDATION;
    case rdet::ErrorKind::AttackInapplicable: return RD_ERR_ATTACK_INAPPLICABLE;
    case rdet::ErrorKind::Numeric: return RD_ERR_NUMERIC;
    case rdet::ErrorKind::Version: return RD_ERR_VERSION;
    case rdet::ErrorKind::Integrity: return RD_ERR_INTEGRITY;
    case rdet::ErrorKind::UndefinedRatio: return RD_ERR_UNDEFINED_RATIO;
  }
  return RD_ERR_INTERNAL;
}

template <typename F>
rd_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return RD_OK;
  } catch (const rdet::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return RD_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RD_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return RD_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  rdet::require(p != nullptr, rdet::ErrorKind::Parameter, std::string(what) + " must not be null");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

rdet::AttackConfig to_attack(const rd_attack_config& a) {
  rdet::require(a.loss_kind == RD_LOSS_CLS || a.loss_kind == RD_LOSS_LOC, rdet::ErrorKind::Parameter,
                "attack loss kind must be cls or loc");
  rdet::AttackConfig c;
  c.loss_kind = a.loss_kind == RD_LOSS_CLS ? rdet::LossKind::Cls : rdet::LossKind::Loc;
  c.steps = a.steps;
  c.eps = a.eps;
  c.alpha = a.alpha;
  c.random_start = a.random_start != 0;
  c.seed = a.seed;
  rdet::validate_attack_config(c);
  return c;
}

std::vector<const rdet::ImageSample*> slice(const rdet::Dataset& d, std::size_t begin, std::size_t end) {
  rdet::require(end <= d.size() && begin < end, rdet::ErrorKind::Validation,
                "dataset has " + std::to_string(d.size()) + " images; need at least " + std::to_string(end));
  std::vector<const rdet::ImageSample*> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&d.samples[i]);
  return out;
}

// ---- plot input parsing ---------------------------------------------------

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::istringstream in(rdet::read_file(path));
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(rdet::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    rdet::fail(rdet::ErrorKind::Validation, path + " is not valid JSON: " + e.what());
  }
}

std::string label_for(const char* const* labels, std::size_t i, const std::string& fallback) {
  return labels != nullptr && labels[i] != nullptr ? std::string(labels[i]) : fallback;
}

double to_d(const std::string& s) { return std::stod(s); }

rdet::RgbImage render_plot(const std::string& kind, const char* const* inputs, const char* const* labels,
                           std::size_t n) {
  using rdet::plot::Axes;
  using rdet::plot::Series;
  if (kind == "pr") {
    std::vector<Series> series;
    for (std::size_t f = 0; f < n; ++f) {
      std::map<int, Series> by_class;
      for (const auto& row : read_csv(inputs[f])) {
        rdet::require(row.size() == 4, rdet::ErrorKind::Validation, "PR CSV rows need 4 columns");
        Series& s = by_class[std::stoi(row[0])];
        s.x.push_back(to_d(row[3]));
        s.y.push_back(to_d(row[2]));
      }
      for (auto& [label, s] : by_class) {
        s.name = label_for(labels, f, n > 1 ? std::string(inputs[f]) : std::string()) +
                 (n > 1 ? " " : "") + "class " + std::to_string(label);
        series.push_back(std::move(s));
      }
    }
    return rdet::plot::line_chart(series, Axes{"PRECISION-RECALL", "recall", "precision"});
  }
  if (kind == "sweep") {
    std::vector<Series> series;
    double x_max = 1.0;
    for (std::size_t f = 0; f < n; ++f) {
      Series s;
      s.name = label_for(labels, f, std::filesystem::path(inputs[f]).stem().string());
      for (const auto& row : read_csv(inputs[f])) {
        rdet::require(row.size() == 2, rdet::ErrorKind::Validation, "sweep CSV rows need 2 columns");
        s.x.push_back(to_d(row[0]));
        s.y.push_back(to_d(row[1]));
        x_max = std::max(x_max, s.x.back());
      }
      series.push_back(std::move(s));
    }
    Axes a{"MAP UNDER PGD", "pgd steps", "map", 0.0, x_max, 0.0, 1.0};
    return rdet::plot::line_chart(series, a);
  }
  if (kind == "entanglement") {
    std::vector<std::string> cats;
    std::vector<Series> groups;
    double lo = 0.0;
    double hi = 1.0;
    for (std::size_t f = 0; f < n; ++f) {
      const auto doc = read_json(inputs[f]);
      Series s;
      s.name = label_for(labels, f, std::filesystem::path(inputs[f]).stem().string());
      std::vector<std::string> names;
      for (const auto& l : doc.at("layers")) {
        names.push_back(l.at("layer").get<std::string>());
        const auto& v = l.at("clean_on_adv");
        s.y.push_back(v.is_null() ? std::nan("") : v.get<double>());
        if (!v.is_null()) {
          lo = std::min(lo, v.get<double>());
          hi = std::max(hi, v.get<double>());
        }
      }
      if (cats.empty()) cats = names;
      groups.push_back(std::move(s));
    }
    return rdet::plot::bar_chart(cats, groups, Axes{"GRADIENT ENTANGLEMENT", "layer", "R", 0, 1, lo, hi});
  }
  if (kind == "conflict") {
    std::vector<std::string> cats;
    std::vector<Series> groups;
    double hi = 0.0;
    for (std::size_t f = 0; f < n; ++f) {
      const auto doc = read_json(inputs[f]);
      Series s;
      s.name = label_for(labels, f, std::filesystem::path(inputs[f]).stem().string());
      std::vector<std::string> names;
      for (const auto& r : doc.at("records")) {
        names.push_back(r.at("direction").get<std::string>());
        s.y.push_back(r.at("mean_abs").get<double>());
        hi = std::max(hi, s.y.back());
      }
      if (cats.empty()) cats = names;
      groups.push_back(std::move(s));
    }
    return rdet::plot::bar_chart(cats, groups,
                                 Axes{"MEAN ABS LOSS CHANGE", "direction", "mean abs dloss", 0, 1, 0.0,
                                      hi > 0 ? hi * 1.1 : 1.0});
  }
  if (kind == "confidence") {
    rdet::require(n == 1, rdet::ErrorKind::Parameter, "confidence plots take one input");
    const auto doc = read_json(inputs[0]);
    std::vector<Series> series;
    double lo = 0.3;
    double hi = 1.0;
    double ymax = 1.0;
    for (const auto& h : doc.at("histograms")) {
      Series s;
      s.name = h.at("condition").get<std::string>();
      s.y = h.at("density").get<std::vector<double>>();
      lo = h.at("lo").get<double>();
      hi = h.at("hi").get<double>();
      for (double v : s.y) ymax = std::max(ymax, v);
      series.push_back(std::move(s));
    }
    return rdet::plot::histogram_chart(series, lo, hi,
                                       Axes{"BOX CONFIDENCE", "confidence", "density", lo, hi, 0.0, ymax * 1.05});
  }
  rdet::fail(rdet::ErrorKind::Parameter,
             "unknown plot kind '" + kind + "' (expected pr, sweep, entanglement, conflict or confidence)");
}

}  // namespace

extern "C" {

const char* rd_last_error(void) { return g_last_error.c_str(); }

const char* rd_status_name(rd_status status) {
  switch (status) {
    case RD_OK: return "ok";
    case RD_ERR_PARAMETER: return "parameter error";
    case RD_ERR_IO: return "io error";
    case RD_ERR_VALIDATION: return "validation error";
    case RD_ERR_ATTACK_INAPPLICABLE: return "attack-inapplicable error";
    case RD_ERR_NUMERIC: return "numeric error";
    case RD_ERR_VERSION: return "version error";
    case RD_ERR_INTEGRITY: return "integrity error";
    case RD_ERR_UNDEFINED_RATIO: return "undefined-ratio error";
    case RD_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void rd_string_free(char* s) { std::free(s); }

rd_status rd_dataset_generate(int count, uint64_t seed, int height, int width, int num_classes,
                              rd_dataset** out) {
  return guarded([&] {
    need(out, "out");
    rdet::ShapesParams p;
    p.count = count;
    p.seed = seed;
    p.height = height;
    p.width = width;
    p.num_classes = num_classes;
    auto ds = std::make_unique<rd_dataset>();
    ds->data = rdet::generate_shapes_dataset(p);
    *out = ds.release();
  });
}

rd_status rd_dataset_load(const char* annotation_path, rd_dataset** out) {
  return guarded([&] {
    need(annotation_path, "annotation_path");
    need(out, "out");
    auto ds = std::make_unique<rd_dataset>();
    ds->data = rdet::load_dataset(annotation_path);
    *out = ds.release();
  });
}

rd_status rd_dataset_save(const rd_dataset* ds, const char* dir, char** annotation_path) {
  return guarded([&] {
    need(ds, "dataset");
    need(dir, "dir");
    const auto path = rdet::write_dataset(ds->data, dir);
    if (annotation_path != nullptr) *annotation_path = dup(path.string());
  });
}

rd_status rd_dataset_info(const rd_dataset* ds, int* size, int* height, int* width, int* num_classes) {
  return guarded([&] {
    need(ds, "dataset");
    if (size) *size = static_cast<int>(ds->data.size());
    if (height) *height = ds->data.manifest.height;
    if (width) *width = ds->data.manifest.width;
    if (num_classes) *num_classes = ds->data.manifest.num_classes();
  });
}

rd_status rd_dataset_summary(const rd_dataset* ds, char** json) {
  return guarded([&] {
    need(ds, "dataset");
    need(json, "json");
    const auto& m = ds->data.manifest;
    std::vector<int> counts(static_cast<std::size_t>(m.num_classes()), 0);
    std::size_t objects = 0;
    for (const auto& s : m.samples) {
      for (int l : s.labels) {
        ++counts[static_cast<std::size_t>(l - 1)];
        ++objects;
      }
    }
    nlohmann::json doc = {{"images", m.samples.size()}, {"objects", objects}, {"height", m.height},
                          {"width", m.width},           {"classes", m.class_names}, {"class_counts", counts}};
    *json = dup(doc.dump(2) + "\n");
  });
}

void rd_dataset_free(rd_dataset* ds) { delete ds; }

rd_status rd_train(const rd_train_options* options, const rd_dataset* ds, const char* out_dir,
                   rd_epoch_callback callback, void* user, rd_model** out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out_dir, "out_dir");
    rdet::TrainConfig cfg;
    if (options != nullptr && options->config_text != nullptr) {
      cfg = rdet::parse_train_config(options->config_text);
    }
    if (options != nullptr && options->variant != nullptr) {
      cfg.variant = rdet::parse_variant(options->variant);
      if (cfg.variant != rdet::Variant::RobustDet && cfg.variant != rdet::Variant::RobustDetCfr) {
        cfg.cfr_enabled = false;
      }
    }
    if (options != nullptr && options->override_seed) cfg.seed = options->seed;
    rdet::validate_train_config(cfg);

    double sum = 0.0;
    int steps = 0;
    rdet::TrainHooks hooks;
    hooks.on_step = [&](const rdet::StepMetrics& m) {
      sum += m.l_det;
      ++steps;
    };
    hooks.on_epoch = [&](int epoch, int total) {
      const double mean = steps > 0 ? sum / steps : 0.0;
      sum = 0.0;
      steps = 0;
      return callback == nullptr || callback(epoch, total, mean, user) == 0;
    };
    rdet::Checkpoint ckpt = rdet::train(cfg, ds->data, out_dir, hooks);
    if (out != nullptr) {
      rdet::Detector det = rdet::restore_model(ckpt);
      *out = new rd_model{std::move(ckpt), std::move(det)};
    }
  });
}

rd_status rd_model_load(const char* checkpoint_path, rd_model** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    rdet::Checkpoint ckpt = rdet::load_checkpoint(checkpoint_path);
    rdet::Detector det = rdet::restore_model(ckpt);
    *out = new rd_model{std::move(ckpt), std::move(det)};
  });
}

rd_status rd_model_save(const rd_model* model, const char* checkpoint_path) {
  return guarded([&] {
    need(model, "model");
    need(checkpoint_path, "checkpoint_path");
    rdet::save_checkpoint(model->checkpoint, checkpoint_path);
  });
}

rd_status rd_model_describe(const rd_model* model, char** json) {
  return guarded([&] {
    need(model, "model");
    need(json, "json");
    const auto& m = model->checkpoint.model;
    nlohmann::json doc = {{"variant", rdet::variant_name(m.variant)},
                          {"height", m.height},
                          {"width", m.width},
                          {"num_classes", m.num_classes},
                          {"num_kernels", m.bank_size()},
                          {"epochs_done", model->checkpoint.epochs_done},
                          {"optimizer_step", model->checkpoint.optimizer.step},
                          {"parameters", model->checkpoint.params.size()},
                          {"train_config", rdet::serialize_train_config(model->checkpoint.train)}};
    *json = dup(doc.dump(2) + "\n");
  });
}

void rd_model_free(rd_model* model) { delete model; }

rd_attack_config rd_attack_defaults(void) { return rd_attack_config{RD_LOSS_CLS, 20, 8.0, 2.0, 0, 0}; }

rd_status rd_attack(const rd_model* model, const rd_dataset* ds, const rd_attack_config* attack,
                    const char* out_dir, double* max_linf) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(attack, "attack");
    need(out_dir, "out_dir");
    const rdet::AttackConfig cfg = to_attack(*attack);
    const auto samples = slice(ds->data, 0, ds->data.size());
    std::vector<rdet::Tensor> adv;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      rdet::AttackConfig per = cfg;
      per.seed = rdet::derive_seed(cfg.seed, i);
      adv.push_back(rdet::pgd_attack(model->detector, *samples[i], per));
    }
    rdet::save_attack_artifacts(adv, samples, cfg, out_dir);
    if (max_linf != nullptr) {
      double worst = 0.0;
      for (std::size_t i = 0; i < adv.size(); ++i) {
        worst = std::max(worst, rdet::linf_distance(adv[i], samples[i]->pixels));
      }
      *max_linf = worst;
    }
  });
}

rd_status rd_evaluate(const rd_model* model, const rd_dataset* ds, const rd_attack_config* attack,
                      int eleven_point, double* map, char** report_json, char** pr_csv) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    rdet::require(ds->data.manifest.num_classes() == model->detector.num_classes(),
                  rdet::ErrorKind::Validation, "dataset and model disagree on the number of classes");
    rdet::EvalOptions opts;
    if (attack != nullptr) opts.attack = to_attack(*attack);
    opts.method = eleven_point ? rdet::ApMethod::ElevenPoint : rdet::ApMethod::AllPoint;
    const rdet::EvalRun run = rdet::evaluate(model->detector, ds->data, opts);
    if (map != nullptr) *map = run.report.map;
    if (report_json != nullptr) *report_json = dup(rdet::report_json(run.report, ds->data.manifest.class_names));
    if (pr_csv != nullptr) *pr_csv = dup(rdet::pr_curves_csv(run.report));
  });
}

rd_status rd_attack_sweep(const rd_model* model, const rd_dataset* ds, const rd_attack_config* attack,
                          const int* steps, size_t n_steps, char** csv) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(attack, "attack");
    need(csv, "csv");
    rdet::require(steps != nullptr && n_steps > 0, rdet::ErrorKind::Parameter, "steps list is empty");
    rdet::AttackConfig base = to_attack(*attack);
    rdet::EvalOptions opts;
    opts.attack = base;
    const auto rows = rdet::attack_sweep(model->detector, ds->data, base.loss_kind,
                                         std::vector<int>(steps, steps + n_steps), base.eps, opts);
    *csv = dup(rdet::sweep_csv(rows));
  });
}

rd_status rd_diagnose_entanglement(const rd_model* model, const rd_dataset* ds,
                                   const rd_attack_config* attack, int batch, char** json) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(attack, "attack");
    need(json, "json");
    rdet::require(batch >= 1, rdet::ErrorKind::Parameter, "batch must be positive");
    const auto clean = slice(ds->data, 0, static_cast<std::size_t>(batch));
    const rdet::AttackConfig cfg = to_attack(*attack);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < clean.size(); ++i) seeds.push_back(rdet::derive_seed(cfg.seed, i));
    const rdet::Tensor adv = rdet::pgd_attack_batch(model->detector, clean, cfg, seeds);
    *json = dup(rdet::entanglement_json(rdet::layerwise_entanglement(model->detector, clean, adv)));
  });
}

rd_status rd_diagnose_conflict(const rd_model* model, const rd_dataset* ds, const char* direction,
                               int m, double learning_rate, const rd_attack_config* attack, int batch,
                               char** json) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(direction, "direction");
    need(attack, "attack");
    need(json, "json");
    rdet::require(batch >= 1, rdet::ErrorKind::Parameter, "batch must be positive");
    const auto b = static_cast<std::size_t>(batch);
    const auto train_batch = slice(ds->data, 0, b);
    const auto eval_batch = slice(ds->data, b, 2 * b);
    const rdet::AttackConfig cfg = to_attack(*attack);
    const double lr = learning_rate > 0.0 ? learning_rate : model->checkpoint.train.learning_rate;
    std::vector<rdet::ProbeDirection> dirs;
    if (std::string(direction) == "all") {
      dirs = {rdet::ProbeDirection::CleanToClean, rdet::ProbeDirection::CleanToAdv,
              rdet::ProbeDirection::AdvToClean};
    } else {
      dirs = {rdet::parse_probe_direction(direction)};
    }
    std::vector<rdet::ConflictRecord> records;
    for (auto d : dirs) {
      records.push_back(rdet::conflict_probe(model->detector, train_batch, eval_batch, d, m, lr, cfg));
    }
    *json = dup(rdet::conflict_json(records));
  });
}

rd_status rd_diagnose_confidence(const rd_model* model, const rd_dataset* ds, const rd_attack_config* attack,
                                 double threshold, int bins, char** json) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(attack, "attack");
    need(json, "json");
    const rdet::AttackConfig base = to_attack(*attack);
    std::vector<std::pair<std::string, rdet::ConfidenceHistogram>> hists;
    for (int c = 0; c < 3; ++c) {
      rdet::EvalOptions opts;
      if (c > 0) {
        rdet::AttackConfig a = base;
        a.loss_kind = c == 1 ? rdet::LossKind::Cls : rdet::LossKind::Loc;
        opts.attack = a;
      }
      const auto run = rdet::evaluate(model->detector, ds->data, opts);
      hists.emplace_back(run.report.condition, rdet::confidence_histogram(run.detections, threshold, bins));
    }
    *json = dup(rdet::histogram_json(hists));
  });
}

rd_status rd_plot(const char* kind, const char* const* inputs, const char* const* labels, size_t n_inputs,
                  const char* output_png) {
  return guarded([&] {
    need(kind, "kind");
    need(output_png, "output_png");
    rdet::require(inputs != nullptr && n_inputs > 0, rdet::ErrorKind::Parameter, "no plot inputs");
    for (std::size_t i = 0; i < n_inputs; ++i) need(inputs[i], "input path");
    try {
      rdet::plot::save(render_plot(kind, inputs, labels, n_inputs), output_png);
    } catch (const nlohmann::json::exception& e) {
      rdet::fail(rdet::ErrorKind::Validation, std::string("malformed plot input: ") + e.what());
    } catch (const std::invalid_argument& e) {
      rdet::fail(rdet::ErrorKind::Validation, std::string("malformed number in plot input: ") + e.what());
    }
  });
}

}  // extern "C"
