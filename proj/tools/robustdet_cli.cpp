// SPDX-License-Identifier: Apache-2.0
// Command-line front end over the C API.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "robustdet/robustdet.h"

namespace fs = std::filesystem;

namespace {

struct Failure {
  rd_status status;
};

void check(rd_status s) {
  if (s != RD_OK) throw Failure{s};
}

struct DatasetDeleter {
  void operator()(rd_dataset* d) const { rd_dataset_free(d); }
};
struct ModelDeleter {
  void operator()(rd_model* m) const { rd_model_free(m); }
};
struct StringDeleter {
  void operator()(char* s) const { rd_string_free(s); }
};
using DatasetPtr = std::unique_ptr<rd_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<rd_model, ModelDeleter>;
using StringPtr = std::unique_ptr<char, StringDeleter>;

void write_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

fs::path annotation_path(const std::string& data) {
  fs::path p(data);
  if (fs::is_directory(p)) p /= "annotations.jsonl";
  return p;
}

DatasetPtr load_data(const std::string& data) {
  rd_dataset* ds = nullptr;
  check(rd_dataset_load(annotation_path(data).string().c_str(), &ds));
  return DatasetPtr(ds);
}

ModelPtr load_model(const std::string& path) {
  rd_model* m = nullptr;
  check(rd_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string model_variant(const rd_model* m) {
  char* json = nullptr;
  check(rd_model_describe(m, &json));
  StringPtr hold(json);
  const std::string s(json);
  const auto k = s.find("\"variant\": \"");
  if (k == std::string::npos) return "?";
  const auto b = k + 12;
  return s.substr(b, s.find('"', b) - b);
}

// Attack flags shared by several subcommands.
struct AttackFlags {
  std::string kind = "cls";
  int steps = 20;
  double eps = 8.0;
  double alpha = 2.0;
  bool random_start = false;

  void add(CLI::App* cmd, bool allow_none) {
    std::vector<std::string> kinds = {"cls", "loc"};
    if (allow_none) {
      kinds.insert(kinds.begin(), "none");
      kind = "none";
    }
    cmd->add_option("--attack", kind, "attack loss")->check(CLI::IsMember(kinds));
    cmd->add_option("--steps", steps, "PGD steps")->check(CLI::NonNegativeNumber);
    cmd->add_option("--eps", eps, "L-inf budget on the 0-255 scale")->check(CLI::NonNegativeNumber);
    cmd->add_option("--alpha", alpha, "step size on the 0-255 scale")->check(CLI::PositiveNumber);
    cmd->add_flag("--random-start", random_start, "start from a uniform point in the ball");
  }

  rd_attack_config config(std::uint64_t seed) const {
    rd_attack_config a = rd_attack_defaults();
    a.loss_kind = kind == "loc" ? RD_LOSS_LOC : RD_LOSS_CLS;
    a.steps = steps;
    a.eps = eps;
    a.alpha = alpha;
    a.random_start = random_start ? 1 : 0;
    a.seed = seed;
    return a;
  }
};

std::vector<int> parse_steps(const std::string& list) {
  std::vector<int> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

int epoch_report(int epoch, int total, double mean_l_det, void*) {
  std::printf("epoch %d/%d  mean L_det %.4f\n", epoch, total, mean_l_det);
  std::fflush(stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarially robust detector toolkit: data, training, attacks, evaluation, diagnostics"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "random seed")->capture_default_str();

  // dataset
  auto* ds_cmd = app.add_subcommand("dataset", "render the synthetic shapes dataset");
  std::string ds_out;
  int ds_count = 200, ds_h = 64, ds_w = 64, ds_classes = 3;
  ds_cmd->add_option("--out", ds_out, "output directory")->required();
  ds_cmd->add_option("--count", ds_count, "number of images")->check(CLI::PositiveNumber);
  ds_cmd->add_option("--height", ds_h, "image height")->check(CLI::PositiveNumber);
  ds_cmd->add_option("--width", ds_w, "image width")->check(CLI::PositiveNumber);
  ds_cmd->add_option("--classes", ds_classes, "number of shape classes")->check(CLI::Range(1, 8));
  ds_cmd->add_option("--seed", seed, "random seed");

  // train
  auto* tr_cmd = app.add_subcommand("train", "train a detector variant");
  std::string tr_config, tr_data, tr_out, tr_variant;
  tr_cmd->add_option("--config", tr_config, "key = value training config");
  tr_cmd->add_option("--data", tr_data, "dataset directory or annotations.jsonl")->required();
  tr_cmd->add_option("--out", tr_out, "run directory")->required();
  tr_cmd->add_option("--variant", tr_variant, "model variant")
      ->check(CLI::IsMember({"standard", "at", "robustdet", "robustdet-cfr"}));
  auto* tr_seed = tr_cmd->add_option("--seed", seed, "random seed (overrides the config)");

  // attack
  auto* at_cmd = app.add_subcommand("attack", "write adversarial images");
  std::string at_ckpt, at_data, at_out;
  AttackFlags at_flags;
  at_cmd->add_option("--checkpoint", at_ckpt, "checkpoint file")->required();
  at_cmd->add_option("--data", at_data, "dataset directory or annotations.jsonl")->required();
  at_cmd->add_option("--out", at_out, "output directory")->required();
  at_flags.add(at_cmd, false);
  at_cmd->add_option("--seed", seed, "random seed");

  // eval
  auto* ev_cmd = app.add_subcommand("eval", "mAP@0.5 under clean or attacked inputs");
  std::string ev_ckpt, ev_data, ev_out, ev_sweep;
  bool ev_eleven = false;
  AttackFlags ev_flags;
  ev_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev_cmd->add_option("--data", ev_data, "dataset directory or annotations.jsonl")->required();
  ev_cmd->add_option("--out", ev_out, "report JSON path (PR curves go next to it as CSV)");
  ev_cmd->add_option("--sweep-steps", ev_sweep, "comma-separated PGD step counts; writes a sweep CSV");
  ev_cmd->add_flag("--eleven-point", ev_eleven, "11-point interpolated AP");
  ev_flags.add(ev_cmd, true);
  ev_cmd->add_option("--seed", seed, "random seed");

  // diagnose
  auto* dg_cmd = app.add_subcommand("diagnose", "entanglement, conflict and confidence diagnostics");
  dg_cmd->require_subcommand(1);
  std::string dg_ckpt, dg_data, dg_out, dg_direction = "all";
  int dg_batch = 16, dg_m = 1, dg_bins = 14;
  double dg_lr = 0.0, dg_threshold = 0.3;
  AttackFlags dg_flags;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--checkpoint", dg_ckpt, "checkpoint file")->required();
    c->add_option("--data", dg_data, "dataset directory or annotations.jsonl")->required();
    c->add_option("--out", dg_out, "output JSON path")->required();
    c->add_option("--seed", seed, "random seed");
    dg_flags.add(c, false);
  };
  auto* dg_ent = dg_cmd->add_subcommand("entanglement", "layerwise gradient entanglement");
  add_common(dg_ent);
  dg_ent->add_option("--batch", dg_batch, "images per batch")->check(CLI::PositiveNumber);
  auto* dg_con = dg_cmd->add_subcommand("conflict", "m-step loss-change probe");
  add_common(dg_con);
  dg_con->add_option("--batch", dg_batch, "images per batch")->check(CLI::PositiveNumber);
  dg_con->add_option("--direction", dg_direction, "probe direction")
      ->check(CLI::IsMember({"all", "clean-clean", "clean-adv", "adv-clean"}));
  dg_con->add_option("--m", dg_m, "probe steps")->check(CLI::NonNegativeNumber);
  dg_con->add_option("--lr", dg_lr, "probe learning rate (default: the checkpoint's)");
  auto* dg_conf = dg_cmd->add_subcommand("confidence", "histograms of retained box confidences");
  add_common(dg_conf);
  dg_conf->add_option("--threshold", dg_threshold, "confidence threshold")->check(CLI::Range(0.0, 1.0));
  dg_conf->add_option("--bins", dg_bins, "histogram bins")->check(CLI::Range(2, 1000));

  // plot
  auto* pl_cmd = app.add_subcommand("plot", "render JSON/CSV artifacts to PNG");
  std::string pl_kind, pl_out;
  std::vector<std::string> pl_inputs, pl_labels;
  pl_cmd->add_option("--kind", pl_kind, "plot kind")
      ->required()
      ->check(CLI::IsMember({"pr", "sweep", "entanglement", "conflict", "confidence"}));
  pl_cmd->add_option("--input", pl_inputs, "input artifact(s)")->required();
  pl_cmd->add_option("--label", pl_labels, "legend label per input");
  pl_cmd->add_option("--out", pl_out, "output PNG (default: next to the first input)");
  pl_cmd->add_option("--seed", seed, "random seed (unused; plots are deterministic)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*ds_cmd) {
      rd_dataset* raw = nullptr;
      check(rd_dataset_generate(ds_count, seed, ds_h, ds_w, ds_classes, &raw));
      DatasetPtr ds(raw);
      char* ann = nullptr;
      check(rd_dataset_save(ds.get(), ds_out.c_str(), &ann));
      StringPtr ann_hold(ann);
      char* summary = nullptr;
      check(rd_dataset_summary(ds.get(), &summary));
      StringPtr sum_hold(summary);
      std::printf("%s", summary);
      std::printf("wrote %s\n", ann);
    } else if (*tr_cmd) {
      DatasetPtr ds = load_data(tr_data);
      const std::string text = tr_config.empty() ? std::string() : read_text(tr_config);
      rd_train_options opts{};
      opts.config_text = tr_config.empty() ? nullptr : text.c_str();
      opts.variant = tr_variant.empty() ? nullptr : tr_variant.c_str();
      opts.override_seed = tr_seed->count() > 0 || app.get_option("--seed")->count() > 0;
      opts.seed = seed;
      rd_model* raw = nullptr;
      check(rd_train(&opts, ds.get(), tr_out.c_str(), epoch_report, nullptr, &raw));
      ModelPtr model(raw);
      std::printf("trained %s; checkpoint %s\n", model_variant(model.get()).c_str(),
                  (fs::path(tr_out) / "checkpoint.bin").string().c_str());
    } else if (*at_cmd) {
      ModelPtr model = load_model(at_ckpt);
      DatasetPtr ds = load_data(at_data);
      const rd_attack_config cfg = at_flags.config(seed);
      double linf = 0.0;
      check(rd_attack(model.get(), ds.get(), &cfg, at_out.c_str(), &linf));
      std::printf("max |x_adv - x| = %.6g (eps %.6g); sidecar %s\n", linf, cfg.eps,
                  (fs::path(at_out) / "attack.json").string().c_str());
    } else if (*ev_cmd) {
      ModelPtr model = load_model(ev_ckpt);
      DatasetPtr ds = load_data(ev_data);
      const rd_attack_config cfg = ev_flags.config(seed);
      const bool attacked = ev_flags.kind != "none";
      if (!ev_sweep.empty()) {
        const std::vector<int> steps = parse_steps(ev_sweep);
        char* csv = nullptr;
        check(rd_attack_sweep(model.get(), ds.get(), &cfg, steps.data(), steps.size(), &csv));
        StringPtr hold(csv);
        const fs::path out = ev_out.empty() ? fs::path("sweep_" + ev_flags.kind + ".csv") : fs::path(ev_out);
        write_atomic(out, csv);
        std::printf("%s", csv);
        std::printf("wrote %s\n", out.string().c_str());
      } else {
        double map = 0.0;
        char* report = nullptr;
        char* curves = nullptr;
        check(rd_evaluate(model.get(), ds.get(), attacked ? &cfg : nullptr, ev_eleven ? 1 : 0, &map, &report,
                          &curves));
        StringPtr r_hold(report);
        StringPtr c_hold(curves);
        if (!ev_out.empty()) {
          fs::path out(ev_out);
          write_atomic(fs::path(out).replace_extension(".csv"), curves);
          write_atomic(out, report);
        }
        const std::string cond = attacked ? "A_" + ev_flags.kind : std::string("clean");
        std::printf("| %-14s | %-6s | %6.2f |\n", model_variant(model.get()).c_str(), cond.c_str(), 100.0 * map);
      }
    } else if (*dg_cmd) {
      ModelPtr model = load_model(dg_ckpt);
      DatasetPtr ds = load_data(dg_data);
      const rd_attack_config cfg = dg_flags.config(seed);
      char* json = nullptr;
      if (*dg_ent) {
        check(rd_diagnose_entanglement(model.get(), ds.get(), &cfg, dg_batch, &json));
      } else if (*dg_con) {
        check(rd_diagnose_conflict(model.get(), ds.get(), dg_direction.c_str(), dg_m, dg_lr, &cfg, dg_batch,
                                   &json));
      } else {
        check(rd_diagnose_confidence(model.get(), ds.get(), &cfg, dg_threshold, dg_bins, &json));
      }
      StringPtr hold(json);
      write_atomic(dg_out, json);
      std::printf("wrote %s\n", dg_out.c_str());
    } else if (*pl_cmd) {
      std::vector<const char*> inputs;
      std::vector<const char*> labels;
      for (const auto& s : pl_inputs) inputs.push_back(s.c_str());
      for (std::size_t i = 0; i < pl_inputs.size(); ++i) {
        labels.push_back(i < pl_labels.size() ? pl_labels[i].c_str() : nullptr);
      }
      const std::string out =
          pl_out.empty() ? fs::path(pl_inputs.front()).replace_extension(".png").string() : pl_out;
      check(rd_plot(pl_kind.c_str(), inputs.data(), labels.data(), inputs.size(), out.c_str()));
      std::printf("wrote %s\n", out.c_str());
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error (%s): %s\n", rd_status_name(f.status), rd_last_error());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
