// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "robustdet/robustdet.h"

namespace fs = std::filesystem;

namespace {

struct Freer {
  void operator()(rd_dataset* d) const { rd_dataset_free(d); }
  void operator()(rd_model* m) const { rd_model_free(m); }
  void operator()(char* s) const { rd_string_free(s); }
};
using DatasetPtr = std::unique_ptr<rd_dataset, Freer>;
using ModelPtr = std::unique_ptr<rd_model, Freer>;
using StringPtr = std::unique_ptr<char, Freer>;

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("rdet_test_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kTinyConfig =
    "variant = robustdet\npretrain_epochs = 1\nepochs = 1\nbatch_size = 4\n"
    "learning_rate = 0.01\nattack.steps = 1\nseed = 3\n";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run(const std::string& args) {
  const std::string cmd = std::string(RDET_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("status reporting") {
  CHECK(std::string(rd_status_name(RD_OK)) == "ok");
  rd_dataset* d = nullptr;
  CHECK(rd_dataset_generate(0, 1, 64, 64, 3, &d) == RD_ERR_PARAMETER);
  CHECK(d == nullptr);
  CHECK(std::string(rd_last_error()).size() > 0);
  CHECK(rd_dataset_load("/nonexistent/annotations.jsonl", &d) == RD_ERR_IO);
  CHECK(rd_dataset_generate(2, 1, 64, 64, 3, nullptr) == RD_ERR_PARAMETER);
  REQUIRE(rd_dataset_generate(2, 1, 64, 64, 3, &d) == RD_OK);
  CHECK(std::string(rd_last_error()).empty());
  rd_dataset_free(d);
  rd_dataset_free(nullptr);
  rd_model_free(nullptr);
  rd_string_free(nullptr);
}

TEST_CASE("dataset handles") {
  rd_dataset* raw = nullptr;
  REQUIRE(rd_dataset_generate(5, 4, 64, 64, 3, &raw) == RD_OK);
  DatasetPtr ds(raw);
  int n = 0, h = 0, w = 0, c = 0;
  REQUIRE(rd_dataset_info(ds.get(), &n, &h, &w, &c) == RD_OK);
  CHECK(n == 5);
  CHECK(h == 64);
  CHECK(w == 64);
  CHECK(c == 3);

  const fs::path dir = scratch("dataset");
  char* ann = nullptr;
  REQUIRE(rd_dataset_save(ds.get(), dir.c_str(), &ann) == RD_OK);
  StringPtr ann_path(ann);
  rd_dataset* back_raw = nullptr;
  REQUIRE(rd_dataset_load(ann_path.get(), &back_raw) == RD_OK);
  DatasetPtr back(back_raw);
  char* s1 = nullptr;
  char* s2 = nullptr;
  REQUIRE(rd_dataset_summary(ds.get(), &s1) == RD_OK);
  REQUIRE(rd_dataset_summary(back.get(), &s2) == RD_OK);
  StringPtr a(s1), b(s2);
  CHECK(std::string(a.get()) == std::string(b.get()));
  CHECK(nlohmann::json::parse(a.get()).is_object());
}

namespace {

int stop_after_first(int epoch, int, double mean_l_det, void* user) {
  CHECK(std::isfinite(mean_l_det));
  *static_cast<int*>(user) = epoch;
  return 1;
}

}  // namespace

TEST_CASE("training, persistence and evaluation") {
  rd_dataset* raw = nullptr;
  REQUIRE(rd_dataset_generate(8, 2, 64, 64, 3, &raw) == RD_OK);
  DatasetPtr ds(raw);
  const fs::path out = scratch("train");
  rd_train_options opts{kTinyConfig, nullptr, 0, 0};
  rd_model* mraw = nullptr;
  REQUIRE(rd_train(&opts, ds.get(), out.c_str(), nullptr, nullptr, &mraw) == RD_OK);
  ModelPtr model(mraw);

  char* desc = nullptr;
  REQUIRE(rd_model_describe(model.get(), &desc) == RD_OK);
  StringPtr desc_s(desc);
  CHECK(std::string(desc).find("robustdet") != std::string::npos);

  const fs::path saved = out / "copy.bin";
  REQUIRE(rd_model_save(model.get(), saved.c_str()) == RD_OK);
  CHECK(slurp(saved) == slurp(out / "checkpoint.bin"));
  rd_model* lraw = nullptr;
  REQUIRE(rd_model_load(saved.c_str(), &lraw) == RD_OK);
  ModelPtr loaded(lraw);

  double map_a = -1.0, map_b = -2.0;
  char* report = nullptr;
  char* csv = nullptr;
  REQUIRE(rd_evaluate(model.get(), ds.get(), nullptr, 0, &map_a, &report, &csv) == RD_OK);
  StringPtr report_s(report), csv_s(csv);
  REQUIRE(rd_evaluate(loaded.get(), ds.get(), nullptr, 0, &map_b, nullptr, nullptr) == RD_OK);
  CHECK(map_a == map_b);
  CHECK(nlohmann::json::parse(report)["map"].get<double>() == map_a);

  rd_attack_config ac = rd_attack_defaults();
  CHECK(ac.steps == 20);
  CHECK(ac.eps == 8.0);
  ac.steps = 2;
  const fs::path adv_dir = scratch("adv");
  double max_linf = -1.0;
  REQUIRE(rd_attack(model.get(), ds.get(), &ac, adv_dir.c_str(), &max_linf) == RD_OK);
  CHECK(max_linf <= 8.0);
  CHECK(fs::exists(adv_dir / "attack.json"));

  const int steps[] = {0, 1};
  char* sweep = nullptr;
  REQUIRE(rd_attack_sweep(model.get(), ds.get(), &ac, steps, 2, &sweep) == RD_OK);
  StringPtr sweep_s(sweep);
  CHECK(std::string(sweep).find("steps") != std::string::npos);

  char* ent = nullptr;
  REQUIRE(rd_diagnose_entanglement(model.get(), ds.get(), &ac, 4, &ent) == RD_OK);
  StringPtr ent_s(ent);
  CHECK(nlohmann::json::parse(ent)["layers"].size() > 0);
  char* conf = nullptr;
  REQUIRE(rd_diagnose_conflict(model.get(), ds.get(), "all", 1, 0.0, &ac, 4, &conf) == RD_OK);
  StringPtr conf_s(conf);
  CHECK(rd_diagnose_conflict(model.get(), ds.get(), "sideways", 1, 0.0, &ac, 4, &conf) == RD_ERR_PARAMETER);

  // Resuming an interrupted run reaches the same checkpoint.
  const fs::path part = scratch("partial");
  int seen = 0;
  rd_model* praw = nullptr;
  REQUIRE(rd_train(&opts, ds.get(), part.c_str(), stop_after_first, &seen, &praw) == RD_OK);
  rd_model_free(praw);
  CHECK(seen == 1);
  REQUIRE(rd_train(&opts, ds.get(), part.c_str(), nullptr, nullptr, &praw) == RD_OK);
  rd_model_free(praw);
  CHECK(slurp(part / "checkpoint.bin") == slurp(out / "checkpoint.bin"));

  std::string bytes = slurp(saved);
  bytes.resize(bytes.size() - 20);
  std::ofstream(out / "truncated.bin", std::ios::binary) << bytes;
  CHECK(rd_model_load((out / "truncated.bin").c_str(), &lraw) == RD_ERR_INTEGRITY);
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  const std::string d = dir.string();
  CHECK(run("--help") == 0);
  CHECK(run("frobnicate") == 1);
  CHECK(run("dataset --count 6 --seed 2 --out " + d + "/data") == 0);
  CHECK(fs::exists(dir / "data" / "annotations.jsonl"));
  CHECK(run("dataset --count 0 --out " + d + "/bad") == 1);
  CHECK(run("dataset --count 5 --height 32 --out " + d + "/bad") == 2);

  std::ofstream(dir / "tiny.cfg") << kTinyConfig;
  CHECK(run("train --config " + d + "/tiny.cfg --data " + d + "/data --out " + d + "/run") == 0);
  CHECK(fs::exists(dir / "run" / "checkpoint.bin"));
  CHECK(run("train --config " + d + "/missing.cfg --data " + d + "/data --out " + d + "/run2") == 2);

  const std::string ck = d + "/run/checkpoint.bin";
  CHECK(run("attack --checkpoint " + ck + " --data " + d + "/data --steps 2 --out " + d + "/adv") == 0);
  const auto sidecar = nlohmann::json::parse(slurp(dir / "adv" / "attack.json"));
  CHECK(sidecar["max_linf"].get<double>() <= 8.0);
  CHECK(sidecar["max_linf_saved"].get<double>() <= 8.0);

  CHECK(run("eval --checkpoint " + ck + " --data " + d + "/data --out " + d + "/report.json") == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "report.json")).contains("map"));
  CHECK(fs::exists(dir / "report.csv"));
  CHECK(run("eval --checkpoint " + ck + " --data " + d + "/data --attack sideways --out " + d + "/r.json") == 1);
  CHECK(run("eval --checkpoint " + d + "/nothing.bin --data " + d + "/data --out " + d + "/r.json") == 2);

  CHECK(run("diagnose entanglement --checkpoint " + ck + " --data " + d + "/data --steps 1 --batch 2 --out " + d +
            "/ent.json") == 0);
  CHECK(run("plot --kind entanglement --input " + d + "/ent.json --out " + d + "/ent.png") == 0);
  CHECK(fs::file_size(dir / "ent.png") > 0);
}
