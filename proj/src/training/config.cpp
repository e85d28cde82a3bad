// SPDX-License-Identifier: Apache-2.0
#include "training/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "util/error.hpp"
#include "util/fs.hpp"

namespace rdet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("not a number");
  }
  if (used != v.size()) throw std::invalid_argument("not a number");
  return d;
}

long long parse_int(const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("not an integer");
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("not an unsigned integer");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true/false");
}

using Setter = std::function<void(TrainConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"variant", [](TrainConfig& c, const std::string& v) { c.variant = parse_variant(v); }},
      {"epochs", [](TrainConfig& c, const std::string& v) { c.epochs = static_cast<int>(parse_int(v)); }},
      {"pretrain_epochs",
       [](TrainConfig& c, const std::string& v) { c.pretrain_epochs = static_cast<int>(parse_int(v)); }},
      {"batch_size", [](TrainConfig& c, const std::string& v) { c.batch_size = static_cast<int>(parse_int(v)); }},
      {"learning_rate", [](TrainConfig& c, const std::string& v) { c.learning_rate = parse_double(v); }},
      {"momentum", [](TrainConfig& c, const std::string& v) { c.momentum = parse_double(v); }},
      {"weight_decay", [](TrainConfig& c, const std::string& v) { c.weight_decay = parse_double(v); }},
      {"attack.steps",
       [](TrainConfig& c, const std::string& v) { c.attack.steps = static_cast<int>(parse_int(v)); }},
      {"attack.eps", [](TrainConfig& c, const std::string& v) { c.attack.eps = parse_double(v); }},
      {"attack.alpha", [](TrainConfig& c, const std::string& v) { c.attack.alpha = parse_double(v); }},
      {"attack.random_start",
       [](TrainConfig& c, const std::string& v) { c.attack.random_start = parse_bool(v); }},
      {"loss_weights.beta", [](TrainConfig& c, const std::string& v) { c.loss_weights.beta = parse_double(v); }},
      {"loss_weights.a", [](TrainConfig& c, const std::string& v) { c.loss_weights.a = parse_double(v); }},
      {"loss_weights.b", [](TrainConfig& c, const std::string& v) { c.loss_weights.b = parse_double(v); }},
      {"loss_weights.c", [](TrainConfig& c, const std::string& v) { c.loss_weights.c = parse_double(v); }},
      {"cfr_enabled", [](TrainConfig& c, const std::string& v) { c.cfr_enabled = parse_bool(v); }},
      {"num_kernels",
       [](TrainConfig& c, const std::string& v) { c.num_kernels = static_cast<int>(parse_int(v)); }},
      {"margin", [](TrainConfig& c, const std::string& v) { c.margin = parse_double(v); }},
      {"augment", [](TrainConfig& c, const std::string& v) { c.augment = parse_bool(v); }},
      {"seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_u64(v); }},
  };
  return table;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void validate_loss_weights(const LossWeights& w) {
  for (double v : {w.beta, w.a, w.b, w.c}) {
    require(std::isfinite(v) && v >= 0.0, ErrorKind::Parameter, "loss weights must be non-negative");
  }
}

double total_loss(double l_det, double l_aid, double l_re, double l_kld, const LossWeights& w) {
  const std::pair<const char*, double> parts[] = {
      {"L_det", l_det}, {"L_aid", l_aid}, {"L_re", l_re}, {"L_kld", l_kld}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, std::string("non-finite loss component ") + name);
  }
  return w.beta * (l_det + w.a * l_aid) + w.b * l_re + w.c * l_kld;
}

Variant TrainConfig::effective_variant() const {
  if (cfr_enabled && variant == Variant::RobustDet) return Variant::RobustDetCfr;
  return variant;
}

void validate_train_config(const TrainConfig& cfg) {
  require(cfg.epochs >= 0 && cfg.pretrain_epochs >= 0, ErrorKind::Parameter,
          "epoch counts must be non-negative");
  require(cfg.batch_size >= 2 && cfg.batch_size % 2 == 0, ErrorKind::Parameter,
          "batch_size must be even and at least 2");
  require(std::isfinite(cfg.learning_rate) && cfg.learning_rate >= 0.0, ErrorKind::Parameter,
          "learning_rate must be non-negative");
  require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, ErrorKind::Parameter, "momentum must lie in [0,1)");
  require(cfg.weight_decay >= 0.0, ErrorKind::Parameter, "weight_decay must be non-negative");
  require(cfg.num_kernels >= 1, ErrorKind::Parameter, "num_kernels must be at least 1");
  require(cfg.margin > 0.0, ErrorKind::Parameter, "margin must be positive");
  require(!cfg.cfr_enabled || cfg.variant == Variant::RobustDet || cfg.variant == Variant::RobustDetCfr,
          ErrorKind::Parameter, "cfr_enabled requires the robustdet variant");
  validate_attack_config(cfg.attack);
  validate_loss_weights(cfg.loss_weights);
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(number) + ": ";
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::Parameter, where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    require(it != setters().end(), ErrorKind::Parameter, where + "unknown key '" + key + "'");
    require(seen.insert(key).second, ErrorKind::Parameter, where + "duplicate key '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail(ErrorKind::Parameter, where + "bad value '" + value + "' for " + key + " (" + e.what() + ")");
    }
  }
  validate_train_config(cfg);
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  return parse_train_config(read_file(path));
}

std::string serialize_train_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "variant = " << variant_name(c.variant) << "\n"
     << "epochs = " << c.epochs << "\n"
     << "pretrain_epochs = " << c.pretrain_epochs << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "learning_rate = " << fmt(c.learning_rate) << "\n"
     << "momentum = " << fmt(c.momentum) << "\n"
     << "weight_decay = " << fmt(c.weight_decay) << "\n"
     << "attack.steps = " << c.attack.steps << "\n"
     << "attack.eps = " << fmt(c.attack.eps) << "\n"
     << "attack.alpha = " << fmt(c.attack.alpha) << "\n"
     << "attack.random_start = " << (c.attack.random_start ? "true" : "false") << "\n"
     << "loss_weights.beta = " << fmt(c.loss_weights.beta) << "\n"
     << "loss_weights.a = " << fmt(c.loss_weights.a) << "\n"
     << "loss_weights.b = " << fmt(c.loss_weights.b) << "\n"
     << "loss_weights.c = " << fmt(c.loss_weights.c) << "\n"
     << "cfr_enabled = " << (c.cfr_enabled ? "true" : "false") << "\n"
     << "num_kernels = " << c.num_kernels << "\n"
     << "margin = " << fmt(c.margin) << "\n"
     << "augment = " << (c.augment ? "true" : "false") << "\n"
     << "seed = " << c.seed << "\n";
  return os.str();
}

}  // namespace rdet
