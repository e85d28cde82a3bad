// SPDX-License-Identifier: Apache-2.0
#include "training/checkpoint.hpp"

#include <cstring>

#include <nlohmann/json.hpp>

#include "util/error.hpp"
#include "util/fs.hpp"

namespace rdet {

namespace {

constexpr char kMagic[8] = {'R', 'D', 'E', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_tensor(std::string& out, const Tensor& t) {
  out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Tensor get_tensor(const Shape& shape) {
    Tensor t(shape);
    need(t.size() * sizeof(double));
    std::memcpy(t.data(), bytes_.data() + pos_, t.size() * sizeof(double));
    pos_ += t.size() * sizeof(double);
    return t;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= end_, ErrorKind::Integrity, "checkpoint is truncated");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

nlohmann::json model_json(const ModelConfig& m) {
  return {{"variant", variant_name(m.variant)}, {"height", m.height},      {"width", m.width},
          {"num_classes", m.num_classes},       {"num_kernels", m.num_kernels}, {"seed", m.seed}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.variant = parse_variant(j.at("variant").get<std::string>());
  m.height = j.at("height").get<int>();
  m.width = j.at("width").get<int>();
  m.num_classes = j.at("num_classes").get<int>();
  m.num_kernels = j.at("num_kernels").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

}  // namespace

Checkpoint make_checkpoint(const Detector& model, const TrainConfig& train,
                           const OptimizerState& optimizer, int epochs_done) {
  Checkpoint c;
  c.model = model.config();
  c.train = train;
  c.epochs_done = epochs_done;
  for (const NamedParam& p : model.parameters()) c.params.push_back({p.name, p.var.value()});
  c.optimizer = optimizer;
  return c;
}

Detector restore_model(const Checkpoint& ckpt) {
  Detector model(ckpt.model);
  const auto& params = model.parameters();
  require(params.size() == ckpt.params.size(), ErrorKind::Validation,
          "checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, model expects " +
              std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].name == ckpt.params[i].name &&
                params[i].var.shape() == ckpt.params[i].value.shape(),
            ErrorKind::Validation, "checkpoint parameter '" + ckpt.params[i].name + "' does not fit the model");
    Var v = params[i].var;
    v.mutable_value() = ckpt.params[i].value;
  }
  return model;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["model"] = model_json(ckpt.model);
  header["train_config"] = serialize_train_config(ckpt.train);
  header["epochs_done"] = ckpt.epochs_done;
  header["optimizer_step"] = ckpt.optimizer.step;
  header["has_velocity"] = !ckpt.optimizer.velocity.empty();
  nlohmann::json params = nlohmann::json::array();
  for (const NamedTensor& p : ckpt.params) params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  header["params"] = params;
  if (!ckpt.optimizer.velocity.empty()) {
    require(ckpt.optimizer.velocity.size() == ckpt.params.size(), ErrorKind::Parameter,
            "optimizer state does not match the parameter list");
  }
  const std::string head = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, head.size());
  out += head;
  for (const NamedTensor& p : ckpt.params) put_tensor(out, p.value);
  for (std::size_t i = 0; i < ckpt.optimizer.velocity.size(); ++i) {
    require(ckpt.optimizer.velocity[i].shape() == ckpt.params[i].value.shape(), ErrorKind::Parameter,
            "velocity shape mismatch for " + ckpt.params[i].name);
    put_tensor(out, ckpt.optimizer.velocity[i]);
  }
  put<std::uint64_t>(out, fnv1a(out));
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  require(bytes.size() >= sizeof kMagic + 4 && std::memcmp(bytes.data(), kMagic, sizeof kMagic) == 0,
          ErrorKind::Integrity, "not a checkpoint file (bad magic)");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
  require(version == kCheckpointVersion, ErrorKind::Version,
          "checkpoint format version " + std::to_string(version) + " is not supported (expected " +
              std::to_string(kCheckpointVersion) + ")");
  require(bytes.size() >= sizeof kMagic + 4 + 8 + 8, ErrorKind::Integrity, "checkpoint is truncated");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  require(stored == fnv1a(std::string_view(bytes.data(), body)), ErrorKind::Integrity,
          "checkpoint checksum mismatch (truncated or corrupted file)");

  Reader r(bytes, body);
  r.get_string(sizeof kMagic);
  r.get<std::uint32_t>();
  const auto head_len = r.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.get_string(head_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Integrity, std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint c;
  try {
    c.model = model_from_json(header.at("model"));
    c.train = parse_train_config(header.at("train_config").get<std::string>());
    c.epochs_done = header.at("epochs_done").get<int>();
    c.optimizer.step = header.at("optimizer_step").get<std::int64_t>();
    for (const auto& p : header.at("params")) {
      const Shape shape = p.at("shape").get<Shape>();
      c.params.push_back({p.at("name").get<std::string>(), Tensor(shape)});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Integrity, std::string("checkpoint header is malformed: ") + e.what());
  }
  for (NamedTensor& p : c.params) p.value = r.get_tensor(p.value.shape());
  if (header.value("has_velocity", false)) {
    for (const NamedTensor& p : c.params) c.optimizer.velocity.push_back(r.get_tensor(p.value.shape()));
  }
  require(r.done(), ErrorKind::Integrity, "checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

std::uint64_t parameter_hash(const Detector& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const NamedParam& p : model.parameters()) {
    const Tensor& t = p.var.value();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double)), h);
  }
  return h;
}

}  // namespace rdet
