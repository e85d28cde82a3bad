// SPDX-License-Identifier: Apache-2.0
#include "training/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cfr/cfr.hpp"
#include "nn/ops.hpp"
#include "util/error.hpp"
#include "util/fs.hpp"

namespace rdet {

namespace {

constexpr std::uint64_t kNoiseSalt = 1;
constexpr std::uint64_t kTripletSalt = 2;
constexpr std::uint64_t kFlipSalt = 3;
constexpr std::uint64_t kAttackSalt = 1000;

Tensor scaled(const Tensor& t, double k) {
  Tensor out = t;
  for (double& v : out.values()) v *= k;
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

void truncate_lines(const std::filesystem::path& path, std::int64_t keep) {
  std::string kept;
  if (std::filesystem::exists(path)) {
    std::istringstream in(read_file(path));
    std::string line;
    for (std::int64_t i = 0; i < keep && std::getline(in, line); ++i) kept += line + "\n";
  }
  write_file_atomic(path, kept);
}

}  // namespace

LossTerms training_losses(const Detector& model, const Var& images,
                          const std::vector<MatchResult>& matches, std::span<const ImageType> types,
                          const Tensor& recon_target, const TrainConfig& cfg, MixtureSource mixture,
                          std::uint64_t step_seed) {
  Rng noise(derive_seed(step_seed, kNoiseSalt));
  ForwardOptions opts;
  opts.mode = Mode::Train;
  opts.mixture = mixture;
  opts.noise = &noise;
  opts.reconstruct = model.config().use_cfr();
  const ForwardResult r = model.forward(images, opts);

  LossTerms t;
  t.l_det = ops::mean(multibox_loss(r.predictions, matches, model.num_classes(), LossKind::Det));
  t.l_aid = Var::constant(Tensor({1}, 0.0));
  if (model.config().use_aid() && !types.empty()) {
    Rng pick(derive_seed(step_seed, kTripletSalt));
    const auto triplets = sample_triplets(types, pick);
    t.no_triplets = triplets.empty();
    t.l_aid = aid_triplet_loss(r.mixture, triplets, cfg.margin);
  }
  t.l_re = Var::constant(Tensor({1}, 0.0));
  t.l_kld = Var::constant(Tensor({1}, 0.0));
  if (r.encoding) {
    t.l_re = reconstruction_loss(r.reconstruction, recon_target);
    t.l_kld = kld_loss(*r.encoding);
  }
  const LossWeights& w = cfg.loss_weights;
  // Validates finiteness of every component before building the sum.
  total_loss(t.l_det.value()[0], t.l_aid.value()[0], t.l_re.value()[0], t.l_kld.value()[0], w);
  t.total = ops::weighted_sum({t.l_det, t.l_aid, t.l_re, t.l_kld}, {w.beta, w.beta * w.a, w.b, w.c});
  return t;
}

OptimizerState make_optimizer_state(const Detector& model) {
  OptimizerState s;
  for (const NamedParam& p : model.parameters()) s.velocity.emplace_back(p.var.shape(), 0.0);
  return s;
}

void sgd_update(const Detector& model, OptimizerState& opt, double lr, double momentum,
                double weight_decay) {
  const auto& params = model.parameters();
  if (opt.velocity.empty()) opt = make_optimizer_state(model);
  require(opt.velocity.size() == params.size(), ErrorKind::Parameter,
          "optimizer state does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var p = params[i].var;
    if (!p.has_grad()) continue;
    const Tensor& g = p.node()->grad;
    Tensor& v = opt.velocity[i];
    Tensor& w = p.mutable_value();
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = momentum * v[k] + (g[k] + weight_decay * w[k]);
      w[k] -= lr * v[k];
    }
  }
  ++opt.step;
}

Tensor flip_horizontal(const Tensor& chw) {
  require(chw.rank() == 3, ErrorKind::Parameter, "flip expects a (C,H,W) raster");
  Tensor out(chw.shape());
  const int c = chw.dim(0);
  const int h = chw.dim(1);
  const int w = chw.dim(2);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      const std::size_t row = (static_cast<std::size_t>(ch) * h + y) * w;
      for (int x = 0; x < w; ++x) out[row + x] = chw[row + (w - 1 - x)];
    }
  }
  return out;
}

ImageSample flip_horizontal(const ImageSample& sample) {
  ImageSample out{flip_horizontal(sample.pixels), sample.boxes, sample.labels};
  const double w = sample.width();
  for (Box& b : out.boxes) b.px = w - b.px - b.w;
  return out;
}

StepMetrics train_step(const Detector& model, OptimizerState& opt,
                       std::span<const ImageSample* const> batch, const TrainConfig& cfg,
                       StepKind kind, std::int64_t step_index, std::uint64_t step_seed) {
  require(!batch.empty(), ErrorKind::Parameter, "train_step on an empty batch");
  StepMetrics m;
  m.step = step_index;
  m.adversarial = kind == StepKind::Adversarial;

  std::vector<ImageSample> flipped;
  std::vector<const ImageSample*> clean(batch.begin(), batch.end());
  if (cfg.augment) {
    Rng coin(derive_seed(step_seed, kFlipSalt));
    flipped.reserve(clean.size());
    for (auto& s : clean) {
      if (coin.bernoulli(0.5)) {
        flipped.push_back(flip_horizontal(*s));
        s = &flipped.back();
      }
    }
  }

  std::vector<const Tensor*> rows;
  std::vector<const ImageSample*> row_samples;
  std::vector<ImageType> types;
  for (const ImageSample* s : clean) {
    rows.push_back(&s->pixels);
    row_samples.push_back(s);
    types.push_back(ImageType::Clean);
  }

  std::vector<Tensor> adv_items;
  if (m.adversarial) {
    m.attack_kind = step_index % 2 == 0 ? LossKind::Cls : LossKind::Loc;
    std::vector<const ImageSample*> targets;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      if (clean[i]->boxes.empty()) {
        ++m.clean_only;
        continue;
      }
      targets.push_back(clean[i]);
      seeds.push_back(derive_seed(step_seed, kAttackSalt + i));
    }
    if (!targets.empty()) {
      AttackConfig ac = cfg.attack;
      ac.loss_kind = m.attack_kind;
      const Tensor adversarial = pgd_attack_batch(model, targets, ac, seeds);
      for (std::size_t i = 0; i < targets.size(); ++i) {
        adv_items.push_back(batch_item(adversarial, static_cast<int>(i)));
      }
    }
    // Counterparts share their clean image's ground truth and reconstruction target.
    for (std::size_t i = 0; i < targets.size(); ++i) {
      rows.push_back(&adv_items[i]);
      row_samples.push_back(targets[i]);
      types.push_back(ImageType::Adversarial);
    }
  }

  const Var images = Var::leaf(make_batch(rows), false);
  std::vector<const Tensor*> targets;
  for (const ImageSample* s : row_samples) targets.push_back(&s->pixels);
  const Tensor recon_target = model.config().use_cfr() ? scaled(make_batch(targets), 1.0 / 255.0) : Tensor();
  const auto matches = match_samples(model, row_samples);
  const MixtureSource source = m.adversarial ? MixtureSource::Discriminator : MixtureSource::Uniform;
  const std::span<const ImageType> labels =
      m.adversarial ? std::span<const ImageType>(types) : std::span<const ImageType>();

  model.zero_grad();
  const LossTerms t = training_losses(model, images, matches, labels, recon_target, cfg, source, step_seed);
  backward(t.total);

  double sq = 0.0;
  for (const NamedParam& p : model.parameters()) {
    if (!p.var.has_grad()) continue;
    for (double g : p.var.node()->grad.values()) sq += g * g;
  }
  sgd_update(model, opt, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  model.zero_grad();

  m.l_det = t.l_det.value()[0];
  m.l_aid = t.l_aid.value()[0];
  m.l_re = t.l_re.value()[0];
  m.l_kld = t.l_kld.value()[0];
  m.total = t.total.value()[0];
  m.grad_norm = std::sqrt(sq);
  m.images = static_cast<int>(rows.size());
  m.no_triplets = t.no_triplets;
  return m;
}

std::string metrics_json_line(const StepMetrics& m) {
  const nlohmann::json j = {{"step", m.step},
                            {"l_det", m.l_det},
                            {"l_aid", m.l_aid},
                            {"l_re", m.l_re},
                            {"l_kld", m.l_kld},
                            {"total", m.total},
                            {"adversarial", m.adversarial},
                            {"attack", m.adversarial ? loss_kind_name(m.attack_kind) : "none"},
                            {"grad_norm", m.grad_norm},
                            {"images", m.images},
                            {"clean_only", m.clean_only}};
  return j.dump();
}

std::uint64_t model_seed(std::uint64_t train_seed) { return derive_seed(train_seed, 7); }

Checkpoint train(const TrainConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir,
                 const TrainHooks& hooks) {
  validate_train_config(cfg);
  require(data.size() > 0, ErrorKind::Validation, "training dataset is empty");
  for (const ImageSample& s : data.samples) validate_sample(s, data.manifest.num_classes());
  std::filesystem::create_directories(out_dir);
  const auto ckpt_path = out_dir / kCheckpointFile;
  const auto metrics_path = out_dir / kMetricsFile;

  ModelConfig mc;
  mc.variant = cfg.effective_variant();
  mc.height = data.manifest.height;
  mc.width = data.manifest.width;
  mc.num_classes = data.manifest.num_classes();
  mc.num_kernels = cfg.num_kernels;
  mc.seed = model_seed(cfg.seed);

  Detector model(mc);
  OptimizerState opt = make_optimizer_state(model);
  int epochs_done = 0;
  if (std::filesystem::exists(ckpt_path)) {
    Checkpoint prev = load_checkpoint(ckpt_path);
    require(serialize_train_config(prev.train) == serialize_train_config(cfg), ErrorKind::Validation,
            "cannot resume: " + ckpt_path.string() + " was written with a different config");
    model = restore_model(prev);
    opt = prev.optimizer;
    if (opt.velocity.empty()) {
      const std::int64_t step = opt.step;
      opt = make_optimizer_state(model);
      opt.step = step;
    }
    epochs_done = prev.epochs_done;
  }
  truncate_lines(metrics_path, opt.step);

  const int total_epochs = cfg.pretrain_epochs + cfg.epochs;
  const bool adversarial_variant = variant_is_adversarial(mc.variant);
  std::ofstream log(metrics_path, std::ios::app);
  require(static_cast<bool>(log), ErrorKind::Io, "cannot append to " + metrics_path.string());

  for (int epoch = epochs_done; epoch < total_epochs; ++epoch) {
    const bool adv = adversarial_variant && epoch >= cfg.pretrain_epochs;
    const std::size_t per_step = adv ? static_cast<std::size_t>(cfg.batch_size / 2)
                                     : static_cast<std::size_t>(cfg.batch_size);
    Rng order_rng(derive_seed(cfg.seed, 0x5EED0000ULL + static_cast<std::uint64_t>(epoch)));
    const auto order = shuffled(data.size(), order_rng);
    for (std::size_t start = 0; start < order.size(); start += per_step) {
      const std::size_t end = std::min(order.size(), start + per_step);
      // A lone trailing image cannot form a triplet with its counterpart.
      if (adv && end - start < 2) break;
      std::vector<const ImageSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data.samples[order[i]]);
      const std::int64_t step = opt.step;
      const std::uint64_t step_seed = derive_seed(cfg.seed, 0x100000000ULL + static_cast<std::uint64_t>(step));
      const StepMetrics m =
          train_step(model, opt, batch, cfg, adv ? StepKind::Adversarial : StepKind::Clean, step, step_seed);
      log << metrics_json_line(m) << "\n";
      if (hooks.on_step) hooks.on_step(m);
    }
    log.flush();
    save_checkpoint(make_checkpoint(model, cfg, opt, epoch + 1), ckpt_path);
    epochs_done = epoch + 1;
    if (hooks.on_epoch && !hooks.on_epoch(epoch + 1, total_epochs)) break;
  }
  Checkpoint final_ckpt = make_checkpoint(model, cfg, opt, epochs_done);
  if (!std::filesystem::exists(ckpt_path)) save_checkpoint(final_ckpt, ckpt_path);
  return final_ckpt;
}

}  // namespace rdet
