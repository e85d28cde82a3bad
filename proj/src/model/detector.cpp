// SPDX-License-Identifier: Apache-2.0
#include "model/detector.hpp"

#include <cmath>

#include "nn/ops.hpp"
#include "util/error.hpp"

namespace rdet {

namespace {

constexpr int kSplitGrid = 8;
constexpr int kSplitChannels = 48;
constexpr int kTrunkChannels[] = {48, 64, 64};
constexpr int kTrunkStrides[] = {1, 2, 2};

int stem_blocks(int side) {
  int blocks = 0;
  while ((kSplitGrid << blocks) < side) ++blocks;
  return blocks;
}

int stem_width(int block, int blocks) {
  if (block == blocks - 1) return kSplitChannels;
  return std::min(kSplitChannels, 16 << block);
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Standard: return "standard";
    case Variant::AdversarialTraining: return "at";
    case Variant::RobustDet: return "robustdet";
    case Variant::RobustDetCfr: return "robustdet-cfr";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::Standard, Variant::AdversarialTraining, Variant::RobustDet,
                    Variant::RobustDetCfr}) {
    if (name == variant_name(v)) return v;
  }
  fail(ErrorKind::Parameter,
       "unknown variant '" + name + "' (expected standard, at, robustdet or robustdet-cfr)");
}

bool variant_is_adversarial(Variant v) { return v != Variant::Standard; }

void validate_model_config(const ModelConfig& cfg) {
  require(cfg.num_classes >= 1, ErrorKind::Parameter, "num_classes must be at least 1");
  require(cfg.num_kernels >= 1, ErrorKind::Parameter, "num_kernels must be at least 1");
  require(cfg.height == cfg.width, ErrorKind::Parameter, "the detector needs square images");
  const int side = cfg.height;
  const int blocks = stem_blocks(side);
  require(side >= 64 && (kSplitGrid << blocks) == side, ErrorKind::Parameter,
          "image side must be 8 * 2^k and at least 64, got " + std::to_string(side));
}

Detector::Detector(const ModelConfig& cfg) : cfg_(cfg) {
  validate_model_config(cfg_);
  anchors_ = build_anchors(cfg_.height, cfg_.width, default_scale_specs(cfg_.height, cfg_.width));
  Rng rng(cfg_.seed);
  const int m = cfg_.bank_size();
  const int row = cfg_.num_classes + 5;

  const int blocks = stem_blocks(cfg_.height);
  int in = 3;
  for (int b = 0; b < blocks; ++b) {
    const int out = stem_width(b, blocks);
    Tensor w({out, in, 3, 3});
    const double sd = std::sqrt(2.0 / (in * 9));
    for (double& v : w.values()) v = sd * rng.normal();
    stem_.push_back({Var::leaf(std::move(w)), Var::leaf(Tensor({out}, 0.0)), 2});
    in = out;
  }
  for (int t = 0; t < 3; ++t) {
    trunk_.push_back({make_kernel_bank(m, kTrunkChannels[t], in, 3, rng), kTrunkStrides[t]});
    in = kTrunkChannels[t];
  }
  for (int t = 0; t < 3; ++t) {
    const int a = anchors_.anchors_per_cell[static_cast<std::size_t>(t)];
    heads_.push_back({make_kernel_bank(m, a * row, kTrunkChannels[t], 3, rng), 1});
  }
  // Heads start small so initial class scores are near uniform.
  for (AwareConv& h : heads_) {
    for (double& v : h.bank.weights.mutable_value().values()) v *= 0.1;
  }
  if (cfg_.use_aid()) aid_ = make_aid(m, rng);
  if (cfg_.use_cfr()) cfr_ = make_cfr(kSplitChannels, blocks, rng);
  register_params();
}

void Detector::register_params() {
  params_.clear();
  layers_.clear();
  auto add_layer = [&](const std::string& name, std::initializer_list<std::pair<const char*, Var>> ps) {
    Layer layer{name, {}};
    for (const auto& [suffix, var] : ps) {
      layer.params.push_back(params_.size());
      params_.push_back({name + "." + suffix, var});
    }
    layers_.push_back(std::move(layer));
  };
  for (std::size_t i = 0; i < stem_.size(); ++i) {
    add_layer("b" + std::to_string(i + 1), {{"weight", stem_[i].weight}, {"bias", stem_[i].bias}});
  }
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    add_layer("b" + std::to_string(stem_.size() + i + 1),
              {{"bank", trunk_[i].bank.weights}, {"bank_bias", trunk_[i].bank.biases}});
  }
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    add_layer("head" + std::to_string(i + 1),
              {{"bank", heads_[i].bank.weights}, {"bank_bias", heads_[i].bank.biases}});
  }
  if (aid_) {
    for (std::size_t i = 0; i < aid_->conv_weights.size(); ++i) {
      params_.push_back({"aid.conv" + std::to_string(i) + ".weight", aid_->conv_weights[i]});
      params_.push_back({"aid.conv" + std::to_string(i) + ".bias", aid_->conv_biases[i]});
    }
    params_.push_back({"aid.fc.weight", aid_->fc_weight});
    params_.push_back({"aid.fc.bias", aid_->fc_bias});
  }
  if (cfr_) {
    params_.push_back({"cfr.mu.weight", cfr_->mu_weight});
    params_.push_back({"cfr.mu.bias", cfr_->mu_bias});
    params_.push_back({"cfr.logvar.weight", cfr_->logvar_weight});
    params_.push_back({"cfr.logvar.bias", cfr_->logvar_bias});
    for (std::size_t i = 0; i < cfr_->decoder_weights.size(); ++i) {
      params_.push_back({"cfr.dec" + std::to_string(i) + ".weight", cfr_->decoder_weights[i]});
      params_.push_back({"cfr.dec" + std::to_string(i) + ".bias", cfr_->decoder_biases[i]});
    }
  }
}

Detector Detector::clone() const {
  Detector copy(cfg_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    copy.params_[i].var.mutable_value() = params_[i].var.value();
    copy.params_[i].var.set_requires_grad(params_[i].var.requires_grad());
  }
  return copy;
}

void Detector::zero_grad() const {
  for (const NamedParam& p : params_) {
    Var v = p.var;
    v.zero_grad();
  }
}

void Detector::set_trainable(bool trainable) const {
  for (const NamedParam& p : params_) {
    Var v = p.var;
    v.set_requires_grad(trainable);
  }
}

ForwardResult Detector::forward(const Var& images, const ForwardOptions& opts) const {
  const Tensor& x = images.value();
  require(x.rank() == 4 && x.dim(1) == 3 && x.dim(2) == cfg_.height && x.dim(3) == cfg_.width,
          ErrorKind::Parameter,
          "detector expects (N,3," + std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
              ") images, got " + shape_str(x.shape()));
  const int n = x.dim(0);
  const int m = cfg_.bank_size();
  ForwardResult r;
  if (aid_ && opts.mixture == MixtureSource::Discriminator) {
    r.mixture = aid_forward(*aid_, images);
  } else {
    r.mixture = Var::constant(Tensor({n, m}, 1.0 / m));
  }

  Var h = ops::add_scalar(ops::scale(images, 1.0 / 255.0), -0.5);
  for (const StaticConv& c : stem_) h = ops::relu(ops::conv2d(h, c.weight, c.bias, c.stride, 1));
  if (cfr_) {
    r.encoding = cfr_encode(*cfr_, h);
    h = sample_feature(*r.encoding, opts.mode, opts.noise);
    if (opts.reconstruct) r.reconstruction = reconstruct(*cfr_, h);
  }
  r.features = h;

  std::vector<Var> heads;
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    h = ops::relu(aaconv_forward(h, trunk_[i].bank, r.mixture, trunk_[i].stride, 1));
    heads.push_back(aaconv_forward(h, heads_[i].bank, r.mixture, 1, 1));
  }
  r.predictions = ops::anchor_rows(heads, anchors_.anchors_per_cell, cfg_.num_classes + 5);
  return r;
}

Tensor make_batch(const std::vector<const Tensor*>& images) {
  require(!images.empty(), ErrorKind::Parameter, "empty batch");
  std::vector<Tensor> items;
  items.reserve(images.size());
  for (const Tensor* t : images) items.push_back(*t);
  return stack(items);
}

Tensor batch_item(const Tensor& batch, int n) {
  require(batch.rank() >= 1 && n >= 0 && n < batch.dim(0), ErrorKind::Parameter,
          "batch index out of range");
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t len = shape_size(shape);
  const double* src = batch.data() + len * static_cast<std::size_t>(n);
  return Tensor(std::move(shape), std::vector<double>(src, src + len));
}

ParameterFreeze::ParameterFreeze(const Detector& model) {
  for (const NamedParam& p : model.parameters()) {
    vars_.push_back(p.var);
    flags_.push_back(p.var.requires_grad());
    vars_.back().set_requires_grad(false);
  }
}

ParameterFreeze::~ParameterFreeze() {
  for (std::size_t i = 0; i < vars_.size(); ++i) vars_[i].set_requires_grad(flags_[i]);
}

}  // namespace rdet
