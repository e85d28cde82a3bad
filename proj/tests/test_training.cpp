// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <functional>
#include <random>

#include "nn/ops.hpp"
#include "support.hpp"
#include "training/trainer.hpp"
#include "util/error.hpp"
#include "util/fs.hpp"

using namespace rdet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("rdet_test_training_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Dataset tiny_dataset(int count, std::uint64_t seed) {
  ShapesParams p;
  p.count = count;
  p.seed = seed;
  return generate_shapes_dataset(p);
}

TrainConfig quick_config(Variant v) {
  TrainConfig c;
  c.variant = v;
  c.pretrain_epochs = 1;
  c.epochs = 1;
  c.batch_size = 4;
  c.learning_rate = 0.01;
  c.attack.steps = 1;
  c.seed = 5;
  return c;
}

std::string message_of(const std::function<void()>& f, ErrorKind expected) {
  try {
    f();
  } catch (const Error& e) {
    CHECK(e.kind() == expected);
    return e.what();
  }
  FAIL("expected an error");
  return {};
}

}  // namespace

TEST_CASE("total loss weighting") {
  const LossWeights w{0.75, 3.0, 0.16, 5.0};
  CHECK(total_loss(1, 0, 0, 0, w) == 0.75);
  CHECK(total_loss(0, 1, 0, 0, w) == 2.25);
  CHECK(total_loss(0, 0, 1, 0, w) == 0.16);
  CHECK(total_loss(0, 0, 0, 1, w) == 5.0);
  CHECK(total_loss(2.0, 0.5, 1.0, 0.1, w) == doctest::Approx(0.75 * (2.0 + 1.5) + 0.16 + 0.5).epsilon(1e-15));

  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int t = 0; t < 500; ++t) {
    const LossWeights r{u(g), u(g), u(g), u(g)};
    const double l[4] = {u(g), u(g), u(g), u(g)};
    const double expect = r.beta * l[0] + r.beta * r.a * l[1] + r.b * l[2] + r.c * l[3];
    CHECK(total_loss(l[0], l[1], l[2], l[3], r) == doctest::Approx(expect).epsilon(1e-12));
  }

  const std::string msg = message_of([&] { total_loss(1.0, 0.0, std::nan(""), 0.0, w); }, ErrorKind::Numeric);
  CHECK(msg.find("L_re") != std::string::npos);
  CHECK(message_of([&] { total_loss(1.0, INFINITY, 0.0, 0.0, w); }, ErrorKind::Numeric).find("L_aid") !=
        std::string::npos);
}

TEST_CASE("total loss gradient through the training objective") {
  ModelConfig mc;
  mc.variant = Variant::RobustDetCfr;
  mc.seed = 2;
  const Detector model(mc);
  const Dataset d = tiny_dataset(2, 3);
  Tensor images = make_batch({&d.samples[0].pixels, &d.samples[1].pixels, &d.samples[0].pixels, &d.samples[1].pixels});
  for (std::size_t i = images.size() / 2; i < images.size(); ++i) {
    images[i] = std::clamp(images[i] + ((i * 7919) % 3 == 0 ? 8.0 : -8.0), 0.0, 255.0);
  }
  std::vector<const ImageSample*> rows{&d.samples[0], &d.samples[1], &d.samples[0], &d.samples[1]};
  const auto matches = match_samples(model, rows);
  const std::vector<ImageType> types{ImageType::Clean, ImageType::Clean, ImageType::Adversarial,
                                     ImageType::Adversarial};
  Tensor target = make_batch({&d.samples[0].pixels, &d.samples[1].pixels, &d.samples[0].pixels, &d.samples[1].pixels});
  for (double& v : target.values()) v /= 255.0;
  TrainConfig tc;
  tc.variant = Variant::RobustDetCfr;

  const auto loss = [&] {
    return training_losses(model, Var::constant(images), matches, types, target, tc,
                           MixtureSource::Discriminator, 9)
        .total.value()[0];
  };
  model.zero_grad();
  const LossTerms t = training_losses(model, Var::constant(images), matches, types, target, tc,
                                      MixtureSource::Discriminator, 9);
  CHECK(t.total.value()[0] ==
        doctest::Approx(total_loss(t.l_det.value()[0], t.l_aid.value()[0], t.l_re.value()[0],
                                   t.l_kld.value()[0], tc.loss_weights))
            .epsilon(1e-12));
  backward(t.total);

  std::mt19937_64 g(4);
  int compared = 0;
  for (const NamedParam& p : model.parameters()) {
    if (!p.var.has_grad()) continue;
    const Tensor grad = p.var.grad();
    Tensor& w = Var(p.var).mutable_value();
    const std::size_t i = g() % w.size();
    const auto e = oracle::central_difference(loss, w[i], 1e-5);
    if (!e.smooth) continue;
    CHECK_MESSAGE(oracle::close_rel(grad[i], e.value, 1e-3, 1e-7), p.name);
    ++compared;
  }
  CHECK(compared >= 20);
  model.zero_grad();
}

TEST_CASE("config text") {
  const TrainConfig c = parse_train_config(
      "# comment\nvariant = robustdet\nepochs = 3\nlearning_rate = 0.05\nattack.steps = 5\n"
      "loss_weights.a = 2.5\ncfr_enabled = true\nseed = 17\n");
  CHECK(c.variant == Variant::RobustDet);
  CHECK(c.effective_variant() == Variant::RobustDetCfr);
  CHECK(c.epochs == 3);
  CHECK(c.learning_rate == 0.05);
  CHECK(c.attack.steps == 5);
  CHECK(c.loss_weights.a == 2.5);
  CHECK(c.seed == 17);
  CHECK(serialize_train_config(parse_train_config(serialize_train_config(c))) == serialize_train_config(c));

  const auto line_of = [](const std::string& text) {
    return message_of([&] { parse_train_config(text); }, ErrorKind::Parameter);
  };
  CHECK(line_of("epochs = 3\nbogus = 1\n").find("line 2") != std::string::npos);
  CHECK(line_of("epochs = 3\nepochs = 4\n").find("line 2") != std::string::npos);
  CHECK(line_of("\n\nlearning_rate = fast\n").find("line 3") != std::string::npos);
  CHECK(line_of("batch_size 4\n").find("line 1") != std::string::npos);
  message_of([] { parse_train_config("batch_size = 3\n"); }, ErrorKind::Parameter);
  message_of([] { parse_train_config("variant = yolo\n"); }, ErrorKind::Parameter);
}

TEST_CASE("sgd update") {
  ModelConfig mc;
  mc.seed = 1;
  const Detector model(mc);
  OptimizerState opt = make_optimizer_state(model);
  Var p = model.parameters()[0].var;
  const Tensor before = p.value();
  backward(ops::sum(p));
  sgd_update(model, opt, 0.1, 0.9, 0.0);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(p.value()[i] == doctest::Approx(before[i] - 0.1));
  // Untouched parameters keep their values.
  CHECK(model.parameters()[1].var.value() == make_checkpoint(model, TrainConfig{}, opt, 0).params[1].value);
  model.zero_grad();
  backward(ops::sum(p));
  sgd_update(model, opt, 0.1, 0.9, 0.0);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(p.value()[i] == doctest::Approx(before[i] - 0.1 - 0.19));
  model.zero_grad();
}

TEST_CASE("train steps") {
  const Dataset d = tiny_dataset(4, 6);
  std::vector<const ImageSample*> batch;
  for (const ImageSample& s : d.samples) batch.push_back(&s);

  SUBCASE("zero learning rate leaves parameters unchanged") {
    ModelConfig mc;
    mc.variant = Variant::RobustDet;
    const Detector model(mc);
    OptimizerState opt = make_optimizer_state(model);
    TrainConfig tc = quick_config(Variant::RobustDet);
    tc.learning_rate = 0.0;
    const std::uint64_t before = parameter_hash(model);
    const StepMetrics m = train_step(model, opt, batch, tc, StepKind::Adversarial, 1, 3);
    CHECK(parameter_hash(model) == before);
    CHECK(m.adversarial);
    CHECK(m.attack_kind == LossKind::Loc);
    CHECK(m.images == 8);
    CHECK(m.l_aid >= 0.0);
  }
  SUBCASE("repeated steps fit one batch") {
    ModelConfig mc;
    mc.seed = 4;
    const Detector model(mc);
    OptimizerState opt = make_optimizer_state(model);
    TrainConfig tc = quick_config(Variant::Standard);
    tc.augment = false;
    tc.learning_rate = 0.05;
    double first = 0.0, last = 0.0;
    for (int s = 0; s < 200; ++s) {
      const StepMetrics m = train_step(model, opt, batch, tc, StepKind::Clean, s, 7);
      if (s == 0) first = m.l_det;
      last = m.l_det;
      REQUIRE(std::isfinite(m.l_det));
    }
    CHECK(last < 0.25 * first);
  }
}

TEST_CASE("train runs are reproducible and resumable") {
  const Dataset d = tiny_dataset(8, 7);
  const TrainConfig tc = quick_config(Variant::RobustDet);

  const fs::path a = scratch("a");
  const fs::path b = scratch("b");
  const Checkpoint ca = train(tc, d, a);
  const Checkpoint cb = train(tc, d, b);
  CHECK(ca.epochs_done == 2);
  CHECK(read_file(a / kCheckpointFile) == read_file(b / kCheckpointFile));
  CHECK(read_file(a / kMetricsFile) == read_file(b / kMetricsFile));

  const fs::path c = scratch("c");
  TrainHooks stop;
  stop.on_epoch = [](int done, int) { return done < 1; };
  CHECK(train(tc, d, c, stop).epochs_done == 1);
  CHECK(train(tc, d, c).epochs_done == 2);
  CHECK(read_file(c / kCheckpointFile) == read_file(a / kCheckpointFile));
  CHECK(read_file(c / kMetricsFile) == read_file(a / kMetricsFile));

  TrainConfig other = tc;
  other.learning_rate = 0.02;
  message_of([&] { train(other, d, c); }, ErrorKind::Validation);

  TrainConfig none = tc;
  none.pretrain_epochs = 0;
  none.epochs = 0;
  const Checkpoint c0 = train(none, d, scratch("none"));
  CHECK(c0.epochs_done == 0);
  ModelConfig mc = c0.model;
  const Detector fresh(mc);
  CHECK(parameter_hash(restore_model(c0)) == parameter_hash(fresh));
}

TEST_CASE("checkpoint persistence") {
  const Dataset d = tiny_dataset(4, 8);
  const fs::path dir = scratch("ckpt");
  TrainConfig tc = quick_config(Variant::RobustDetCfr);
  tc.epochs = 0;
  const Checkpoint ck = train(tc, d, dir);
  const std::string bytes = read_file(dir / kCheckpointFile);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.params == ck.params);
  CHECK(back.optimizer.step == ck.optimizer.step);
  CHECK(parameter_hash(restore_model(back)) == parameter_hash(restore_model(ck)));

  message_of([&] { deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)); }, ErrorKind::Integrity);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  message_of([&] { deserialize_checkpoint(flipped); }, ErrorKind::Integrity);
  std::string future = bytes;
  future[8] = 2;
  message_of([&] { deserialize_checkpoint(future); }, ErrorKind::Version);
  message_of([&] { load_checkpoint(dir / "missing.bin"); }, ErrorKind::Io);
}
