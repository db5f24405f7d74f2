// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "invgrad/trainer.hpp"
#include "test_util.hpp"

using namespace invgrad;

namespace {

NetworkSpec trainer_spec() {
  NetworkSpec spec;
  spec.height = 8;
  spec.width = 8;
  spec.channels = 2;
  spec.layers_per_block = {1, 1, 1};
  spec.subnet_depth = 2;
  spec.hidden_width = 4;
  spec.num_classes = 2;
  return spec;
}

Dataset easy_dataset(std::int64_t count = 32, double noise = 0.02) {
  SyntheticSpec ds;
  ds.count = count;
  ds.height = 8;
  ds.width = 8;
  ds.channels = 1;
  ds.num_classes = 2;
  ds.noise = noise;
  return generate_dataset(ds, 7);
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("one adam step matches the closed-form update") {
  NetworkSpec spec = trainer_spec();
  Network net(spec, 14);
  const std::int64_t d = net.total_param_count();
  std::vector<double> before(static_cast<size_t>(d));
  for (std::int64_t i = 0; i < d; ++i) before[static_cast<size_t>(i)] = net.get_param(i);

  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Adam;
  cfg.lr = 1e-3;
  Optimizer opt(cfg, d);
  Rng rng(3);
  std::vector<double> g = test::rand_vec(d, rng);
  opt.step(net, g, 0);

  // closed form for the first step: m-hat = g, v-hat = g^2
  for (std::int64_t i = 0; i < d; ++i) {
    const double gi = g[static_cast<size_t>(i)];
    const double want = before[static_cast<size_t>(i)] -
                        cfg.lr * gi / (std::sqrt(gi * gi) + cfg.adam_eps);
    CHECK(std::abs(net.get_param(i) - want) <= 1e-12);
  }
}

TEST_CASE("zero learning-rate limit leaves parameters at initialization") {
  // sgd with gradients scaled by lr -> 0 is approximated by lr tending to 0;
  // exact zero lr is rejected, so check epochs = 0 instead plus tiny-lr drift
  NetworkSpec spec = trainer_spec();
  Network net(spec, 10);
  const Dataset ds = easy_dataset(8);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.strategy = StrategyId::Backprop;
  const TrainResult r = train(net, ds, cfg);
  CHECK(r.trace.empty());
  Network fresh(spec, 10);
  for (std::int64_t i = 0; i < net.total_param_count(); ++i) {
    CHECK(net.get_param(i) == fresh.get_param(i));
  }
  CHECK_THROWS_AS(
      [&] {
        TrainConfig bad;
        bad.lr = 0;
        bad.validate();
      }(),
      ConfigError);
}

TEST_CASE("separable synthetic set trains to full accuracy") {
  NetworkSpec spec = trainer_spec();
  Network net(spec, 2);
  const Dataset ds = easy_dataset(32, 0.01);
  TrainConfig cfg;
  cfg.strategy = StrategyId::Mixed;
  cfg.optimizer = OptimizerKind::Adam;
  cfg.lr = 5e-3;
  cfg.batch_size = 8;
  cfg.epochs = 50;
  cfg.max_steps = 200;
  cfg.seed = 3;
  const TrainResult r = train(net, ds, cfg);
  REQUIRE(!r.trace.empty());
  CHECK(!r.diverged);
  // evaluate on the full set after training
  MemoryLedger lg;
  int correct = 0;
  for (const Sample& s : ds.samples) {
    Tensor x0 = sample_to_input(ds, s, spec.channels, lg);
    const GradReport rep = backprop(net, x0, s.label);
    correct += rep.predicted_label == s.label;
    x0.free();
  }
  CHECK(correct == static_cast<int>(ds.samples.size()));
}

TEST_CASE("twin runs with shared seed are deterministic, and exact strategies track each other") {
  NetworkSpec spec = trainer_spec();
  const Dataset ds = easy_dataset(16);
  TrainConfig cfg;
  cfg.strategy = StrategyId::Backprop;
  cfg.lr = 2e-3;
  cfg.batch_size = 4;
  cfg.epochs = 100;
  cfg.max_steps = 100;
  cfg.seed = 11;

  Network a(spec, 11);
  const TrainResult ra = train(a, ds, cfg);
  Network b(spec, 11);
  const TrainResult rb = train(b, ds, cfg);
  REQUIRE(ra.trace.size() == rb.trace.size());
  for (size_t i = 0; i < ra.trace.size(); ++i) {
    CHECK(ra.trace[i].loss == rb.trace[i].loss);  // bit-identical
    CHECK(ra.trace[i].param_drift == rb.trace[i].param_drift);
  }
  for (std::int64_t i = 0; i < a.total_param_count(); ++i) {
    CHECK(a.get_param(i) == b.get_param(i));
  }

  // a Moonwalk twin diverges only by floating-point reordering
  TrainConfig cfg_mw = cfg;
  cfg_mw.strategy = StrategyId::Moonwalk;
  Network c(spec, 11);
  const TrainResult rc = train(c, ds, cfg_mw);
  REQUIRE(rc.trace.size() == ra.trace.size());
  double rel = 0;
  for (std::int64_t i = 0; i < a.total_param_count(); ++i) {
    const double denom =
        std::max({std::abs(a.get_param(i)), std::abs(c.get_param(i)), 1e-6});
    rel = std::max(rel, std::abs(a.get_param(i) - c.get_param(i)) / denom);
  }
  CHECK(rel <= 1e-6);
}

TEST_CASE("gradient error tracking: an exact arm against itself is zero") {
  NetworkSpec spec = trainer_spec();
  const Dataset ds = easy_dataset(8);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.seed = 5;
  const auto arms = gradient_error_tracking(spec, 5, ds, cfg,
                                            {StrategyId::Backprop},
                                            StrategyId::Backprop, 5);
  REQUIRE(arms.size() == 1);
  for (double e : arms[0].errors) CHECK(e == 0.0);
}

TEST_CASE("checkpoint save/load round-trips bit-exactly") {
  NetworkSpec spec = trainer_spec();
  Network net(spec, 123);
  const std::string path = temp_path("invgrad_ck_test.bin");
  save_checkpoint(net, "example = 1\n", path);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.version == 1);
  CHECK(ck.config_echo == "example = 1\n");
  REQUIRE(static_cast<int>(ck.layer_params.size()) == net.trunk_size() + 1);

  Network other(spec, 456);  // different init, overwritten by the checkpoint
  apply_checkpoint(other, ck);
  for (std::int64_t i = 0; i < net.total_param_count(); ++i) {
    CHECK(other.get_param(i) == net.get_param(i));
  }

  // corrupting the magic is rejected
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTACKPT";
  }
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("dataset generation is deterministic and loads back identically") {
  SyntheticSpec spec;
  spec.count = 20;
  spec.num_classes = 3;
  const Dataset a = generate_dataset(spec, 7);
  const Dataset b = generate_dataset(spec, 7);
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK(a.samples[i].values == b.samples[i].values);
  }
  const Dataset c = generate_dataset(spec, 8);
  bool any_diff = false;
  for (size_t i = 0; i < a.samples.size() && !any_diff; ++i) {
    any_diff = a.samples[i].values != c.samples[i].values;
  }
  CHECK(any_diff);

  const std::string path = temp_path("invgrad_ds_test.csv");
  save_dataset_csv(a, path);
  const Dataset loaded = load_dataset_csv(path);
  CHECK(loaded.height == a.height);
  CHECK(loaded.num_classes == a.num_classes);
  REQUIRE(loaded.samples.size() == a.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(loaded.samples[i].label == a.samples[i].label);
    CHECK(loaded.samples[i].values == a.samples[i].values);  // %.17g exact
  }
  std::filesystem::remove(path);
}

TEST_CASE("dataset loader reports offending rows") {
  const std::string path = temp_path("invgrad_ds_bad.csv");
  {
    std::ofstream f(path);
    f << "2,1,1,1,2\n";
    f << "0,0.5\n";
    f << "7,0.25\n";  // label out of range
  }
  try {
    load_dataset_csv(path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    CHECK(std::string(e.what()).find("label 7") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("divergence is recorded and halts the run") {
  NetworkSpec spec = trainer_spec();
  Network net(spec, 4);
  const Dataset ds = easy_dataset(8);
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.lr = 1e9;  // blows the loss past the divergence threshold
  cfg.batch_size = 4;
  cfg.epochs = 50;
  cfg.seed = 2;
  const TrainResult r = train(net, ds, cfg);
  CHECK(r.diverged);
  CHECK(r.diverged_step >= 0);
}

TEST_CASE("exponential decay schedule shrinks the step size") {
  TrainConfig cfg;
  cfg.schedule = LrSchedule::ExpDecay;
  cfg.lr = 1.0;
  cfg.decay_rate = 0.5;
  Optimizer opt(cfg, 1);
  CHECK(opt.lr_at(0) == 1.0);
  CHECK(opt.lr_at(2) == 0.25);
}
