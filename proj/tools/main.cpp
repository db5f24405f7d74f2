// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <functional>
#include <sstream>
#include <iostream>

#include "commands.hpp"
#include "invgrad/version.hpp"

namespace {

using namespace invgrad;
using namespace invgrad::cli;

void add_common(CLI::App* sub, CommonOptions& c, const char* default_out) {
  c.out_dir = default_out;
  sub->option_defaults()->always_capture_default();
  sub->add_option("--seed", c.seed, "Run seed; fully determines the run");
  sub->add_option("--out", c.out_dir, "Output directory");
  sub->add_option("--precision", c.precision, "Float mode: f64 or f32")
      ->check(CLI::IsMember({"f64", "f32"}));
}

void add_net(CLI::App* sub, NetOptions& n) {
  sub->add_option("--net-height", n.height, "Input height");
  sub->add_option("--net-width", n.width, "Input width");
  sub->add_option("--net-channels", n.channels,
                  "Input channels after padding");
  sub->add_option("--net-layers", n.layers,
                  "Coupling layers per block (one entry per block)");
  sub->add_option("--subnet-depth", n.subnet_depth,
                  "Dense layers inside each coupling subnet");
  sub->add_option("--hidden-width", n.hidden_width,
                  "Absolute hidden width of the subnet");
  sub->add_option("--hidden-scale", n.hidden_scale,
                  "If > 0, hidden width = scale * half-channels per block");
  sub->add_option("--net-activation", n.activation,
                  "Trunk activation after each coupling: none, tanh, "
                  "leaky_relu")
      ->check(CLI::IsMember({"none", "tanh", "leaky_relu"}));
  sub->add_option("--leaky-alpha", n.leaky_alpha, "LeakyReLU slope");
  sub->add_option("--downsample", n.downsample,
                  "Invertible downsampling after each block");
  sub->add_option("--classes", n.classes, "Number of classes");
  sub->add_option("--init-scale", n.init_scale,
                  "Multiplier on the init std-dev");
}

void add_data(CLI::App* sub, DataOptions& d) {
  sub->add_option("--data-file", d.file,
                  "Dataset CSV; empty generates a synthetic set");
  sub->add_option("--data-samples", d.samples, "Synthetic sample count");
  sub->add_option("--data-channels", d.channels,
                  "Raw channels before padding");
  sub->add_option("--data-classes", d.classes, "Synthetic class count");
  sub->add_option("--data-noise", d.noise, "Synthetic noise level");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"invgrad: gradient strategies for invertible networks with "
               "exact memory accounting"};
  app.set_version_flag("--version", invgrad::kVersion);
  app.require_subcommand(1);
  app.fallthrough(true);
  app.set_config("--config", "",
                 "INI config file; sections name subcommands, e.g. [train]");
  app.allow_config_extras(true);

  int rc = kExitOk;
  std::function<int()> runner;
  // Echoes the active subcommand's resolved options; empty-vector defaults
  // serialize as "{}" which the INI reader rejects, so they are dropped.
  const auto echo = [&app](CLI::App* sub, CommonOptions& c) {
    const CLI::Option* cfg = app.get_config_ptr();
    c.config_path = (cfg != nullptr && cfg->count() > 0)
                        ? cfg->as<std::string>()
                        : std::string();
    std::istringstream in(sub->config_to_str(true, false));
    std::string line, body;
    while (std::getline(in, line)) {
      if (line.size() >= 2 && line.compare(line.size() - 2, 2, "{}") == 0) {
        continue;
      }
      body += line;
      body += '\n';
    }
    c.config_echo = body;
  };

  // gradcheck
  GradcheckOptions gc;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Cross-check every strategy's gradients");
  add_common(gradcheck, gc.common, "gradcheck_out");
  add_net(gradcheck, gc.net);
  gradcheck->add_option("--strategy", gc.strategies,
                        "Exact strategies to check (default: all four)");
  gradcheck->add_option("--tolerance", gc.tolerance,
                        "Max relative error vs Backprop");
  gradcheck->add_option("--rev-tolerance", gc.rev_tolerance,
                        "Tolerance for RevBackprop");
  gradcheck->add_option("--fd-eps", gc.fd_epsilon,
                        "Central-difference step size");
  gradcheck->add_option("--fd-tolerance", gc.fd_tolerance,
                        "Tolerance for Backprop vs finite differences");
  gradcheck->add_flag("--inject-vijp-fault", gc.inject_vijp_fault)
      ->group("");  // test hook, hidden from help
  gradcheck->callback([&] {
    echo(gradcheck, gc.common);
    runner = [&gc] { return cmd_gradcheck(gc); };
  });

  // train
  TrainOptions tr;
  CLI::App* train = app.add_subcommand("train", "Run the training loop");
  add_common(train, tr.common, "train_out");
  add_net(train, tr.net);
  add_data(train, tr.data);
  train->add_option("--strategy", tr.strategy, "Gradient strategy");
  train->add_option("--optimizer", tr.optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}));
  train->add_option("--lr", tr.lr, "Learning rate");
  train->add_option("--beta1", tr.beta1, "Adam beta1");
  train->add_option("--beta2", tr.beta2, "Adam beta2");
  train->add_option("--adam-eps", tr.adam_eps, "Adam epsilon");
  train->add_option("--schedule", tr.schedule, "constant or exp")
      ->check(CLI::IsMember({"constant", "exp"}));
  train->add_option("--decay-rate", tr.decay_rate,
                    "Exponential decay rate per step");
  train->add_option("--batch-size", tr.batch_size, "Batch size");
  train->add_option("--epochs", tr.epochs, "Epochs");
  train->add_option("--max-steps", tr.max_steps,
                    "Stop after this many steps (0 = no cap)");
  train->callback([&] {
    echo(train, tr.common);
    runner = [&tr] { return cmd_train(tr); };
  });

  // bench
  BenchOptions be;
  CLI::App* bench = app.add_subcommand(
      "bench", "Sweep strategies across depth/width grids");
  add_common(bench, be.common, "bench_out");
  add_net(bench, be.net);
  bench->add_option("--strategy", be.strategies,
                    "Strategies to sweep (default: all six)");
  bench->add_option("--layers-grid", be.layers_grid,
                    "Layers-per-block grid");
  bench->add_option("--channels-grid", be.channel_grid,
                    "Input channel grid (default: net channels)");
  bench->add_option("--time-reps", be.time_reps,
                    "Timing repetitions per cell (0 disables timing)");
  bench->add_option("--forward-budget-mops", be.forward_budget_mops,
                    "Operation budget for naive Forward cells (Mops, 0 = "
                    "unlimited); cells above it are skipped");
  bench->add_option("--measure-error", be.measure_error,
                    "Record max rel error vs Backprop per cell");
  bench->callback([&] {
    echo(bench, be.common);
    runner = [&be] { return cmd_bench(be); };
  });

  // compare
  CompareOptions co;
  CLI::App* compare = app.add_subcommand(
      "compare", "Track per-step gradient error of strategies vs an oracle");
  add_common(compare, co.common, "compare_out");
  add_net(compare, co.net);
  add_data(compare, co.data);
  compare->add_option("--strategy", co.strategies, "Arm strategies");
  compare->add_option("--oracle", co.oracle, "Oracle strategy");
  compare->add_option("--steps", co.steps, "Tracked steps");
  compare->add_option("--repetitions", co.repetitions,
                      "Runs to average over");
  compare->add_option("--lr", co.lr, "Learning rate");
  compare->add_option("--batch-size", co.batch_size, "Batch size");
  compare->add_option("--optimizer", co.optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}));
  compare->callback([&] {
    echo(compare, co.common);
    runner = [&co] { return cmd_compare(co); };
  });

  // dataset gen
  DatasetGenOptions dg;
  CLI::App* dataset = app.add_subcommand("dataset", "Dataset utilities");
  dataset->require_subcommand(1);
  CLI::App* gen =
      dataset->add_subcommand("gen", "Generate a synthetic dataset CSV");
  gen->option_defaults()->always_capture_default();
  gen->add_option("--out", dg.out_file, "Output CSV path");
  gen->add_option("--seed", dg.seed, "Generation seed");
  gen->add_option("--samples", dg.samples, "Sample count");
  gen->add_option("--height", dg.height, "Image height");
  gen->add_option("--width", dg.width, "Image width");
  gen->add_option("--channels", dg.channels, "Raw channels");
  gen->add_option("--classes", dg.classes, "Class count");
  gen->add_option("--noise", dg.noise, "Noise level");
  gen->callback([&] { runner = [&dg] { return cmd_dataset_gen(dg); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    rc = runner ? runner() : kExitUsage;
  } catch (const invgrad::ConfigError& e) {
    std::cerr << "invgrad: configuration error: " << e.what() << '\n';
    rc = kExitUsage;
  } catch (const invgrad::Error& e) {
    std::cerr << "invgrad: " << e.what() << '\n';
    rc = kExitUsage;
  }
  return rc;
}
