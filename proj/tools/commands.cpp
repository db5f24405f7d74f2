// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "invgrad/rng.hpp"
#include "invgrad/version.hpp"

namespace invgrad::cli {
namespace {

Precision parse_precision(const std::string& p) {
  if (p == "f64") return Precision::f64;
  if (p == "f32") return Precision::f32;
  throw ConfigError("precision must be f32 or f64, got '" + p + "'");
}

std::string layer_name(const Network& net, int worst_layer) {
  if (worst_layer == -1) return "head";
  if (worst_layer == -3) return "input-gradient";
  if (worst_layer < 0) return "-";
  std::ostringstream os;
  os << "layer " << worst_layer;
  switch (net.trunk()[static_cast<size_t>(worst_layer)].kind) {
    case LayerKind::Coupling: os << " (coupling)"; break;
    case LayerKind::Activation: os << " (activation)"; break;
    case LayerKind::Downsample: os << " (downsample)"; break;
  }
  return os.str();
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("optimizer must be adam or sgd, got '" + s + "'");
}

LrSchedule parse_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::Constant;
  if (s == "exp") return LrSchedule::ExpDecay;
  throw ConfigError("schedule must be constant or exp, got '" + s + "'");
}

Tensor draw_input(const Network& net, std::uint64_t seed, MemoryLedger& lg) {
  Rng rng = Rng::stream(seed, 0x717u);
  Tensor x = Tensor::alloc(lg, net.input_shape(), AllocTag::Activation);
  for (std::int64_t i = 0; i < x.size(); ++i) x.set(i, 0.6 * rng.normal());
  return x;
}

void ensure_out_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--out directory is required");
  std::filesystem::create_directories(dir);
}

}  // namespace

StrategyId strategy_from_name(const std::string& name) {
  const auto id = parse_strategy(name);
  if (!id) {
    throw ConfigError(
        "unknown strategy '" + name +
        "' (expected Backprop, Forward, ProjForward, RevBackprop, Moonwalk "
        "or Mixed)");
  }
  return *id;
}

NetworkSpec NetOptions::to_spec(const std::string& precision) const {
  NetworkSpec spec;
  spec.height = height;
  spec.width = width;
  spec.channels = channels;
  spec.layers_per_block = layers;
  spec.subnet_depth = subnet_depth;
  spec.hidden_width = hidden_width;
  spec.hidden_scale = hidden_scale;
  if (activation == "none") {
    spec.insert_activation = false;
  } else if (activation == "tanh") {
    spec.insert_activation = true;
    spec.activation = ActKind::Tanh;
  } else if (activation == "leaky_relu") {
    spec.insert_activation = true;
    spec.activation = ActKind::LeakyRelu;
  } else {
    throw ConfigError("activation must be none, tanh or leaky_relu, got '" +
                      activation + "'");
  }
  spec.leaky_alpha = leaky_alpha;
  spec.downsample = downsample;
  spec.num_classes = classes;
  spec.init_scale = init_scale;
  spec.precision = parse_precision(precision);
  spec.validate();
  return spec;
}

Dataset DataOptions::make(const NetOptions& net, std::uint64_t seed) const {
  if (!file.empty()) {
    Dataset ds = load_dataset_csv(file);
    if (ds.height != net.height || ds.width != net.width) {
      throw ConfigError("dataset spatial extents do not match the network");
    }
    if (ds.channels > net.channels) {
      throw ConfigError("dataset has more channels than the network input");
    }
    if (ds.num_classes != net.classes) {
      throw ConfigError("dataset class count does not match the network");
    }
    return ds;
  }
  SyntheticSpec spec;
  spec.count = samples;
  spec.height = net.height;
  spec.width = net.width;
  spec.channels = channels;
  spec.num_classes = classes;
  spec.noise = noise;
  if (channels > net.channels) {
    throw ConfigError("dataset channels exceed the network input channels");
  }
  if (classes != net.classes) {
    throw ConfigError("dataset classes must match net classes");
  }
  return generate_dataset(spec, seed);
}

void write_manifest(const CommonOptions& common, const std::string& command) {
  ensure_out_dir(common.out_dir);
  std::ofstream f(common.out_dir + "/manifest.ini");
  if (!f) throw IoError("cannot write manifest in " + common.out_dir);
  // resolved configuration first: re-running with `--config manifest.ini`
  // reproduces the run. The [manifest] section must come last because an
  // INI section header scopes every key after it.
  f << "# resolved configuration (reusable via --config)\n";
  f << '[' << command << "]\n";
  f << common.config_echo;
  f << "\n[manifest]\n";
  f << "command = " << command << '\n';
  f << "version = " << kVersion << '\n';
  f << "seed = " << common.seed << '\n';
  f << "out = " << common.out_dir << '\n';
  f << "precision = " << common.precision << '\n';
  f << "config_file = " << (common.config_path.empty() ? "-"
                                                       : common.config_path)
    << '\n';
}

// ---- gradcheck ----

int cmd_gradcheck(const GradcheckOptions& opt) {
  write_manifest(opt.common, "gradcheck");
  const NetworkSpec spec = opt.net.to_spec(opt.common.precision);
  Network net(spec, opt.common.seed);
  MemoryLedger lg(spec.precision);
  Tensor x0 = draw_input(net, opt.common.seed, lg);
  const int label =
      static_cast<int>(Rng::stream(opt.common.seed, 0x1AB).below(
          static_cast<std::uint64_t>(spec.num_classes)));

  StrategyOptions sopts;
  sopts.seed = opt.common.seed;
  sopts.corrupt_vijp_sign = opt.inject_vijp_fault;

  const GradReport bp = backprop(net, x0, label);
  struct Row {
    StrategyId id;
    CompareResult cmp;
    double threshold;
    std::int64_t peak;
    double ms;
  };
  std::vector<StrategyId> checked{StrategyId::Forward, StrategyId::RevBackprop,
                                  StrategyId::Moonwalk, StrategyId::Mixed};
  if (!opt.strategies.empty()) {
    checked.clear();
    for (const auto& s : opt.strategies) {
      const StrategyId id = strategy_from_name(s);
      if (id == StrategyId::Backprop || id == StrategyId::ProjForward) {
        throw ConfigError("gradcheck checks exact strategies against "
                          "Backprop; cannot select " + s);
      }
      checked.push_back(id);
    }
  }
  std::vector<Row> rows;
  for (StrategyId id : checked) {
    const GradReport r = compute_gradients(net, x0, label, id, sopts);
    const double tol =
        id == StrategyId::RevBackprop ? opt.rev_tolerance : opt.tolerance;
    rows.push_back(
        {id, compare_reports(r, bp), tol, r.peak_tracked_bytes,
         r.wall_time_sec * 1e3});
  }
  // Backprop itself is gated against central finite differences
  const std::vector<double> fd = fd_gradient(net, x0, label, opt.fd_epsilon);
  Row bp_row{StrategyId::Backprop,
             {max_rel_err(flatten_gradients(bp), fd), -2},
             opt.fd_tolerance,
             bp.peak_tracked_bytes,
             bp.wall_time_sec * 1e3};
  rows.insert(rows.begin(), bp_row);

  std::ostringstream csv;
  csv << "strategy,reference,max_rel_err,threshold,worst,peak_bytes,status\n";
  int failures = 0;
  std::printf("%-12s %-12s %13s %10s  %-20s %12s  %s\n", "strategy",
              "reference", "max_rel_err", "threshold", "worst", "peak_bytes",
              "status");
  for (const Row& row : rows) {
    const bool ok = row.cmp.max_rel <= row.threshold;
    failures += !ok;
    const std::string worst = layer_name(net, row.cmp.worst_layer);
    const char* ref =
        row.id == StrategyId::Backprop ? "fin-diff" : "Backprop";
    std::printf("%-12s %-12s %13.3e %10.1e  %-20s %12lld  %s\n",
                std::string(to_string(row.id)).c_str(), ref, row.cmp.max_rel,
                row.threshold, worst.c_str(),
                static_cast<long long>(row.peak),
                ok ? "ok" : "FAIL");
    if (!ok) {
      std::printf("  -> %s gradient mismatch at %s (%.3e > %.1e)\n",
                  std::string(to_string(row.id)).c_str(), worst.c_str(),
                  row.cmp.max_rel, row.threshold);
    }
    char errbuf[32];
    std::snprintf(errbuf, sizeof errbuf, "%.6e", row.cmp.max_rel);
    csv << to_string(row.id) << ',' << ref << ',' << errbuf << ','
        << row.threshold << ',' << worst << ',' << row.peak << ','
        << (ok ? "ok" : "fail") << '\n';
  }
  {
    std::ofstream f(opt.common.out_dir + "/gradcheck.csv", std::ios::binary);
    f << csv.str();
  }
  std::printf("gradcheck: %s\n", failures == 0 ? "all strategies within "
                                                 "tolerance"
                                               : "FAILURES detected");
  x0.free();
  return failures == 0 ? kExitOk : kExitToleranceFailure;
}

// ---- train ----

int cmd_train(const TrainOptions& opt) {
  write_manifest(opt.common, "train");
  const NetworkSpec spec = opt.net.to_spec(opt.common.precision);
  Network net(spec, opt.common.seed);
  const Dataset ds = opt.data.make(opt.net, opt.common.seed);

  TrainConfig cfg;
  cfg.strategy = strategy_from_name(opt.strategy);
  cfg.optimizer = parse_optimizer(opt.optimizer);
  cfg.lr = opt.lr;
  cfg.beta1 = opt.beta1;
  cfg.beta2 = opt.beta2;
  cfg.adam_eps = opt.adam_eps;
  cfg.schedule = parse_schedule(opt.schedule);
  cfg.decay_rate = opt.decay_rate;
  cfg.batch_size = opt.batch_size;
  cfg.epochs = opt.epochs;
  cfg.max_steps = opt.max_steps;
  cfg.seed = opt.common.seed;
  cfg.validate();

  const TrainResult result = train(net, ds, cfg);

  {
    std::ofstream f(opt.common.out_dir + "/trace.csv", std::ios::binary);
    if (!f) throw IoError("cannot write trace.csv");
    f << "step,loss,accuracy,grad_error,param_drift\n";
    char buf[160];
    for (const TraceRecord& t : result.trace) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", t.step,
                    t.loss, t.accuracy, t.grad_error, t.param_drift);
      f << buf;
    }
  }
  save_checkpoint(net, opt.common.config_echo,
                  opt.common.out_dir + "/checkpoint.bin");

  if (result.diverged) {
    std::printf("train: DIVERGED at step %d (loss non-finite or above "
                "threshold); partial trace written\n",
                result.diverged_step);
  } else if (!result.trace.empty()) {
    const TraceRecord& last = result.trace.back();
    std::printf("train: %zu steps, final loss %.6f, accuracy %.3f, peak "
                "tracked bytes %lld\n",
                result.trace.size(), last.loss, last.accuracy,
                static_cast<long long>(result.peak_tracked_bytes));
  } else {
    std::printf("train: no steps executed (epochs = 0); checkpoint equals "
                "initialization\n");
  }
  return kExitOk;
}

// ---- bench ----

int cmd_bench(const BenchOptions& opt) {
  write_manifest(opt.common, "bench");
  SweepConfig cfg;
  cfg.base = opt.net.to_spec(opt.common.precision);
  if (!opt.strategies.empty()) {
    cfg.strategies.clear();
    for (const auto& s : opt.strategies) {
      cfg.strategies.push_back(strategy_from_name(s));
    }
  }
  cfg.layers_grid = opt.layers_grid;
  cfg.channel_grid = opt.channel_grid;  // empty grid follows net channels
  cfg.time_reps = opt.time_reps;
  cfg.seed = opt.common.seed;
  cfg.forward_budget_mega_ops = opt.forward_budget_mops;
  cfg.measure_error = opt.measure_error;

  const std::vector<SweepRow> rows = run_sweep(cfg);
  write_sweep_outputs(rows, opt.common.out_dir);

  // quick scaling summary per strategy (peak bytes vs trunk depth)
  for (StrategyId id : cfg.strategies) {
    std::vector<double> x, y;
    for (const SweepRow& r : rows) {
      if (r.strategy == id && !r.skipped) {
        x.push_back(static_cast<double>(r.L_total));
        y.push_back(static_cast<double>(r.peak_bytes));
      }
    }
    if (x.size() < 2) continue;
    const FitResult f = fit_scaling(x, y);
    std::printf("bench: %-12s peak-vs-depth slope %.1f B/layer (R^2 %.3f)\n",
                std::string(to_string(id)).c_str(), f.slope, f.r2);
  }
  std::printf("bench: wrote %zu rows to %s/sweep.csv\n", rows.size(),
              opt.common.out_dir.c_str());
  return kExitOk;
}

// ---- compare ----

int cmd_compare(const CompareOptions& opt) {
  write_manifest(opt.common, "compare");
  const NetworkSpec spec = opt.net.to_spec(opt.common.precision);
  const Dataset ds = opt.data.make(opt.net, opt.common.seed);

  TrainConfig base;
  base.lr = opt.lr;
  base.optimizer = parse_optimizer(opt.optimizer);
  base.batch_size = opt.batch_size;
  base.seed = opt.common.seed;

  std::vector<StrategyId> arms;
  for (const auto& s : opt.strategies) arms.push_back(strategy_from_name(s));
  const StrategyId oracle = strategy_from_name(opt.oracle);
  if (opt.steps < 1 || opt.repetitions < 1) {
    throw ConfigError("compare needs steps >= 1 and repetitions >= 1");
  }

  // mean error curves over repetitions (fresh net seed per repetition);
  // a diverged repetition truncates its arm's curve
  std::vector<std::vector<double>> mean(
      arms.size(), std::vector<double>(static_cast<size_t>(opt.steps), 0.0));
  std::vector<size_t> tracked(arms.size(),
                              static_cast<size_t>(opt.steps));
  std::vector<bool> diverged(arms.size(), false);
  for (int rep = 0; rep < opt.repetitions; ++rep) {
    TrainConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(rep);
    const auto result = gradient_error_tracking(
        spec, opt.common.seed + static_cast<std::uint64_t>(rep), ds, cfg,
        arms, oracle, opt.steps);
    for (size_t a = 0; a < arms.size(); ++a) {
      diverged[a] = diverged[a] || result[a].diverged;
      tracked[a] = std::min(tracked[a], result[a].errors.size());
      for (size_t t = 0; t < result[a].errors.size(); ++t) {
        mean[a][t] += result[a].errors[t] / opt.repetitions;
      }
    }
  }

  {
    std::ofstream f(opt.common.out_dir + "/gradient_errors.csv",
                    std::ios::binary);
    if (!f) throw IoError("cannot write gradient_errors.csv");
    f << "step";
    for (StrategyId id : arms) f << ',' << to_string(id);
    f << '\n';
    char buf[40];
    for (int t = 0; t < opt.steps; ++t) {
      f << t;
      for (size_t a = 0; a < arms.size(); ++a) {
        f << ',';
        if (static_cast<size_t>(t) < tracked[a]) {
          std::snprintf(buf, sizeof buf, "%.9e",
                        mean[a][static_cast<size_t>(t)]);
          f << buf;
        }
      }
      f << '\n';
    }
  }

  // summary: final error, error trend, stability flag
  double min_final = 1e300;
  for (size_t a = 0; a < arms.size(); ++a) {
    if (tracked[a] > 0) {
      min_final = std::min(min_final, mean[a][tracked[a] - 1]);
    }
  }
  for (size_t a = 0; a < arms.size(); ++a) {
    const std::string name(to_string(arms[a]));
    if (tracked[a] < 2) {
      std::printf("compare: %-12s DIVERGED before step 2 flag=UNSTABLE\n",
                  name.c_str());
      continue;
    }
    std::vector<double> xs(tracked[a]);
    for (size_t t = 0; t < tracked[a]; ++t) xs[t] = static_cast<double>(t);
    const FitResult f = fit_scaling(
        xs, std::span<const double>(mean[a].data(), tracked[a]));
    const double final_err = mean[a][tracked[a] - 1];
    const bool unstable =
        diverged[a] ||
        (final_err >= 10 * std::max(min_final, 1e-300) && f.slope >= 0);
    std::printf("compare: %-12s final_rel_err %.3e trend %s%s%s\n",
                name.c_str(), final_err,
                f.slope >= 0 ? "non-decreasing" : "decreasing",
                diverged[a] ? " DIVERGED" : "",
                unstable ? " flag=UNSTABLE" : "");
  }
  std::printf("compare: wrote %s/gradient_errors.csv\n",
              opt.common.out_dir.c_str());
  return kExitOk;
}

// ---- dataset gen ----

int cmd_dataset_gen(const DatasetGenOptions& opt) {
  SyntheticSpec spec;
  spec.count = opt.samples;
  spec.height = opt.height;
  spec.width = opt.width;
  spec.channels = opt.channels;
  spec.num_classes = opt.classes;
  spec.noise = opt.noise;
  const Dataset ds = generate_dataset(spec, opt.seed);
  if (const auto parent = std::filesystem::path(opt.out_file).parent_path();
      !parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  save_dataset_csv(ds, opt.out_file);
  std::printf("dataset gen: wrote %zu samples (%lldx%lldx%lld, %d classes) "
              "to %s\n",
              ds.samples.size(), static_cast<long long>(ds.height),
              static_cast<long long>(ds.width),
              static_cast<long long>(ds.channels), ds.num_classes,
              opt.out_file.c_str());
  return kExitOk;
}

}  // namespace invgrad::cli
