// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invgrad/bench.hpp"
#include "invgrad/trainer.hpp"

namespace invgrad::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitToleranceFailure = 1;
inline constexpr int kExitUsage = 2;

struct NetOptions {
  std::int64_t height = 8;
  std::int64_t width = 8;
  std::int64_t channels = 4;
  std::vector<int> layers{2, 2, 2};
  int subnet_depth = 2;
  std::int64_t hidden_width = 8;
  double hidden_scale = 0.0;
  std::string activation = "none";  // none | tanh | leaky_relu
  double leaky_alpha = 0.1;
  bool downsample = true;
  int classes = 2;
  double init_scale = 1.0;

  NetworkSpec to_spec(const std::string& precision) const;
};

struct DataOptions {
  std::string file;  // empty -> synthetic
  std::int64_t samples = 64;
  std::int64_t channels = 1;
  int classes = 2;
  double noise = 0.1;

  // height/width follow the network input when generating
  Dataset make(const NetOptions& net, std::uint64_t seed) const;
};

struct CommonOptions {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string precision = "f64";
  std::string config_echo;  // resolved configuration, written to the manifest
};

struct GradcheckOptions {
  CommonOptions common;
  NetOptions net;
  std::vector<std::string> strategies;  // empty: all four exact strategies
  double tolerance = 1e-7;
  double rev_tolerance = 1e-6;
  double fd_epsilon = 1e-5;
  double fd_tolerance = 1e-5;
  bool inject_vijp_fault = false;
};
int cmd_gradcheck(const GradcheckOptions& opt);

struct TrainOptions {
  CommonOptions common;
  NetOptions net;
  DataOptions data;
  std::string strategy = "Backprop";
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string schedule = "constant";  // constant | exp
  double decay_rate = 0.999;
  int batch_size = 8;
  int epochs = 1;
  int max_steps = 0;
};
int cmd_train(const TrainOptions& opt);

struct BenchOptions {
  CommonOptions common;
  NetOptions net;
  std::vector<std::string> strategies;  // empty -> all six
  std::vector<int> layers_grid{1, 3, 5, 10};
  std::vector<std::int64_t> channel_grid;  // empty -> net channels
  int time_reps = 0;
  std::int64_t forward_budget_mops = 0;
  bool measure_error = true;
};
int cmd_bench(const BenchOptions& opt);

struct CompareOptions {
  CommonOptions common;
  NetOptions net;
  DataOptions data;
  std::vector<std::string> strategies{"RevBackprop", "Mixed"};
  std::string oracle = "Backprop";
  int steps = 200;
  int repetitions = 1;
  double lr = 1e-3;
  int batch_size = 8;
  std::string optimizer = "adam";
};
int cmd_compare(const CompareOptions& opt);

struct DatasetGenOptions {
  std::string out_file = "dataset.csv";
  std::uint64_t seed = 0;
  std::int64_t samples = 100;
  std::int64_t height = 8;
  std::int64_t width = 8;
  std::int64_t channels = 1;
  int classes = 2;
  double noise = 0.1;
};
int cmd_dataset_gen(const DatasetGenOptions& opt);

// Writes <out>/manifest.ini before any computation starts.
void write_manifest(const CommonOptions& common, const std::string& command);

StrategyId strategy_from_name(const std::string& name);

}  // namespace invgrad::cli
