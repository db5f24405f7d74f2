// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invgrad/dataset.hpp"
#include "invgrad/strategies.hpp"

namespace invgrad {

enum class OptimizerKind { Sgd, Adam };
enum class LrSchedule { Constant, ExpDecay };

struct TrainConfig {
  StrategyId strategy = StrategyId::Backprop;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LrSchedule schedule = LrSchedule::Constant;
  double decay_rate = 0.999;  // lr_t = lr * rate^t
  int batch_size = 8;
  int epochs = 1;
  int max_steps = 0;  // 0 = run all epochs
  std::uint64_t seed = 0;
  double divergence_loss = 1e6;

  void validate() const;
};

struct TraceRecord {
  int step = 0;
  double loss = 0;
  double accuracy = 0;
  double grad_error = -1;  // relative L2 vs oracle; -1 when not tracked
  double param_drift = 0;  // L2 distance from the initial parameters
};

struct TrainResult {
  std::vector<TraceRecord> trace;
  bool diverged = false;
  int diverged_step = -1;
  std::int64_t peak_tracked_bytes = 0;  // max over per-sample gradient runs
};

// First-moment/second-moment state lives in its own ledger under the
// Parameter tag, so optimizer state never counts toward tracked peaks.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::int64_t param_count);
  // step_index starts at 0; applies the update through net.set_param.
  void step(Network& net, std::span<const double> grad, int step_index);
  double lr_at(int step_index) const;

 private:
  TrainConfig cfg_;
  MemoryLedger state_ledger_;
  Tensor m_;
  Tensor v_;
};

TrainResult train(Network& net, const Dataset& ds, const TrainConfig& cfg);

// Mean gradient over a batch of samples; also reports mean loss, accuracy
// and the worst per-sample tracked peak.
struct BatchGrad {
  std::vector<double> grad;  // flat, trunk layers then head
  double loss = 0;
  double accuracy = 0;
  std::int64_t peak_tracked_bytes = 0;
};
BatchGrad batch_gradient(const Network& net, const Dataset& ds,
                         std::span<const std::int64_t> indices,
                         StrategyId strategy, const StrategyOptions& opts);

// Two (or more) training arms stepping with their own strategies while an
// oracle strategy is evaluated at each arm's current parameters every step.
struct ErrorTrackArm {
  StrategyId strategy = StrategyId::Backprop;
  std::vector<double> errors;  // per-step relative L2 vs oracle
  bool diverged = false;
};
std::vector<ErrorTrackArm> gradient_error_tracking(
    const NetworkSpec& spec, std::uint64_t net_seed, const Dataset& ds,
    const TrainConfig& base, const std::vector<StrategyId>& arms,
    StrategyId oracle, int steps);

// ---- checkpoints ----
//
// Binary container: magic, version, config echo, per-layer shape table and
// flat little-endian f64 parameter arrays (trunk layers in order, then the
// head). Round-trips bit-exactly.

void save_checkpoint(const Network& net, const std::string& config_echo,
                     const std::string& path);

struct Checkpoint {
  std::uint32_t version = 1;
  std::string config_echo;
  std::vector<std::vector<double>> layer_params;  // trunk then head
};
Checkpoint load_checkpoint(const std::string& path);
void apply_checkpoint(Network& net, const Checkpoint& ck);

}  // namespace invgrad
