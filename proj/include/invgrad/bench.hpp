// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "invgrad/strategies.hpp"

namespace invgrad {

// Depth/width sweep over gradient strategies. Peaks come from the ledger,
// never from process statistics, so rows are exactly reproducible; timing is
// optional (time_reps = 0 keeps the output fully deterministic).
struct SweepConfig {
  std::vector<StrategyId> strategies{kAllStrategies,
                                     kAllStrategies + 6};
  std::vector<int> layers_grid{1, 3, 5, 10};     // coupling layers per block
  std::vector<std::int64_t> channel_grid;        // empty: use base.channels
  int time_reps = 0;                             // timing repetitions (0 = off)
  std::uint64_t seed = 7;
  std::int64_t forward_budget_mega_ops = 0;      // 0 = unlimited
  bool measure_error = true;                     // max rel err vs Backprop
  NetworkSpec base;                              // template for each cell
};

struct SweepRow {
  StrategyId strategy = StrategyId::Backprop;
  std::int64_t L_total = 0;     // trunk layers (couplings + activations + psi)
  std::int64_t n = 0;           // input elements
  std::int64_t d = 0;           // largest per-layer parameter count
  std::int64_t peak_bytes = 0;
  double time_ms = 0;
  double max_rel_err = 0;
  bool skipped = false;    // budget_skipped rows carry no peak/time/error
  bool has_time = false;
  bool has_err = false;
};

std::vector<SweepRow> run_sweep(const SweepConfig& cfg);

// Ordinary least squares y = slope*x + intercept. R^2 is 1 for a perfect
// fit (including the constant-y case). Throws on degenerate x variance.
struct FitResult {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};
FitResult fit_scaling(std::span<const double> x, std::span<const double> y);

// log-log fit; the slope is the scaling exponent. Requires positive data.
FitResult fit_loglog(std::span<const double> x, std::span<const double> y);

// CSV with the fixed header
// strategy,L_total,n,d,peak_bytes,time_ms,max_rel_err,status
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

// Writes <outdir>/sweep.csv plus <outdir>/peak_bytes.svg and
// <outdir>/time_ms.svg (hand-rolled line charts, presentation only).
void write_sweep_outputs(const std::vector<SweepRow>& rows,
                         const std::string& outdir);

// Dependency-free polyline chart; one series per name/points pair.
struct ChartSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};
std::string render_line_chart(const std::string& title,
                              const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<ChartSeries>& series);

}  // namespace invgrad
