// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "invgrad/network.hpp"

namespace invgrad {

enum class StrategyId {
  Backprop,
  Forward,
  ProjForward,
  RevBackprop,
  Moonwalk,
  Mixed,
};

inline constexpr StrategyId kAllStrategies[] = {
    StrategyId::Backprop,   StrategyId::Forward,  StrategyId::ProjForward,
    StrategyId::RevBackprop, StrategyId::Moonwalk, StrategyId::Mixed,
};

std::string_view to_string(StrategyId id);
std::optional<StrategyId> parse_strategy(std::string_view name);

// ProjForward is the only estimator; every other strategy computes true
// gradients.
inline bool strategy_is_exact(StrategyId id) {
  return id != StrategyId::ProjForward;
}

struct StrategyOptions {
  std::uint64_t seed = 0;        // ProjForward tangent stream
  std::int64_t phase1_chunk = 1; // basis vectors carried per phase-1 pass
  std::int64_t budget_mega_ops = 0;  // 0 = unlimited; guards O(ndL^2) paths
  bool corrupt_vijp_sign = false;    // fault-injection hook for gradcheck
};

struct GradReport {
  StrategyId strategy = StrategyId::Backprop;
  double loss = 0;
  int predicted_label = -1;
  std::vector<std::vector<double>> layer_grads;  // per trunk layer
  std::vector<double> head_grad;
  std::vector<double> input_grad;  // h0; empty for ProjForward
  std::int64_t peak_tracked_bytes = 0;
  std::int64_t peak_gradient_buffers = 0;  // max simultaneous Gradient tensors
  double wall_time_sec = 0;
  bool stochastic = false;
  std::uint64_t tangent_seed = 0;  // ProjForward only
  LedgerStats ledger;
};

// ---- the six strategies ----

GradReport backprop(const Network& net, const Tensor& x0, int label);
GradReport forward_naive(const Network& net, const Tensor& x0, int label,
                         const StrategyOptions& opts = {});
GradReport proj_forward(const Network& net, const Tensor& x0, int label,
                        std::uint64_t seed);
GradReport rev_backprop(const Network& net, const Tensor& x0, int label);
GradReport moonwalk(const Network& net, const Tensor& x0, int label,
                    const StrategyOptions& opts = {});
GradReport mixed(const Network& net, const Tensor& x0, int label,
                 const StrategyOptions& opts = {});

GradReport compute_gradients(const Network& net, const Tensor& x0, int label,
                             StrategyId id, const StrategyOptions& opts = {});

// ---- phase functions (exposed for tests and ledger inspection) ----

// h0 = dJ/dx0 via one basis tangent pass per input element (optionally
// chunked). No activations are stored across passes.
std::vector<double> moonwalk_phase1_forward(const Network& net,
                                            const Tensor& x0, int label,
                                            MemoryLedger& run_ledger,
                                            const StrategyOptions& opts = {});

struct Phase1ReverseResult {
  std::vector<double> h0;
  std::vector<double> head_grad;
  double loss = 0;
  int predicted = -1;
};

// h0 via a reverse pass that stores only ResidualX (never ResidualTheta);
// the head gradient falls out of the same pass. All stored residuals are
// freed before this returns.
Phase1ReverseResult moonwalk_phase1_reverse(const Network& net,
                                            const Tensor& x0, int label,
                                            MemoryLedger& run_ledger);

// Second forward pass: streams per-layer gradients to `sink`, freeing each
// gradient buffer before the next layer's is allocated. If final_x/final_h
// are given they receive x_L and h_L (allocated in run_ledger).
using GradSink = std::function<void(int layer, std::span<const double> grad)>;
void moonwalk_phase2(const Network& net, const Tensor& x0,
                     std::span<const double> h0, MemoryLedger& run_ledger,
                     const GradSink& sink, const StrategyOptions& opts = {},
                     Tensor* final_x = nullptr, Tensor* final_h = nullptr);

// ---- oracles and comparison helpers ----

// Loss of a plain forward evaluation (workspace memory only).
double forward_loss(const Network& net, const Tensor& x0, int label);

// Central finite differences over every parameter (trunk layers in order,
// then head). Restores parameters bit-exactly. Guarded by a parameter-count
// budget.
std::vector<double> fd_gradient(Network& net, const Tensor& x0, int label,
                                double eps,
                                std::int64_t budget_params = 1'000'000);

// Flattened [trunk gradients..., head gradient].
std::vector<double> flatten_gradients(const GradReport& r);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-3 * linf(b), 1e-30)
double max_rel_err(std::span<const double> a, std::span<const double> b);

struct CompareResult {
  double max_rel = 0;
  int worst_layer = -2;  // trunk index; -1 = head, -2 = none, -3 = h0
};

// Per-layer comparison of two reports (same network).
CompareResult compare_reports(const GradReport& a, const GradReport& b,
                              bool include_h0 = true);

}  // namespace invgrad
