// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "invgrad/layers.hpp"

namespace invgrad {

// Architecture description: blocks of coupling layers, each block followed
// by an invertible downsampling (when enabled), an optional elementwise
// activation after every coupling layer, and a pooled softmax head.
struct NetworkSpec {
  std::int64_t height = 8;
  std::int64_t width = 8;
  std::int64_t channels = 4;            // input channels (after any padding)
  std::vector<int> layers_per_block{2, 2, 2};
  int subnet_depth = 2;
  std::int64_t hidden_width = 8;        // absolute width if hidden_scale == 0
  double hidden_scale = 0.0;            // if > 0: width = scale * c per block
  bool insert_activation = false;       // activation after each coupling
  ActKind activation = ActKind::LeakyRelu;
  double leaky_alpha = 0.1;
  bool downsample = true;               // psi after each block
  int num_classes = 2;
  Precision precision = Precision::f64;
  double init_scale = 1.0;              // multiplier on the He std-dev

  // Throws ConfigError before any allocation happens.
  void validate() const;
};

// A configured network with seeded parameters. Parameters live in the
// network's own ledger under the Parameter tag; gradient strategies run
// against them read-only with their own per-run ledgers.
class Network {
 public:
  Network(const NetworkSpec& spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<LayerSpec>& trunk() const { return trunk_; }
  int trunk_size() const { return static_cast<int>(trunk_.size()); }
  const HeadSpec& head() const { return head_; }

  Shape input_shape() const {
    return Shape::hwc(spec_.height, spec_.width, spec_.channels);
  }
  std::int64_t input_elems() const {
    return spec_.height * spec_.width * spec_.channels;
  }

  // nullptr for parameter-free layers.
  const double* layer_params(int i) const;
  double* mutable_layer_params(int i);
  std::int64_t layer_param_count(int i) const {
    return trunk_[static_cast<size_t>(i)].param_count();
  }
  const double* head_params() const { return head_params_.data(); }
  double* mutable_head_params() { return head_params_.data(); }

  std::int64_t max_layer_param_count() const;
  std::int64_t trunk_param_count() const;
  std::int64_t total_param_count() const {
    return trunk_param_count() + head_.param_count();
  }

  // Flat parameter indexing: trunk layers in order, then the head.
  struct ParamRef {
    int layer;            // trunk index, or -1 for the head
    std::int64_t offset;  // within that layer's flat parameters
  };
  ParamRef locate_param(std::int64_t flat_index) const;
  double get_param(std::int64_t flat_index) const;
  void set_param(std::int64_t flat_index, double v);

  // Rough per-sample cost (multiply-adds) of one trunk+head forward pass;
  // used by deterministic operation-count budget guards.
  std::int64_t forward_cost_ops() const;

  MemoryLedger& param_ledger() { return param_ledger_; }

 private:
  NetworkSpec spec_;
  std::vector<LayerSpec> trunk_;
  HeadSpec head_;
  MemoryLedger param_ledger_;
  std::vector<Tensor> trunk_params_;  // empty (non-live) for d = 0 layers
  Tensor head_params_;
};

// Builds the trunk layer list for a spec (validates first). Exposed so
// tests and tools can inspect shapes without instantiating parameters.
std::vector<LayerSpec> build_trunk(const NetworkSpec& spec);

}  // namespace invgrad
