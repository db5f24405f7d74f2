// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invgrad/tensor.hpp"

namespace invgrad {

struct Sample {
  int label = 0;
  std::vector<double> values;  // row-major h x w x c
};

struct Dataset {
  std::int64_t height = 8;
  std::int64_t width = 8;
  std::int64_t channels = 1;
  int num_classes = 2;
  std::vector<Sample> samples;
};

// Procedural "ring vs cluster" images: class 0 is a centered blob, higher
// classes are rings of growing radius, all with additive Gaussian noise.
struct SyntheticSpec {
  std::int64_t count = 64;
  std::int64_t height = 8;
  std::int64_t width = 8;
  std::int64_t channels = 1;
  int num_classes = 2;
  double noise = 0.1;
};

Dataset generate_dataset(const SyntheticSpec& spec, std::uint64_t seed);

// Text format: one header line `count,height,width,channels,classes`, then
// per sample `label,v0,v1,...` with full round-trip float precision.
void save_dataset_csv(const Dataset& ds, const std::string& path);
Dataset load_dataset_csv(const std::string& path);

// Sample -> network input: zero-pads the channel dimension up to
// `target_channels`.
Tensor sample_to_input(const Dataset& ds, const Sample& s,
                       std::int64_t target_channels, MemoryLedger& ledger,
                       AllocTag tag = AllocTag::Activation);

}  // namespace invgrad
