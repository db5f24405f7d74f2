// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "invgrad/errors.hpp"

namespace invgrad {

// Every tensor is registered under exactly one tag. ResidualX covers what a
// layer must keep to linearize with respect to its input (ReLU masks, stored
// activation outputs); ResidualTheta covers the extra state needed to also
// linearize with respect to its parameters (dense-layer inputs).
enum class AllocTag : int {
  Activation = 0,
  ResidualX,
  ResidualTheta,
  Parameter,
  Gradient,
  Tangent,
  Cotangent,
  Workspace,
};

inline constexpr int kNumAllocTags = 8;

std::string_view to_string(AllocTag tag);

enum class Precision { f64, f32 };

inline int element_bytes(Precision p) { return p == Precision::f64 ? 8 : 4; }

// Byte counters per tag plus the peak of the tracked sum. Parameter and
// Gradient bytes are deliberately excluded from the tracked peak: the figure
// of interest is the extra memory a strategy needs to produce gradients, not
// the storage for the model or its outputs.
class MemoryLedger {
 public:
  explicit MemoryLedger(Precision precision = Precision::f64)
      : precision_(precision) {}

  MemoryLedger(const MemoryLedger&) = delete;
  MemoryLedger& operator=(const MemoryLedger&) = delete;

  Precision precision() const { return precision_; }

  void on_alloc(AllocTag tag, std::int64_t bytes);
  void on_free(AllocTag tag, std::int64_t bytes);

  std::int64_t live_bytes(AllocTag tag) const {
    return live_bytes_[static_cast<int>(tag)];
  }
  std::int64_t live_count(AllocTag tag) const {
    return live_count_[static_cast<int>(tag)];
  }
  std::int64_t peak_live_bytes(AllocTag tag) const {
    return peak_live_bytes_[static_cast<int>(tag)];
  }
  std::int64_t peak_live_count(AllocTag tag) const {
    return peak_live_count_[static_cast<int>(tag)];
  }

  // Sum of live bytes over all tags except Parameter and Gradient.
  std::int64_t tracked_live_bytes() const { return tracked_live_; }
  std::int64_t peak_tracked_bytes() const { return peak_tracked_; }

  std::int64_t total_live_bytes() const;

  // Explicit reset of all counters; peaks are monotone otherwise.
  void reset();

 private:
  static bool tracked(AllocTag tag) {
    return tag != AllocTag::Parameter && tag != AllocTag::Gradient;
  }

  Precision precision_;
  std::array<std::int64_t, kNumAllocTags> live_bytes_{};
  std::array<std::int64_t, kNumAllocTags> live_count_{};
  std::array<std::int64_t, kNumAllocTags> peak_live_bytes_{};
  std::array<std::int64_t, kNumAllocTags> peak_live_count_{};
  std::int64_t tracked_live_ = 0;
  std::int64_t peak_tracked_ = 0;
};

// Value snapshot of a ledger, safe to copy into reports.
struct LedgerStats {
  std::int64_t peak_tracked_bytes = 0;
  std::array<std::int64_t, kNumAllocTags> peak_live_bytes{};
  std::array<std::int64_t, kNumAllocTags> peak_live_count{};

  std::int64_t peak_bytes(AllocTag tag) const {
    return peak_live_bytes[static_cast<int>(tag)];
  }
  std::int64_t peak_count(AllocTag tag) const {
    return peak_live_count[static_cast<int>(tag)];
  }

  static LedgerStats capture(const MemoryLedger& ledger);
};

}  // namespace invgrad
