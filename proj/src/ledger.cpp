// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include "invgrad/ledger.hpp"

#include <algorithm>

namespace invgrad {

std::string_view to_string(AllocTag tag) {
  switch (tag) {
    case AllocTag::Activation: return "Activation";
    case AllocTag::ResidualX: return "ResidualX";
    case AllocTag::ResidualTheta: return "ResidualTheta";
    case AllocTag::Parameter: return "Parameter";
    case AllocTag::Gradient: return "Gradient";
    case AllocTag::Tangent: return "Tangent";
    case AllocTag::Cotangent: return "Cotangent";
    case AllocTag::Workspace: return "Workspace";
  }
  return "?";
}

void MemoryLedger::on_alloc(AllocTag tag, std::int64_t bytes) {
  if (bytes < 0) throw LedgerFault("negative allocation size");
  const int t = static_cast<int>(tag);
  live_bytes_[t] += bytes;
  live_count_[t] += 1;
  peak_live_bytes_[t] = std::max(peak_live_bytes_[t], live_bytes_[t]);
  peak_live_count_[t] = std::max(peak_live_count_[t], live_count_[t]);
  if (tracked(tag)) {
    tracked_live_ += bytes;
    peak_tracked_ = std::max(peak_tracked_, tracked_live_);
  }
}

void MemoryLedger::on_free(AllocTag tag, std::int64_t bytes) {
  const int t = static_cast<int>(tag);
  if (live_bytes_[t] < bytes || live_count_[t] < 1) {
    throw LedgerFault("ledger underflow: freeing more than is live under tag " +
                      std::string(to_string(tag)));
  }
  live_bytes_[t] -= bytes;
  live_count_[t] -= 1;
  if (tracked(tag)) tracked_live_ -= bytes;
}

std::int64_t MemoryLedger::total_live_bytes() const {
  std::int64_t sum = 0;
  for (auto b : live_bytes_) sum += b;
  return sum;
}

void MemoryLedger::reset() {
  live_bytes_.fill(0);
  live_count_.fill(0);
  peak_live_bytes_.fill(0);
  peak_live_count_.fill(0);
  tracked_live_ = 0;
  peak_tracked_ = 0;
}

LedgerStats LedgerStats::capture(const MemoryLedger& ledger) {
  LedgerStats s;
  s.peak_tracked_bytes = ledger.peak_tracked_bytes();
  for (int t = 0; t < kNumAllocTags; ++t) {
    s.peak_live_bytes[t] = ledger.peak_live_bytes(static_cast<AllocTag>(t));
    s.peak_live_count[t] = ledger.peak_live_count(static_cast<AllocTag>(t));
  }
  return s;
}

}  // namespace invgrad
