// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <vector>

#include "invgrad/rng.hpp"
#include "invgrad/tensor.hpp"

using namespace invgrad;

TEST_CASE("alloc registers bytes and zero-initializes") {
  MemoryLedger lg;
  Tensor t = Tensor::alloc(lg, Shape{2, 2, 4}, AllocTag::Activation);
  CHECK(t.size() == 16);
  for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
  CHECK(lg.live_bytes(AllocTag::Activation) == 128);
  CHECK(lg.peak_tracked_bytes() == 128);
  t.free();
  CHECK(lg.live_bytes(AllocTag::Activation) == 0);
}

TEST_CASE("alloc then free leaves peak behind") {
  MemoryLedger lg;
  Tensor t = Tensor::alloc(lg, Shape{1, 1, 1}, AllocTag::Workspace);
  t.free();
  CHECK(lg.peak_tracked_bytes() >= 8);
  CHECK(lg.tracked_live_bytes() == 0);
}

TEST_CASE("sequential vs simultaneous allocation peaks") {
  const Shape kib{128};  // 128 doubles = 1 KiB
  {
    MemoryLedger lg;
    Tensor a = Tensor::alloc(lg, kib, AllocTag::Workspace);
    a.free();
    Tensor b = Tensor::alloc(lg, kib, AllocTag::Workspace);
    b.free();
    CHECK(lg.peak_tracked_bytes() == 1024);
  }
  {
    MemoryLedger lg;
    Tensor a = Tensor::alloc(lg, kib, AllocTag::Workspace);
    Tensor b = Tensor::alloc(lg, kib, AllocTag::Workspace);
    a.free();
    b.free();
    CHECK(lg.peak_tracked_bytes() == 2048);
  }
}

TEST_CASE("double free and foreign free are ledger faults") {
  MemoryLedger lg;
  Tensor t = Tensor::alloc(lg, Shape{4}, AllocTag::Workspace);
  t.free();
  CHECK_THROWS_AS(t.free(), LedgerFault);
  Tensor never;
  CHECK_THROWS_AS(never.free(), LedgerFault);
  Tensor moved_from = Tensor::alloc(lg, Shape{4}, AllocTag::Workspace);
  Tensor moved_to = std::move(moved_from);
  CHECK_THROWS_AS(moved_from.free(), LedgerFault);
  moved_to.free();
}

TEST_CASE("parameter and gradient bytes stay out of the tracked peak") {
  MemoryLedger lg;
  Tensor p = Tensor::alloc(lg, Shape{1000}, AllocTag::Parameter);
  Tensor g = Tensor::alloc(lg, Shape{1000}, AllocTag::Gradient);
  CHECK(lg.peak_tracked_bytes() == 0);
  Tensor w = Tensor::alloc(lg, Shape{10}, AllocTag::Workspace);
  CHECK(lg.peak_tracked_bytes() == 80);
  CHECK(lg.peak_live_count(AllocTag::Gradient) == 1);
  w.free();
  g.free();
  p.free();
}

TEST_CASE("peak equals max prefix sum of signed byte deltas") {
  // random alloc/free sequences against a hand-simulated ledger
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    MemoryLedger lg;
    std::vector<Tensor> live;
    std::vector<std::int64_t> live_bytes;
    std::int64_t sim_live = 0, sim_peak = 0;
    for (int step = 0; step < 60; ++step) {
      const bool do_alloc = live.empty() || rng.uniform() < 0.55;
      if (do_alloc) {
        const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(64));
        live.push_back(Tensor::alloc(lg, Shape{n}, AllocTag::Workspace));
        live_bytes.push_back(8 * n);
        sim_live += 8 * n;
        sim_peak = std::max(sim_peak, sim_live);
      } else {
        const size_t k = rng.below(live.size());
        live[k].free();
        sim_live -= live_bytes[k];
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(k));
        live_bytes.erase(live_bytes.begin() + static_cast<std::ptrdiff_t>(k));
      }
      CHECK(lg.tracked_live_bytes() == sim_live);
      CHECK(lg.peak_tracked_bytes() >= lg.tracked_live_bytes());
    }
    CHECK(lg.peak_tracked_bytes() == sim_peak);
    for (auto& t : live) t.free();
    CHECK(lg.tracked_live_bytes() == 0);
  }
}

TEST_CASE("identical op sequences give identical peaks") {
  auto run = [] {
    MemoryLedger lg;
    Tensor a = Tensor::alloc(lg, Shape{100}, AllocTag::Activation);
    Tensor b = Tensor::alloc(lg, Shape{50}, AllocTag::Cotangent);
    a.free();
    Tensor c = Tensor::alloc(lg, Shape{70}, AllocTag::Tangent);
    c.free();
    b.free();
    return lg.peak_tracked_bytes();
  };
  CHECK(run() == run());
}

TEST_CASE("size overflow is rejected") {
  MemoryLedger lg;
  CHECK_THROWS_AS(
      Tensor::alloc(lg, Shape{std::int64_t{1} << 32, std::int64_t{1} << 32},
                    AllocTag::Workspace),
      SizeError);
  CHECK_THROWS_AS(Tensor::alloc(lg, Shape{0}, AllocTag::Workspace),
                  ShapeError);
}

TEST_CASE("pad_channels appends zero channels") {
  MemoryLedger lg;
  Tensor t = Tensor::alloc(lg, Shape::hwc(2, 2, 3), AllocTag::Workspace);
  for (std::int64_t i = 0; i < t.size(); ++i) t.set(i, double(i) + 1);
  Tensor p = pad_channels(t, 8, lg);
  CHECK(p.shape() == Shape::hwc(2, 2, 8));
  for (std::int64_t pix = 0; pix < 4; ++pix) {
    for (std::int64_t c = 0; c < 8; ++c) {
      const double want = c < 3 ? t[pix * 3 + c] : 0.0;
      CHECK(p[pix * 8 + c] == want);
    }
  }
  CHECK_THROWS_AS(pad_channels(t, 2, lg), ShapeError);
  Tensor s = slice_channels(p, 0, 3, lg);
  for (std::int64_t i = 0; i < t.size(); ++i) CHECK(s[i] == t[i]);
  s.free();
  p.free();
  t.free();
}

TEST_CASE("matmul and elementwise basics") {
  MemoryLedger lg;
  Tensor eye = Tensor::alloc(lg, Shape{2, 2}, AllocTag::Workspace);
  eye.set(0, 1);
  eye.set(3, 1);
  Tensor v = Tensor::alloc(lg, Shape{2}, AllocTag::Workspace);
  v.set(0, 3.5);
  v.set(1, -2.0);
  Tensor mv = matmul(eye, v, lg);
  CHECK(mv[0] == 3.5);
  CHECK(mv[1] == -2.0);

  Tensor minus = scale(v, -1.0, lg);
  Tensor zero = add(v, minus, lg);
  CHECK(zero[0] == 0.0);
  CHECK(zero[1] == 0.0);

  Tensor bad = Tensor::alloc(lg, Shape{3}, AllocTag::Workspace);
  CHECK_THROWS_AS(add(v, bad, lg), ShapeError);
  CHECK_THROWS_AS(matmul(eye, bad, lg), ShapeError);
  bad.free();
  zero.free();
  minus.free();
  mv.free();
  v.free();
  eye.free();
}

TEST_CASE("f32 mode rounds stores and counts 4 bytes per element") {
  MemoryLedger lg(Precision::f32);
  Tensor t = Tensor::alloc(lg, Shape{4}, AllocTag::Workspace);
  CHECK(lg.live_bytes(AllocTag::Workspace) == 16);
  const double pi = 3.14159265358979323846;
  t.set(0, pi);
  CHECK(t[0] == static_cast<double>(static_cast<float>(pi)));
  CHECK(t[0] != pi);
  t.free();
}
