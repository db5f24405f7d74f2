// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "invgrad/layers.hpp"
#include "invgrad/network.hpp"
#include "invgrad/rng.hpp"

namespace invgrad::test {

inline Tensor rand_tensor(MemoryLedger& lg, const Shape& shape, Rng& rng,
                          double scale = 1.0,
                          AllocTag tag = AllocTag::Workspace) {
  Tensor t = Tensor::alloc(lg, shape, tag);
  for (std::int64_t i = 0; i < t.size(); ++i) t.set(i, scale * rng.normal());
  return t;
}

inline std::vector<double> rand_vec(std::int64_t n, Rng& rng,
                                    double scale = 1.0) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

// Dense input Jacobian assembled column by column from jvp_input; the
// independent oracle for the vjp/vijp identities on small layers.
inline std::vector<double> assemble_input_jacobian(const LayerSpec& spec,
                                                   const double* theta,
                                                   const Tensor& x,
                                                   MemoryLedger& lg) {
  const std::int64_t n_in = spec.in_shape.elems();
  const std::int64_t n_out = spec.out_shape.elems();
  std::vector<double> jac(static_cast<size_t>(n_in * n_out));
  for (std::int64_t col = 0; col < n_in; ++col) {
    Tensor u = Tensor::alloc(lg, spec.in_shape, AllocTag::Tangent);
    u.set(col, 1.0);
    Tensor ju = jvp_input(spec, theta, x, u, lg);
    for (std::int64_t row = 0; row < n_out; ++row) {
      jac[static_cast<size_t>(row * n_in + col)] = ju[row];
    }
    ju.free();
    u.free();
  }
  return jac;
}

// Central finite difference of layer_forward along tangent u.
inline std::vector<double> fd_directional(const LayerSpec& spec,
                                          const double* theta,
                                          const Tensor& x, const Tensor& u,
                                          MemoryLedger& lg, double eps) {
  Tensor xp = x.clone(lg, AllocTag::Workspace);
  Tensor xm = x.clone(lg, AllocTag::Workspace);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    xp.set(i, x[i] + eps * u[i]);
    xm.set(i, x[i] - eps * u[i]);
  }
  Tensor yp = layer_forward(spec, theta, xp, lg, AllocTag::Workspace);
  Tensor ym = layer_forward(spec, theta, xm, lg, AllocTag::Workspace);
  std::vector<double> d(static_cast<size_t>(yp.size()));
  for (std::int64_t i = 0; i < yp.size(); ++i) {
    d[static_cast<size_t>(i)] = (yp[i] - ym[i]) / (2 * eps);
  }
  ym.free();
  yp.free();
  xm.free();
  xp.free();
  return d;
}

}  // namespace invgrad::test
