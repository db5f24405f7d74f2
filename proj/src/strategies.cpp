// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include "invgrad/strategies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "invgrad/rng.hpp"

namespace invgrad {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> tensor_to_vec(const Tensor& t) {
  return std::vector<double>(t.data(), t.data() + t.size());
}

void check_budget(std::int64_t est_ops, const StrategyOptions& opts,
                  const char* what) {
  if (opts.budget_mega_ops > 0 &&
      est_ops > opts.budget_mega_ops * 1'000'000) {
    throw BudgetError(std::string(what) + ": estimated " +
                      std::to_string(est_ops / 1'000'000) +
                      " Mops exceeds budget of " +
                      std::to_string(opts.budget_mega_ops) + " Mops");
  }
}

void check_x0(const Network& net, const Tensor& x0) {
  if (x0.shape() != net.input_shape()) {
    throw ShapeError("input sample shape " + to_string(x0.shape()) +
                     " does not match network input " +
                     to_string(net.input_shape()));
  }
}

// One forward-mode pass over the whole net carrying a single tangent.
// Seeds: an input basis direction, a parameter basis at one layer (trunk
// index or -1 for the head), or Gaussian directions at every parametrized
// layer (stream per layer, replayable).
struct PassSeed {
  std::int64_t input_basis = -1;
  int basis_layer = -2;  // -2 none, -1 head
  std::int64_t basis_index = -1;
  bool gaussian_all = false;
  std::uint64_t gauss_seed = 0;
};

HeadTangentOut tangent_pass(const Network& net, const Tensor& x0, int label,
                            MemoryLedger& lg, const PassSeed& seed) {
  Tensor x = x0.clone(lg, AllocTag::Activation);
  Tensor u = Tensor::alloc(lg, x0.shape(), AllocTag::Tangent);
  if (seed.input_basis >= 0) u.set(seed.input_basis, 1.0);
  for (int i = 0; i < net.trunk_size(); ++i) {
    const LayerSpec& spec = net.trunk()[static_cast<size_t>(i)];
    ParamTangent ptan = ParamTangent::none();
    Rng gauss(0);
    if (seed.basis_layer == i) {
      ptan = ParamTangent::basis(seed.basis_index);
    } else if (seed.gaussian_all && spec.param_count() > 0) {
      gauss = Rng::stream(seed.gauss_seed, static_cast<std::uint64_t>(i));
      ptan = ParamTangent::gaussian(&gauss);
    }
    layer_tangent_inplace(spec, net.layer_params(i), x, u, lg, ptan);
  }
  ParamTangent head_ptan = ParamTangent::none();
  Rng head_gauss(0);
  if (seed.basis_layer == -1) {
    head_ptan = ParamTangent::basis(seed.basis_index);
  } else if (seed.gaussian_all) {
    head_gauss = Rng::stream(seed.gauss_seed,
                             static_cast<std::uint64_t>(net.trunk_size()));
    head_ptan = ParamTangent::gaussian(&head_gauss);
  }
  const HeadTangentOut out =
      head_tangent(net.head(), net.head_params(), x, label, &u, head_ptan);
  u.free();
  x.free();
  return out;
}

// Plain forward walk; returns x_L (in run ledger) for head evaluation.
Tensor primal_forward(const Network& net, const Tensor& x0,
                      MemoryLedger& lg) {
  Tensor x = x0.clone(lg, AllocTag::Activation);
  for (int i = 0; i < net.trunk_size(); ++i) {
    layer_forward_inplace(net.trunk()[static_cast<size_t>(i)],
                          net.layer_params(i), x, lg, Capture::None, nullptr);
  }
  return x;
}

// Head parameter gradient assembled from per-parameter tangent passes
// through the head only; keeps forward-only strategies free of reverse
// steps. Values coincide with the closed-form reverse gradient.
std::vector<double> head_grad_forward(const Network& net, const Tensor& x_l,
                                      int label) {
  const std::int64_t d = net.head().param_count();
  std::vector<double> g(static_cast<size_t>(d));
  for (std::int64_t i = 0; i < d; ++i) {
    g[static_cast<size_t>(i)] =
        head_tangent(net.head(), net.head_params(), x_l, label, nullptr,
                     ParamTangent::basis(i))
            .dloss;
  }
  return g;
}

void finalize_report(GradReport& r, const MemoryLedger& lg,
                     Clock::time_point t0) {
  r.ledger = LedgerStats::capture(lg);
  r.peak_tracked_bytes = r.ledger.peak_tracked_bytes;
  r.peak_gradient_buffers = r.ledger.peak_count(AllocTag::Gradient);
  r.wall_time_sec = seconds_since(t0);
}

}  // namespace

std::string_view to_string(StrategyId id) {
  switch (id) {
    case StrategyId::Backprop: return "Backprop";
    case StrategyId::Forward: return "Forward";
    case StrategyId::ProjForward: return "ProjForward";
    case StrategyId::RevBackprop: return "RevBackprop";
    case StrategyId::Moonwalk: return "Moonwalk";
    case StrategyId::Mixed: return "Mixed";
  }
  return "?";
}

std::optional<StrategyId> parse_strategy(std::string_view name) {
  for (StrategyId id : kAllStrategies) {
    if (name == to_string(id)) return id;
  }
  return std::nullopt;
}

// ---- Backprop ----
//
// Forward pass caching every layer's residuals; reverse pass computing both
// cotangent and parameter gradients. All per-layer gradient buffers stay
// live until the report is assembled.

GradReport backprop(const Network& net, const Tensor& x0, int label) {
  check_x0(net, x0);
  const auto t0 = Clock::now();
  MemoryLedger lg(net.spec().precision);
  GradReport r;
  r.strategy = StrategyId::Backprop;

  const int L = net.trunk_size();
  std::vector<LayerResiduals> res(static_cast<size_t>(L));
  Tensor x = x0.clone(lg, AllocTag::Activation);
  for (int i = 0; i < L; ++i) {
    layer_forward_inplace(net.trunk()[static_cast<size_t>(i)],
                          net.layer_params(i), x, lg, Capture::Full,
                          &res[static_cast<size_t>(i)]);
  }
  r.loss = head_loss(net.head(), net.head_params(), x, label);
  r.predicted_label = head_predict(net.head(), net.head_params(), x);

  std::vector<Tensor> grads(static_cast<size_t>(L));
  Tensor head_g =
      head_param_grad(net.head(), net.head_params(), x, label, lg);
  Tensor v = head_input_grad(net.head(), net.head_params(), x, label, lg);
  x.free();

  for (int i = L - 1; i >= 0; --i) {
    const LayerSpec& spec = net.trunk()[static_cast<size_t>(i)];
    if (spec.param_count() > 0) {
      grads[static_cast<size_t>(i)] = layer_vjp_params(
          spec, net.layer_params(i), res[static_cast<size_t>(i)], v, lg);
    }
    layer_vjp_input_inplace(spec, net.layer_params(i),
                            res[static_cast<size_t>(i)], v, lg);
    res[static_cast<size_t>(i)].free_all();
  }
  r.input_grad = tensor_to_vec(v);
  v.free();

  r.layer_grads.resize(static_cast<size_t>(L));
  for (int i = 0; i < L; ++i) {
    Tensor& g = grads[static_cast<size_t>(i)];
    if (g.live()) {
      r.layer_grads[static_cast<size_t>(i)] = tensor_to_vec(g);
    }
  }
  r.head_grad = tensor_to_vec(head_g);
  for (auto& g : grads) {
    if (g.live()) g.free();
  }
  head_g.free();

  finalize_report(r, lg, t0);
  return r;
}

// ---- Forward ----
//
// One tangent propagation per parameter: the tangent is seeded at the
// parameter's layer and pushed through the remaining trunk and head. The
// input gradient costs n further basis passes. Nothing is stored across
// passes, so memory stays flat in depth while time grows as d*L^2.

GradReport forward_naive(const Network& net, const Tensor& x0, int label,
                         const StrategyOptions& opts) {
  check_x0(net, x0);
  check_budget((net.trunk_param_count() + net.input_elems()) * 2 *
                   net.forward_cost_ops(),
               opts, "forward_naive");
  const auto t0 = Clock::now();
  MemoryLedger lg(net.spec().precision);
  GradReport r;
  r.strategy = StrategyId::Forward;

  const int L = net.trunk_size();
  r.layer_grads.resize(static_cast<size_t>(L));
  for (int i = 0; i < L; ++i) {
    const std::int64_t d = net.layer_param_count(i);
    if (d == 0) continue;
    auto& g = r.layer_grads[static_cast<size_t>(i)];
    g.resize(static_cast<size_t>(d));
    for (std::int64_t k = 0; k < d; ++k) {
      PassSeed seed;
      seed.basis_layer = i;
      seed.basis_index = k;
      g[static_cast<size_t>(k)] = tangent_pass(net, x0, label, lg, seed).dloss;
    }
  }

  // input gradient, one basis pass per input element
  const std::int64_t n = net.input_elems();
  r.input_grad.resize(static_cast<size_t>(n));
  for (std::int64_t e = 0; e < n; ++e) {
    PassSeed seed;
    seed.input_basis = e;
    const HeadTangentOut out = tangent_pass(net, x0, label, lg, seed);
    r.input_grad[static_cast<size_t>(e)] = out.dloss;
    if (e == 0) {
      r.loss = out.loss;
      r.predicted_label = out.predicted;
    }
  }

  // head parameters: tangent passes through the head at x_L
  Tensor x_l = primal_forward(net, x0, lg);
  r.head_grad = head_grad_forward(net, x_l, label);
  x_l.free();

  finalize_report(r, lg, t0);
  return r;
}

// ---- ProjForward ----
//
// Single pass with an i.i.d. standard Gaussian tangent over all parameters;
// the estimate is (dJ/dtheta . u) u. Tangent components are generated from
// per-layer streams during the pass and replayed afterwards, so the full
// tangent never occupies memory.

GradReport proj_forward(const Network& net, const Tensor& x0, int label,
                        std::uint64_t seed) {
  check_x0(net, x0);
  const auto t0 = Clock::now();
  MemoryLedger lg(net.spec().precision);
  GradReport r;
  r.strategy = StrategyId::ProjForward;
  r.stochastic = true;
  r.tangent_seed = seed;

  PassSeed ps;
  ps.gaussian_all = true;
  ps.gauss_seed = seed;
  const HeadTangentOut out = tangent_pass(net, x0, label, lg, ps);
  r.loss = out.loss;
  r.predicted_label = out.predicted;
  const double dj = out.dloss;

  const int L = net.trunk_size();
  r.layer_grads.resize(static_cast<size_t>(L));
  for (int i = 0; i < L; ++i) {
    const std::int64_t d = net.layer_param_count(i);
    if (d == 0) continue;
    Rng replay = Rng::stream(seed, static_cast<std::uint64_t>(i));
    auto& g = r.layer_grads[static_cast<size_t>(i)];
    g.resize(static_cast<size_t>(d));
    for (std::int64_t k = 0; k < d; ++k) {
      g[static_cast<size_t>(k)] = dj * replay.normal();
    }
  }
  Rng replay = Rng::stream(seed, static_cast<std::uint64_t>(L));
  r.head_grad.resize(static_cast<size_t>(net.head().param_count()));
  for (auto& gk : r.head_grad) gk = dj * replay.normal();

  finalize_report(r, lg, t0);
  return r;
}

// ---- RevBackprop ----
//
// Forward pass stores nothing; the backward pass reconstructs each layer
// input from its output via the inverse function, recomputes the residuals
// locally, and applies the usual vjp steps. Exact in exact arithmetic but
// sensitive to reconstruction rounding.

GradReport rev_backprop(const Network& net, const Tensor& x0, int label) {
  check_x0(net, x0);
  const auto t0 = Clock::now();
  MemoryLedger lg(net.spec().precision);
  GradReport r;
  r.strategy = StrategyId::RevBackprop;

  const int L = net.trunk_size();
  r.layer_grads.resize(static_cast<size_t>(L));
  Tensor x = primal_forward(net, x0, lg);
  r.loss = head_loss(net.head(), net.head_params(), x, label);
  r.predicted_label = head_predict(net.head(), net.head_params(), x);
  {
    Tensor head_g =
        head_param_grad(net.head(), net.head_params(), x, label, lg);
    r.head_grad = tensor_to_vec(head_g);
    head_g.free();
  }
  Tensor v = head_input_grad(net.head(), net.head_params(), x, label, lg);

  for (int i = L - 1; i >= 0; --i) {
    const LayerSpec& spec = net.trunk()[static_cast<size_t>(i)];
    switch (spec.kind) {
      case LayerKind::Coupling: {
        LayerResiduals res;
        // reconstruct x_{i-1} in place, capturing residuals at x1 = y1
        layer_inverse_inplace(spec, net.layer_params(i), x, lg, Capture::Full,
                              &res);
        Tensor g = layer_vjp_params(spec, net.layer_params(i), res, v, lg);
        r.layer_grads[static_cast<size_t>(i)] = tensor_to_vec(g);
        g.free();
        layer_vjp_input_inplace(spec, net.layer_params(i), res, v, lg);
        res.free_all();
        break;
      }
      case LayerKind::Activation: {
        // vjp from the still-live output values, then invert in place
        double* vd = v.data();
        const double* yd = x.data();
        const Precision prec = v.precision();
        for (std::int64_t k = 0; k < v.size(); ++k) {
          vd[k] = round_store(
              vd[k] * activation_deriv_from_out(spec.act, spec.leaky_alpha,
                                                yd[k]),
              prec);
        }
        layer_inverse_inplace(spec, net.layer_params(i), x, lg, Capture::None,
                              nullptr);
        break;
      }
      case LayerKind::Downsample: {
        layer_inverse_inplace(spec, net.layer_params(i), x, lg, Capture::None,
                              nullptr);
        LayerResiduals none;
        layer_vjp_input_inplace(spec, net.layer_params(i), none, v, lg);
        break;
      }
    }
  }
  x.free();
  r.input_grad = tensor_to_vec(v);
  v.free();

  finalize_report(r, lg, t0);
  return r;
}

// ---- Moonwalk phases ----

std::vector<double> moonwalk_phase1_forward(const Network& net,
                                            const Tensor& x0, int label,
                                            MemoryLedger& lg,
                                            const StrategyOptions& opts) {
  check_x0(net, x0);
  const std::int64_t n = net.input_elems();
  check_budget(n * 2 * net.forward_cost_ops(), opts, "moonwalk_phase1");
  const std::int64_t chunk = std::max<std::int64_t>(1, opts.phase1_chunk);
  std::vector<double> h0(static_cast<size_t>(n));

  for (std::int64_t base = 0; base < n; base += chunk) {
    const std::int64_t k = std::min(chunk, n - base);
    Tensor x = x0.clone(lg, AllocTag::Activation);
    if (k == 1) {
      // single tangent: the fused primal+tangent step is the cheapest path
      Tensor u = Tensor::alloc(lg, x0.shape(), AllocTag::Tangent);
      u.set(base, 1.0);
      for (int i = 0; i < net.trunk_size(); ++i) {
        layer_tangent_inplace(net.trunk()[static_cast<size_t>(i)],
                              net.layer_params(i), x, u, lg);
      }
      h0[static_cast<size_t>(base)] =
          head_tangent(net.head(), net.head_params(), x, label, &u).dloss;
      u.free();
      x.free();
      continue;
    }
    std::vector<Tensor> us;
    us.reserve(static_cast<size_t>(k));
    for (std::int64_t j = 0; j < k; ++j) {
      Tensor u = Tensor::alloc(lg, x0.shape(), AllocTag::Tangent);
      u.set(base + j, 1.0);
      us.push_back(std::move(u));
    }
    for (int i = 0; i < net.trunk_size(); ++i) {
      const LayerSpec& spec = net.trunk()[static_cast<size_t>(i)];
      switch (spec.kind) {
        case LayerKind::Coupling: {
          LayerResiduals res;
          layer_forward_inplace(spec, net.layer_params(i), x, lg,
                                Capture::ResidualXOnly, &res);
          for (auto& u : us) {
            layer_jvp_via_residuals_inplace(spec, net.layer_params(i), res, u,
                                            lg);
          }
          res.free_all();
          break;
        }
        case LayerKind::Activation: {
          const double* xd = x.data();
          for (auto& u : us) {
            double* ud = u.data();
            const Precision prec = u.precision();
            for (std::int64_t e = 0; e < u.size(); ++e) {
              ud[e] = round_store(
                  ud[e] * activation_deriv_from_pre(spec.act,
                                                    spec.leaky_alpha, xd[e]),
                  prec);
            }
          }
          layer_forward_inplace(spec, net.layer_params(i), x, lg,
                                Capture::None, nullptr);
          break;
        }
        case LayerKind::Downsample: {
          layer_forward_inplace(spec, net.layer_params(i), x, lg,
                                Capture::None, nullptr);
          LayerResiduals none;
          for (auto& u : us) {
            layer_jvp_via_residuals_inplace(spec, net.layer_params(i), none, u,
                                            lg);
          }
          break;
        }
      }
    }
    for (std::int64_t j = 0; j < k; ++j) {
      h0[static_cast<size_t>(base + j)] =
          head_tangent(net.head(), net.head_params(), x, label, &us[j])
              .dloss;
      us[static_cast<size_t>(j)].free();
    }
    x.free();
  }
  return h0;
}

Phase1ReverseResult moonwalk_phase1_reverse(const Network& net,
                                            const Tensor& x0, int label,
                                            MemoryLedger& lg) {
  check_x0(net, x0);
  Phase1ReverseResult out;
  const int L = net.trunk_size();
  std::vector<LayerResiduals> res(static_cast<size_t>(L));
  Tensor x = x0.clone(lg, AllocTag::Activation);
  for (int i = 0; i < L; ++i) {
    layer_forward_inplace(net.trunk()[static_cast<size_t>(i)],
                          net.layer_params(i), x, lg, Capture::ResidualXOnly,
                          &res[static_cast<size_t>(i)]);
  }
  out.loss = head_loss(net.head(), net.head_params(), x, label);
  out.predicted = head_predict(net.head(), net.head_params(), x);
  {
    // the head is downstream of x_L, so its gradient falls out of this pass
    Tensor hg = head_param_grad(net.head(), net.head_params(), x, label, lg);
    out.head_grad = tensor_to_vec(hg);
    hg.free();
  }
  Tensor v = head_input_grad(net.head(), net.head_params(), x, label, lg);
  x.free();
  for (int i = L - 1; i >= 0; --i) {
    layer_vjp_input_inplace(net.trunk()[static_cast<size_t>(i)],
                            net.layer_params(i), res[static_cast<size_t>(i)],
                            v, lg);
    res[static_cast<size_t>(i)].free_all();
  }
  out.h0 = tensor_to_vec(v);
  v.free();
  if (lg.peak_live_bytes(AllocTag::ResidualTheta) != 0) {
    throw LedgerFault("phase 1 stored ResidualTheta bytes");
  }
  return out;
}

void moonwalk_phase2(const Network& net, const Tensor& x0,
                     std::span<const double> h0, MemoryLedger& lg,
                     const GradSink& sink, const StrategyOptions& opts,
                     Tensor* final_x, Tensor* final_h) {
  check_x0(net, x0);
  if (static_cast<std::int64_t>(h0.size()) != net.input_elems()) {
    throw ShapeError("phase 2: h0 length mismatch");
  }
  Tensor x = x0.clone(lg, AllocTag::Activation);
  Tensor h = Tensor::alloc(lg, x0.shape(), AllocTag::Cotangent);
  for (std::int64_t i = 0; i < h.size(); ++i) h.set(i, h0[static_cast<size_t>(i)]);

  for (int i = 0; i < net.trunk_size(); ++i) {
    const LayerSpec& spec = net.trunk()[static_cast<size_t>(i)];
    switch (spec.kind) {
      case LayerKind::Coupling: {
        LayerResiduals res;
        layer_forward_inplace(spec, net.layer_params(i), x, lg, Capture::Full,
                              &res);
        if (opts.corrupt_vijp_sign) {
          // fault-injection hook: applies the correction with the wrong sign
          layer_vjp_input_inplace(spec, net.layer_params(i), res, h, lg);
        } else {
          layer_vijp_input_inplace(spec, net.layer_params(i), &res, nullptr,
                                   h, lg);
        }
        Tensor g = layer_vjp_params(spec, net.layer_params(i), res, h, lg);
        sink(i, std::span<const double>(g.data(),
                                        static_cast<size_t>(g.size())));
        g.free();  // freed before the next layer's gradient exists
        res.free_all();
        break;
      }
      case LayerKind::Activation: {
        layer_vijp_input_inplace(spec, net.layer_params(i), nullptr, &x, h,
                                 lg);
        layer_forward_inplace(spec, net.layer_params(i), x, lg, Capture::None,
                              nullptr);
        break;
      }
      case LayerKind::Downsample: {
        layer_forward_inplace(spec, net.layer_params(i), x, lg, Capture::None,
                              nullptr);
        layer_vijp_input_inplace(spec, net.layer_params(i), nullptr, nullptr,
                                 h, lg);
        break;
      }
    }
  }
  if (final_h != nullptr) {
    *final_h = std::move(h);
  } else {
    h.free();
  }
  if (final_x != nullptr) {
    *final_x = std::move(x);
  } else {
    x.free();
  }
}

// ---- Moonwalk / Mixed ----

GradReport moonwalk(const Network& net, const Tensor& x0, int label,
                    const StrategyOptions& opts) {
  const auto t0 = Clock::now();
  MemoryLedger lg(net.spec().precision);
  GradReport r;
  r.strategy = StrategyId::Moonwalk;

  std::vector<double> h0 = moonwalk_phase1_forward(net, x0, label, lg, opts);
  r.layer_grads.resize(static_cast<size_t>(net.trunk_size()));
  Tensor x_l;
  moonwalk_phase2(
      net, x0, h0, lg,
      [&r](int layer, std::span<const double> g) {
        r.layer_grads[static_cast<size_t>(layer)].assign(g.begin(), g.end());
      },
      opts, &x_l);
  r.loss = head_loss(net.head(), net.head_params(), x_l, label);
  r.predicted_label = head_predict(net.head(), net.head_params(), x_l);
  r.head_grad = head_grad_forward(net, x_l, label);
  x_l.free();
  r.input_grad = std::move(h0);

  finalize_report(r, lg, t0);
  return r;
}

GradReport mixed(const Network& net, const Tensor& x0, int label,
                 const StrategyOptions& opts) {
  const auto t0 = Clock::now();
  MemoryLedger lg(net.spec().precision);
  GradReport r;
  r.strategy = StrategyId::Mixed;

  Phase1ReverseResult p1 = moonwalk_phase1_reverse(net, x0, label, lg);
  r.loss = p1.loss;
  r.predicted_label = p1.predicted;
  r.head_grad = std::move(p1.head_grad);
  r.layer_grads.resize(static_cast<size_t>(net.trunk_size()));
  moonwalk_phase2(
      net, x0, p1.h0, lg,
      [&r](int layer, std::span<const double> g) {
        r.layer_grads[static_cast<size_t>(layer)].assign(g.begin(), g.end());
      },
      opts);
  r.input_grad = std::move(p1.h0);

  finalize_report(r, lg, t0);
  return r;
}

GradReport compute_gradients(const Network& net, const Tensor& x0, int label,
                             StrategyId id, const StrategyOptions& opts) {
  switch (id) {
    case StrategyId::Backprop: return backprop(net, x0, label);
    case StrategyId::Forward: return forward_naive(net, x0, label, opts);
    case StrategyId::ProjForward:
      return proj_forward(net, x0, label, opts.seed);
    case StrategyId::RevBackprop: return rev_backprop(net, x0, label);
    case StrategyId::Moonwalk: return moonwalk(net, x0, label, opts);
    case StrategyId::Mixed: return mixed(net, x0, label, opts);
  }
  throw Error("unknown strategy");
}

// ---- oracles and comparisons ----

double forward_loss(const Network& net, const Tensor& x0, int label) {
  MemoryLedger lg(net.spec().precision);
  Tensor x = primal_forward(net, x0, lg);
  const double j = head_loss(net.head(), net.head_params(), x, label);
  x.free();
  return j;
}

std::vector<double> fd_gradient(Network& net, const Tensor& x0, int label,
                                double eps, std::int64_t budget_params) {
  const std::int64_t d = net.total_param_count();
  if (d > budget_params) {
    throw BudgetError("fd_gradient: " + std::to_string(d) +
                      " parameters exceed budget of " +
                      std::to_string(budget_params));
  }
  std::vector<double> g(static_cast<size_t>(d));
  for (std::int64_t i = 0; i < d; ++i) {
    const double w = net.get_param(i);
    net.set_param(i, w + eps);
    const double jp = forward_loss(net, x0, label);
    net.set_param(i, w - eps);
    const double jm = forward_loss(net, x0, label);
    net.set_param(i, w);
    g[static_cast<size_t>(i)] = (jp - jm) / (2 * eps);
  }
  return g;
}

std::vector<double> flatten_gradients(const GradReport& r) {
  std::vector<double> flat;
  for (const auto& g : r.layer_grads) flat.insert(flat.end(), g.begin(), g.end());
  flat.insert(flat.end(), r.head_grad.begin(), r.head_grad.end());
  return flat;
}

double max_rel_err(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("max_rel_err: length mismatch");
  }
  double linf = 0;
  for (double v : b) linf = std::max(linf, std::abs(v));
  const double floor = std::max(1e-3 * linf, 1e-30);
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double denom =
        std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

CompareResult compare_reports(const GradReport& a, const GradReport& b,
                              bool include_h0) {
  if (a.layer_grads.size() != b.layer_grads.size()) {
    throw ShapeError("compare_reports: different layer counts");
  }
  // shared scale floor across the whole gradient
  const std::vector<double> fb = flatten_gradients(b);
  double linf = 0;
  for (double v : fb) linf = std::max(linf, std::abs(v));
  const double floor = std::max(1e-3 * linf, 1e-30);
  const auto block_err = [floor](std::span<const double> x,
                                 std::span<const double> y) {
    double worst = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      const double denom = std::max({std::abs(x[i]), std::abs(y[i]), floor});
      worst = std::max(worst, std::abs(x[i] - y[i]) / denom);
    }
    return worst;
  };

  CompareResult out;
  for (size_t i = 0; i < a.layer_grads.size(); ++i) {
    if (a.layer_grads[i].size() != b.layer_grads[i].size()) {
      throw ShapeError("compare_reports: layer gradient length mismatch");
    }
    const double e = block_err(a.layer_grads[i], b.layer_grads[i]);
    if (e > out.max_rel) {
      out.max_rel = e;
      out.worst_layer = static_cast<int>(i);
    }
  }
  {
    const double e = block_err(a.head_grad, b.head_grad);
    if (e > out.max_rel) {
      out.max_rel = e;
      out.worst_layer = -1;
    }
  }
  if (include_h0 && !a.input_grad.empty() && !b.input_grad.empty()) {
    const double e = max_rel_err(a.input_grad, b.input_grad);
    if (e > out.max_rel) {
      out.max_rel = e;
      out.worst_layer = -3;
    }
  }
  return out;
}

}  // namespace invgrad
