// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "invgrad/rng.hpp"
#include "invgrad/tensor.hpp"

namespace invgrad {

enum class LayerKind { Coupling, Activation, Downsample };
enum class ActKind { Tanh, LeakyRelu };

// The channel-mixing MLP inside a coupling layer: `depth` dense layers
// applied per pixel (1x1-conv equivalent), ReLU between them, final layer
// linear. Maps c channels to c channels through `width`-wide hidden layers.
struct SubnetSpec {
  int depth = 2;
  std::int64_t width = 8;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Coupling;
  Shape in_shape;   // rank-3 HWC
  Shape out_shape;  // equals in_shape except for Downsample

  // coupling only; flip = false feeds the low channel half to the subnet
  // and updates the high half, flip = true the other way around. Stacked
  // couplings alternate so both halves get transformed.
  SubnetSpec subnet;
  bool flip = false;

  // activation only
  ActKind act = ActKind::Tanh;
  double leaky_alpha = 0.1;

  std::int64_t param_count() const;

  static LayerSpec coupling(const Shape& io, SubnetSpec subnet,
                            bool flip = false);
  static LayerSpec activation(const Shape& io, ActKind kind,
                              double leaky_alpha = 0.1);
  static LayerSpec downsample(const Shape& in);
};

// What a layer keeps from its forward evaluation. Coupling: ReLU sign masks
// (ResidualX, 1 byte/unit) and the inputs of each dense layer (ResidualTheta);
// activation: its output (ResidualX); downsample: nothing.
struct LayerResiduals {
  std::vector<MaskTensor> masks;
  std::vector<Tensor> dense_inputs;
  std::optional<Tensor> act_output;

  void free_all();
};

enum class Capture { None, ResidualXOnly, Full };

// Parameter-direction seed for tangent passes. Dense reads a full length-d
// vector; Basis perturbs a single flattened parameter; Gaussian draws i.i.d.
// standard normals in canonical parameter order from a replayable stream.
struct ParamTangent {
  enum class Kind { None, Dense, Basis, Gaussian };
  Kind kind = Kind::None;
  const double* dense = nullptr;
  std::int64_t basis_index = -1;
  Rng* gauss = nullptr;

  static ParamTangent none() { return {}; }
  static ParamTangent from_dense(const double* v) {
    return {Kind::Dense, v, -1, nullptr};
  }
  static ParamTangent basis(std::int64_t i) {
    return {Kind::Basis, nullptr, i, nullptr};
  }
  static ParamTangent gaussian(Rng* rng) {
    return {Kind::Gaussian, nullptr, -1, rng};
  }
};

// ---- trunk layer operators ----
//
// The in-place variants are the primitives the gradient engines walk the
// trunk with; the allocating wrappers below expose the same maps on fresh
// tensors for tests and external callers. theta may be null for
// parameter-free layers.

// x -> f(x). For Downsample, x is replaced by a new tensor (old one freed).
void layer_forward_inplace(const LayerSpec& spec, const double* theta,
                           Tensor& x, MemoryLedger& ledger, Capture capture,
                           LayerResiduals* res);

// y -> f^{-1}(y), optionally capturing residuals at the reconstructed input.
void layer_inverse_inplace(const LayerSpec& spec, const double* theta,
                           Tensor& y, MemoryLedger& ledger, Capture capture,
                           LayerResiduals* res);

// (x, u) -> (f(x), J_x u + (df/dtheta) u_theta): one forward-mode step.
void layer_tangent_inplace(const LayerSpec& spec, const double* theta,
                           Tensor& x, Tensor& u, MemoryLedger& ledger,
                           const ParamTangent& ptan = ParamTangent::none());

// v -> v J_x from stored residuals (reverse-mode step).
void layer_vjp_input_inplace(const LayerSpec& spec, const double* theta,
                             const LayerResiduals& res, Tensor& v,
                             MemoryLedger& ledger);

// h -> h J_x^{-1} from forward-known values only: coupling needs the masks in
// `res`, activation needs the pre-activation input `x_pre`, downsample needs
// nothing. Never evaluates the inverse function.
void layer_vijp_input_inplace(const LayerSpec& spec, const double* theta,
                              const LayerResiduals* res, const Tensor* x_pre,
                              Tensor& h, MemoryLedger& ledger);

// v (df/dtheta): length-d parameter gradient (Gradient tag).
Tensor layer_vjp_params(const LayerSpec& spec, const double* theta,
                        const LayerResiduals& res, const Tensor& v,
                        MemoryLedger& ledger,
                        AllocTag tag = AllocTag::Gradient);

// u -> J_x u using stored residuals instead of a fresh primal evaluation
// (coupling: masks; activation: stored output; downsample: permutation).
void layer_jvp_via_residuals_inplace(const LayerSpec& spec,
                                     const double* theta,
                                     const LayerResiduals& res, Tensor& u,
                                     MemoryLedger& ledger);

// Elementwise activation scalar maps (exposed for engines and tests).
double activation_forward(ActKind kind, double alpha, double x);
double activation_deriv_from_pre(ActKind kind, double alpha, double x);
double activation_deriv_from_out(ActKind kind, double alpha, double y);
double activation_inverse(ActKind kind, double alpha, double y);

// Allocating wrappers.
Tensor layer_forward(const LayerSpec& spec, const double* theta,
                     const Tensor& x, MemoryLedger& ledger,
                     AllocTag tag = AllocTag::Activation,
                     Capture capture = Capture::None,
                     LayerResiduals* res = nullptr);
Tensor layer_inverse(const LayerSpec& spec, const double* theta,
                     const Tensor& y, MemoryLedger& ledger,
                     AllocTag tag = AllocTag::Activation);
Tensor jvp_input(const LayerSpec& spec, const double* theta, const Tensor& x,
                 const Tensor& u, MemoryLedger& ledger,
                 AllocTag tag = AllocTag::Tangent);
Tensor jvp_params(const LayerSpec& spec, const double* theta, const Tensor& x,
                  const ParamTangent& ptan, MemoryLedger& ledger,
                  AllocTag tag = AllocTag::Tangent);
Tensor vjp_input(const LayerSpec& spec, const double* theta,
                 const LayerResiduals& res, const Tensor& v,
                 MemoryLedger& ledger, AllocTag tag = AllocTag::Cotangent);
Tensor vijp_input(const LayerSpec& spec, const double* theta,
                  const LayerResiduals* res, const Tensor* x_pre,
                  const Tensor& h, MemoryLedger& ledger,
                  AllocTag tag = AllocTag::Cotangent);

// ---- loss head ----
//
// Spatial mean pool -> dense(C -> classes) -> softmax cross-entropy. The head
// sits downstream of the invertible trunk and does not need to be invertible.

struct HeadSpec {
  std::int64_t in_height = 1;
  std::int64_t in_width = 1;
  std::int64_t in_channels = 1;
  int num_classes = 2;

  std::int64_t pixels() const { return in_height * in_width; }
  std::int64_t param_count() const {
    return (in_channels + 1) * num_classes;
  }
};

double head_loss(const HeadSpec& head, const double* theta, const Tensor& x,
                 int label);
int head_predict(const HeadSpec& head, const double* theta, const Tensor& x);

// dJ/dx_L as a tensor shaped like x (Cotangent tag).
Tensor head_input_grad(const HeadSpec& head, const double* theta,
                       const Tensor& x, int label, MemoryLedger& ledger,
                       AllocTag tag = AllocTag::Cotangent);

// dJ/dtheta_head, length param_count() (Gradient tag).
Tensor head_param_grad(const HeadSpec& head, const double* theta,
                       const Tensor& x, int label, MemoryLedger& ledger,
                       AllocTag tag = AllocTag::Gradient);

// Directional derivative of the loss: u may be null (no input tangent) and
// ptan seeds head-parameter directions. Also reports loss/prediction so
// forward-only strategies get them from the same pass.
struct HeadTangentOut {
  double loss = 0;
  double dloss = 0;
  int predicted = -1;
};
HeadTangentOut head_tangent(const HeadSpec& head, const double* theta,
                            const Tensor& x, int label, const Tensor* u,
                            const ParamTangent& ptan = ParamTangent::none());

}  // namespace invgrad
