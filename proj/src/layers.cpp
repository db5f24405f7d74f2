// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include "invgrad/layers.hpp"

#include <cmath>
#include <cstring>

namespace invgrad {
namespace {

// ---- subnet internals ----

// Per-pixel channel MLP dims: level widths are [c, w, ..., w, c] with m dense
// layers mapping level j-1 to level j.
struct SubnetDims {
  std::int64_t P = 0;  // pixels
  std::int64_t c = 0;  // in/out channels (half the coupling channels)
  std::int64_t w = 0;  // hidden width
  int m = 1;           // dense layer count

  std::int64_t width(int level) const {
    return (level == 0 || level == m) ? c : w;
  }
  std::int64_t weight_offset(int j) const {  // W_j, j in [1, m]
    std::int64_t off = 0;
    for (int l = 1; l < j; ++l) off += width(l) * (width(l - 1) + 1);
    return off;
  }
  std::int64_t bias_offset(int j) const {
    return weight_offset(j) + width(j) * width(j - 1);
  }
  std::int64_t param_count() const {
    std::int64_t d = 0;
    for (int l = 1; l <= m; ++l) d += width(l) * (width(l - 1) + 1);
    return d;
  }
};

SubnetDims coupling_dims(const LayerSpec& spec) {
  SubnetDims d;
  d.P = spec.in_shape.height() * spec.in_shape.width();
  d.c = spec.in_shape.channels() / 2;
  d.w = spec.subnet.width;
  d.m = spec.subnet.depth;
  return d;
}

// Read-only matrix view with a row stride, used to address the x1/x2 channel
// halves inside an HWC tensor without copying.
struct View {
  const double* base = nullptr;
  std::int64_t stride = 0;
  double at(std::int64_t p, std::int64_t k) const {
    return base[p * stride + k];
  }
};

View half_view(const Tensor& t, bool high) {
  const std::int64_t C = t.shape().channels();
  return View{t.data() + (high ? C / 2 : 0), C};
}

// z_j = W_j a_{j-1} + b_j for one dense level.
void dense_apply(const SubnetDims& d, const double* theta, int j,
                 const View& a, double* z, Precision prec) {
  const std::int64_t rows = d.width(j), cols = d.width(j - 1);
  const double* W = theta + d.weight_offset(j);
  const double* b = theta + d.bias_offset(j);
  for (std::int64_t p = 0; p < d.P; ++p) {
    for (std::int64_t o = 0; o < rows; ++o) {
      double s = b[o];
      const double* wr = W + o * cols;
      for (std::int64_t k = 0; k < cols; ++k) s += wr[k] * a.at(p, k);
      z[p * rows + o] = round_store(s, prec);
    }
  }
}

// delta_{j-1} = delta_j W_j (masking applied by the caller).
void dense_transpose_apply(const SubnetDims& d, const double* theta, int j,
                           const double* delta, double* out, Precision prec) {
  const std::int64_t rows = d.width(j), cols = d.width(j - 1);
  const double* W = theta + d.weight_offset(j);
  for (std::int64_t p = 0; p < d.P; ++p) {
    const double* dp = delta + p * rows;
    double* op = out + p * cols;
    for (std::int64_t k = 0; k < cols; ++k) op[k] = 0;
    for (std::int64_t o = 0; o < rows; ++o) {
      const double* wr = W + o * cols;
      const double dv = dp[o];
      for (std::int64_t k = 0; k < cols; ++k) op[k] += dv * wr[k];
    }
    for (std::int64_t k = 0; k < cols; ++k) op[k] = round_store(op[k], prec);
  }
}

// Adds the parameter-direction contribution dW_j a_{j-1} + db_j to tz.
void add_param_tangent(const SubnetDims& d, const ParamTangent& ptan, int j,
                       const View& a, double* tz) {
  const std::int64_t rows = d.width(j), cols = d.width(j - 1);
  const std::int64_t woff = d.weight_offset(j);
  const std::int64_t boff = d.bias_offset(j);
  switch (ptan.kind) {
    case ParamTangent::Kind::None:
      return;
    case ParamTangent::Kind::Dense: {
      const double* dW = ptan.dense + woff;
      const double* db = ptan.dense + boff;
      for (std::int64_t p = 0; p < d.P; ++p) {
        for (std::int64_t o = 0; o < rows; ++o) {
          double s = db[o];
          const double* wr = dW + o * cols;
          for (std::int64_t k = 0; k < cols; ++k) s += wr[k] * a.at(p, k);
          tz[p * rows + o] += s;
        }
      }
      return;
    }
    case ParamTangent::Kind::Basis: {
      const std::int64_t i = ptan.basis_index;
      if (i >= woff && i < boff) {
        const std::int64_t o = (i - woff) / cols, k = (i - woff) % cols;
        for (std::int64_t p = 0; p < d.P; ++p) tz[p * rows + o] += a.at(p, k);
      } else if (i >= boff && i < boff + rows) {
        const std::int64_t o = i - boff;
        for (std::int64_t p = 0; p < d.P; ++p) tz[p * rows + o] += 1.0;
      }
      return;
    }
    case ParamTangent::Kind::Gaussian: {
      // Draw order matches the canonical flat layout (W row-major, then
      // bias, levels ascending) so replaying the stream rebuilds the tangent.
      for (std::int64_t o = 0; o < rows; ++o) {
        for (std::int64_t k = 0; k < cols; ++k) {
          const double g = ptan.gauss->normal();
          for (std::int64_t p = 0; p < d.P; ++p) {
            tz[p * rows + o] += g * a.at(p, k);
          }
        }
      }
      for (std::int64_t o = 0; o < rows; ++o) {
        const double g = ptan.gauss->normal();
        for (std::int64_t p = 0; p < d.P; ++p) tz[p * rows + o] += g;
      }
      return;
    }
  }
}

// Forward pass through the subnet. Writes the final linear level into `out`
// (P x c, caller-owned). Capture::Full stores dense-layer inputs
// (ResidualTheta) and hidden ReLU masks (ResidualX); ResidualXOnly stores
// only the masks.
void subnet_forward(const SubnetDims& d, const double* theta, const View& x1,
                    MemoryLedger& lg, Capture cap, LayerResiduals* res,
                    double* out, Precision prec) {
  const bool keep_inputs = cap == Capture::Full;
  const bool keep_masks = cap != Capture::None;
  if (keep_masks && res == nullptr) {
    throw Error("subnet capture requested without a residual container");
  }
  if (keep_inputs) {
    Tensor a0 = Tensor::alloc(lg, Shape{d.P, d.c}, AllocTag::ResidualTheta);
    for (std::int64_t p = 0; p < d.P; ++p) {
      for (std::int64_t k = 0; k < d.c; ++k) a0.set(p * d.c + k, x1.at(p, k));
    }
    res->dense_inputs.push_back(std::move(a0));
  }

  Tensor work;                       // owning buffer when not keeping inputs
  const double* cur_data = nullptr;  // previous hidden level (contiguous)
  std::int64_t cur_width = 0;
  for (int j = 1; j <= d.m; ++j) {
    const View a = (j == 1) ? x1 : View{cur_data, cur_width};
    if (j == d.m) {
      dense_apply(d, theta, j, a, out, prec);
      break;
    }
    Tensor next = Tensor::alloc(
        lg, Shape{d.P, d.width(j)},
        keep_inputs ? AllocTag::ResidualTheta : AllocTag::Workspace);
    dense_apply(d, theta, j, a, next.data(), prec);
    MaskTensor mask;
    if (keep_masks) {
      mask = MaskTensor::alloc(lg, d.P * d.width(j), AllocTag::ResidualX);
    }
    double* nz = next.data();
    for (std::int64_t i = 0; i < next.size(); ++i) {
      const bool pos = nz[i] > 0;
      if (!pos) nz[i] = 0;
      if (keep_masks) mask.data()[i] = pos ? 1 : 0;
    }
    if (keep_masks) res->masks.push_back(std::move(mask));
    cur_width = d.width(j);
    if (keep_inputs) {
      res->dense_inputs.push_back(std::move(next));
      cur_data = res->dense_inputs.back().data();
    } else {
      if (work.live()) work.free();
      work = std::move(next);
      cur_data = work.data();
    }
  }
  if (work.live()) work.free();
}

// Forward-mode pass: primal and tangent in lockstep. Writes primal output
// and tangent output (both P x c).
void subnet_tangent(const SubnetDims& d, const double* theta, const View& x1,
                    const View& u1, const ParamTangent& ptan, MemoryLedger& lg,
                    double* pout, double* tout, Precision prec) {
  Tensor pa, ta;  // previous-level primal/tangent buffers
  for (int j = 1; j <= d.m; ++j) {
    const View a = (j == 1) ? x1 : View{pa.data(), d.width(j - 1)};
    const View u = (j == 1) ? u1 : View{ta.data(), d.width(j - 1)};
    const std::int64_t rows = d.width(j), cols = d.width(j - 1);
    const bool last = j == d.m;
    Tensor pz, tz;
    double* pzd = pout;
    double* tzd = tout;
    if (!last) {
      pz = Tensor::alloc(lg, Shape{d.P, rows}, AllocTag::Workspace);
      tz = Tensor::alloc(lg, Shape{d.P, rows}, AllocTag::Tangent);
      pzd = pz.data();
      tzd = tz.data();
    }
    dense_apply(d, theta, j, a, pzd, prec);
    const double* W = theta + d.weight_offset(j);
    for (std::int64_t p = 0; p < d.P; ++p) {
      for (std::int64_t o = 0; o < rows; ++o) {
        double s = 0;
        const double* wr = W + o * cols;
        for (std::int64_t k = 0; k < cols; ++k) s += wr[k] * u.at(p, k);
        tzd[p * rows + o] = s;
      }
    }
    add_param_tangent(d, ptan, j, a, tzd);
    for (std::int64_t i = 0; i < d.P * rows; ++i) {
      tzd[i] = round_store(tzd[i], prec);
    }
    if (!last) {
      for (std::int64_t i = 0; i < d.P * rows; ++i) {
        if (pzd[i] > 0) continue;
        pzd[i] = 0;
        tzd[i] = 0;
      }
      if (pa.live()) pa.free();
      if (ta.live()) ta.free();
      pa = std::move(pz);
      ta = std::move(tz);
    }
  }
  if (pa.live()) pa.free();
  if (ta.live()) ta.free();
}

// Reverse-mode pass: walks delta_m = seed back through the stored masks.
// Optionally accumulates parameter gradients (needs dense_inputs) and
// optionally emits delta_0 (P x c).
void subnet_cotangent(const SubnetDims& d, const double* theta,
                      const std::vector<MaskTensor>& masks, const View& seed,
                      MemoryLedger& lg, double* delta0_out,
                      const std::vector<Tensor>* dense_inputs,
                      double* grad_out, Precision prec) {
  Tensor cur =
      Tensor::alloc(lg, Shape{d.P, d.c}, AllocTag::Workspace);
  for (std::int64_t p = 0; p < d.P; ++p) {
    for (std::int64_t k = 0; k < d.c; ++k) cur.set(p * d.c + k, seed.at(p, k));
  }
  for (int j = d.m; j >= 1; --j) {
    const std::int64_t rows = d.width(j), cols = d.width(j - 1);
    if (grad_out) {
      const Tensor& a = (*dense_inputs)[static_cast<size_t>(j - 1)];
      double* gW = grad_out + d.weight_offset(j);
      double* gb = grad_out + d.bias_offset(j);
      const double* dl = cur.data();
      for (std::int64_t o = 0; o < rows; ++o) {
        for (std::int64_t k = 0; k < cols; ++k) {
          double s = 0;
          for (std::int64_t p = 0; p < d.P; ++p) {
            s += dl[p * rows + o] * a[p * cols + k];
          }
          gW[o * cols + k] = round_store(s, prec);
        }
        double s = 0;
        for (std::int64_t p = 0; p < d.P; ++p) s += dl[p * rows + o];
        gb[o] = round_store(s, prec);
      }
    }
    if (j == 1) {
      if (delta0_out != nullptr) {
        Tensor prev = Tensor::alloc(lg, Shape{d.P, cols}, AllocTag::Workspace);
        dense_transpose_apply(d, theta, j, cur.data(), prev.data(), prec);
        std::memcpy(delta0_out, prev.data(),
                    sizeof(double) * static_cast<size_t>(prev.size()));
        prev.free();
      }
      break;
    }
    Tensor prev = Tensor::alloc(lg, Shape{d.P, cols}, AllocTag::Workspace);
    dense_transpose_apply(d, theta, j, cur.data(), prev.data(), prec);
    // masks[l] guards hidden level l+1; level j-1 uses masks[j-2]
    const MaskTensor& m = masks[static_cast<size_t>(j - 2)];
    double* pd = prev.data();
    for (std::int64_t i = 0; i < prev.size(); ++i) {
      if (!m[i]) pd[i] = 0;
    }
    cur.free();
    cur = std::move(prev);
  }
  cur.free();
}

// ---- activation helpers ----

double act_forward_value(ActKind k, double alpha, double x) {
  return k == ActKind::Tanh ? std::tanh(x) : (x > 0 ? x : alpha * x);
}

double act_deriv_from_pre(ActKind k, double alpha, double x) {
  if (k == ActKind::Tanh) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  }
  return x > 0 ? 1.0 : alpha;
}

double act_deriv_from_out(ActKind k, double alpha, double y) {
  if (k == ActKind::Tanh) return 1.0 - y * y;
  return y > 0 ? 1.0 : alpha;
}

double act_inverse_value(ActKind k, double alpha, double y) {
  if (k == ActKind::Tanh) {
    if (std::abs(y) >= 1.0) throw DomainError("tanh inverse outside (-1, 1)");
    return std::atanh(y);
  }
  return y > 0 ? y : y / alpha;
}

// ---- downsample permutation ----
//
// out[oh, ow, 4c + 2dh + dw] = in[2oh + dh, 2ow + dw, c]: pixels of each 2x2
// patch move into four consecutive channel slots in row-major patch order.

void psi_apply(const Tensor& in, Tensor& out) {
  const std::int64_t H = in.shape().height(), W = in.shape().width(),
                     C = in.shape().channels();
  const std::int64_t W2 = W / 2, C2 = 4 * C;
  const double* src = in.data();
  double* dst = out.data();
  for (std::int64_t oh = 0; oh < H / 2; ++oh) {
    for (std::int64_t ow = 0; ow < W2; ++ow) {
      for (std::int64_t c = 0; c < C; ++c) {
        for (std::int64_t dh = 0; dh < 2; ++dh) {
          for (std::int64_t dw = 0; dw < 2; ++dw) {
            dst[(oh * W2 + ow) * C2 + c * 4 + dh * 2 + dw] =
                src[((2 * oh + dh) * W + (2 * ow + dw)) * C + c];
          }
        }
      }
    }
  }
}

void psi_inverse_apply(const Tensor& in, Tensor& out) {
  const std::int64_t W2 = in.shape().width(), C2 = in.shape().channels();
  const std::int64_t C = C2 / 4, W = W2 * 2;
  const double* src = in.data();
  double* dst = out.data();
  for (std::int64_t oh = 0; oh < in.shape().height(); ++oh) {
    for (std::int64_t ow = 0; ow < W2; ++ow) {
      for (std::int64_t c = 0; c < C; ++c) {
        for (std::int64_t dh = 0; dh < 2; ++dh) {
          for (std::int64_t dw = 0; dw < 2; ++dw) {
            dst[((2 * oh + dh) * W + (2 * ow + dw)) * C + c] =
                src[(oh * W2 + ow) * C2 + c * 4 + dh * 2 + dw];
          }
        }
      }
    }
  }
}

void check_input_shape(const LayerSpec& spec, const Tensor& x,
                       const char* op) {
  if (x.shape() != spec.in_shape) {
    throw ShapeError(std::string(op) + ": input shape " +
                     to_string(x.shape()) + " does not match layer input " +
                     to_string(spec.in_shape));
  }
}

// Adds sgn * src (P x c contiguous) into one channel half of an HWC tensor.
void add_into_half(Tensor& x, bool high, const double* src, double sgn) {
  const std::int64_t C = x.shape().channels(), c = C / 2;
  const std::int64_t off = high ? c : 0;
  const std::int64_t P = x.shape().height() * x.shape().width();
  double* d = x.data();
  const Precision prec = x.precision();
  for (std::int64_t p = 0; p < P; ++p) {
    for (std::int64_t k = 0; k < c; ++k) {
      d[p * C + off + k] =
          round_store(d[p * C + off + k] + sgn * src[p * c + k], prec);
    }
  }
}

}  // namespace

// ---- LayerSpec ----

std::int64_t LayerSpec::param_count() const {
  if (kind != LayerKind::Coupling) return 0;
  return coupling_dims(*this).param_count();
}

LayerSpec LayerSpec::coupling(const Shape& io, SubnetSpec subnet, bool flip) {
  if (io.rank() != 3) throw ShapeError("coupling layer needs rank-3 input");
  if (io.channels() % 2 != 0 || io.channels() < 2) {
    throw ConfigError("coupling layer needs an even channel count >= 2, got " +
                      std::to_string(io.channels()));
  }
  if (subnet.depth < 1) throw ConfigError("subnet depth must be >= 1");
  if (subnet.depth > 1 && subnet.width < 1) {
    throw ConfigError("subnet hidden width must be >= 1");
  }
  LayerSpec s;
  s.kind = LayerKind::Coupling;
  s.in_shape = io;
  s.out_shape = io;
  s.subnet = subnet;
  s.flip = flip;
  return s;
}

LayerSpec LayerSpec::activation(const Shape& io, ActKind kind,
                                double leaky_alpha) {
  if (kind == ActKind::LeakyRelu && leaky_alpha <= 0) {
    throw ConfigError("leaky-relu slope must be positive");
  }
  LayerSpec s;
  s.kind = LayerKind::Activation;
  s.in_shape = io;
  s.out_shape = io;
  s.act = kind;
  s.leaky_alpha = leaky_alpha;
  return s;
}

LayerSpec LayerSpec::downsample(const Shape& in) {
  if (in.rank() != 3) throw ShapeError("downsample needs rank-3 input");
  if (in.height() % 2 != 0 || in.width() % 2 != 0) {
    throw ConfigError("downsample needs even spatial extents, got " +
                      to_string(in));
  }
  LayerSpec s;
  s.kind = LayerKind::Downsample;
  s.in_shape = in;
  s.out_shape =
      Shape::hwc(in.height() / 2, in.width() / 2, in.channels() * 4);
  return s;
}

void LayerResiduals::free_all() {
  for (auto& m : masks) {
    if (m.live()) m.free();
  }
  masks.clear();
  for (auto& t : dense_inputs) {
    if (t.live()) t.free();
  }
  dense_inputs.clear();
  if (act_output && act_output->live()) act_output->free();
  act_output.reset();
}

// ---- forward / inverse ----

void layer_forward_inplace(const LayerSpec& spec, const double* theta,
                           Tensor& x, MemoryLedger& ledger, Capture capture,
                           LayerResiduals* res) {
  check_input_shape(spec, x, "forward");
  switch (spec.kind) {
    case LayerKind::Coupling: {
      const SubnetDims d = coupling_dims(spec);
      Tensor out = Tensor::alloc(ledger, Shape{d.P, d.c}, AllocTag::Workspace);
      subnet_forward(d, theta, half_view(x, spec.flip), ledger, capture, res,
                     out.data(), x.precision());
      add_into_half(x, !spec.flip, out.data(), +1.0);
      out.free();
      return;
    }
    case LayerKind::Activation: {
      double* v = x.data();
      const Precision prec = x.precision();
      for (std::int64_t i = 0; i < x.size(); ++i) {
        v[i] = round_store(
            act_forward_value(spec.act, spec.leaky_alpha, v[i]), prec);
      }
      if (capture != Capture::None) {
        res->act_output = x.clone(ledger, AllocTag::ResidualX);
      }
      return;
    }
    case LayerKind::Downsample: {
      Tensor out = Tensor::alloc(ledger, spec.out_shape, x.tag());
      psi_apply(x, out);
      x.free();
      x = std::move(out);
      return;
    }
  }
}

void layer_inverse_inplace(const LayerSpec& spec, const double* theta,
                           Tensor& y, MemoryLedger& ledger, Capture capture,
                           LayerResiduals* res) {
  if (y.shape() != spec.out_shape) {
    throw ShapeError("inverse: output shape mismatch");
  }
  switch (spec.kind) {
    case LayerKind::Coupling: {
      // x1 = y1 and x2 = y2 - F(x1); residuals belong to x1 = y1.
      const SubnetDims d = coupling_dims(spec);
      Tensor out = Tensor::alloc(ledger, Shape{d.P, d.c}, AllocTag::Workspace);
      subnet_forward(d, theta, half_view(y, spec.flip), ledger, capture, res,
                     out.data(), y.precision());
      add_into_half(y, !spec.flip, out.data(), -1.0);
      out.free();
      return;
    }
    case LayerKind::Activation: {
      if (capture != Capture::None) {
        res->act_output = y.clone(ledger, AllocTag::ResidualX);
      }
      double* v = y.data();
      const Precision prec = y.precision();
      for (std::int64_t i = 0; i < y.size(); ++i) {
        v[i] = round_store(
            act_inverse_value(spec.act, spec.leaky_alpha, v[i]), prec);
      }
      return;
    }
    case LayerKind::Downsample: {
      Tensor out = Tensor::alloc(ledger, spec.in_shape, y.tag());
      psi_inverse_apply(y, out);
      y.free();
      y = std::move(out);
      return;
    }
  }
}

// ---- tangent (jvp) ----

void layer_tangent_inplace(const LayerSpec& spec, const double* theta,
                           Tensor& x, Tensor& u, MemoryLedger& ledger,
                           const ParamTangent& ptan) {
  check_input_shape(spec, x, "tangent");
  if (u.shape() != spec.in_shape) {
    throw ShapeError("tangent: tangent shape mismatch");
  }
  switch (spec.kind) {
    case LayerKind::Coupling: {
      const SubnetDims d = coupling_dims(spec);
      Tensor pout = Tensor::alloc(ledger, Shape{d.P, d.c}, AllocTag::Workspace);
      Tensor tout = Tensor::alloc(ledger, Shape{d.P, d.c}, AllocTag::Tangent);
      subnet_tangent(d, theta, half_view(x, spec.flip), half_view(u, spec.flip),
                     ptan, ledger, pout.data(), tout.data(), x.precision());
      add_into_half(x, !spec.flip, pout.data(), +1.0);
      add_into_half(u, !spec.flip, tout.data(), +1.0);
      tout.free();
      pout.free();
      return;
    }
    case LayerKind::Activation: {
      // parameter-free: ptan contributes nothing
      double* xv = x.data();
      double* uv = u.data();
      const Precision prec = x.precision();
      for (std::int64_t i = 0; i < x.size(); ++i) {
        const double fp =
            act_deriv_from_pre(spec.act, spec.leaky_alpha, xv[i]);
        uv[i] = round_store(uv[i] * fp, prec);
        xv[i] = round_store(
            act_forward_value(spec.act, spec.leaky_alpha, xv[i]), prec);
      }
      return;
    }
    case LayerKind::Downsample: {
      Tensor xo = Tensor::alloc(ledger, spec.out_shape, x.tag());
      psi_apply(x, xo);
      x.free();
      x = std::move(xo);
      Tensor uo = Tensor::alloc(ledger, spec.out_shape, u.tag());
      psi_apply(u, uo);
      u.free();
      u = std::move(uo);
      return;
    }
  }
}

// ---- cotangent (vjp) ----

void layer_vjp_input_inplace(const LayerSpec& spec, const double* theta,
                             const LayerResiduals& res, Tensor& v,
                             MemoryLedger& ledger) {
  if (v.shape() != spec.out_shape) {
    throw ShapeError("vjp_input: cotangent shape mismatch");
  }
  switch (spec.kind) {
    case LayerKind::Coupling: {
      const SubnetDims d = coupling_dims(spec);
      if (static_cast<int>(res.masks.size()) != d.m - 1) {
        throw Error("vjp_input: missing coupling masks residual");
      }
      Tensor delta0 =
          Tensor::alloc(ledger, Shape{d.P, d.c}, AllocTag::Workspace);
      subnet_cotangent(d, theta, res.masks, half_view(v, !spec.flip), ledger,
                       delta0.data(), nullptr, nullptr, v.precision());
      // cotangent of the subnet input half picks up the A term
      add_into_half(v, spec.flip, delta0.data(), +1.0);
      delta0.free();
      return;
    }
    case LayerKind::Activation: {
      if (!res.act_output) {
        throw Error("vjp_input: missing activation output residual");
      }
      const Tensor& y = *res.act_output;
      double* vd = v.data();
      const Precision prec = v.precision();
      for (std::int64_t i = 0; i < v.size(); ++i) {
        vd[i] = round_store(
            vd[i] * act_deriv_from_out(spec.act, spec.leaky_alpha, y[i]),
            prec);
      }
      return;
    }
    case LayerKind::Downsample: {
      Tensor out = Tensor::alloc(ledger, spec.in_shape, v.tag());
      psi_inverse_apply(v, out);
      v.free();
      v = std::move(out);
      return;
    }
  }
}

// ---- inverse-Jacobian cotangent (vijp) ----

void layer_vijp_input_inplace(const LayerSpec& spec, const double* theta,
                              const LayerResiduals* res, const Tensor* x_pre,
                              Tensor& h, MemoryLedger& ledger) {
  if (h.shape() != spec.in_shape) {
    throw ShapeError("vijp_input: cotangent shape mismatch");
  }
  switch (spec.kind) {
    case LayerKind::Coupling: {
      // J^{-1} = [[I, 0], [-A, I]]: the vjp cotangent pass with the
      // correction subtracted instead of added, no inverse evaluation.
      const SubnetDims d = coupling_dims(spec);
      if (res == nullptr || static_cast<int>(res->masks.size()) != d.m - 1) {
        throw Error("vijp_input: missing coupling masks");
      }
      Tensor delta0 =
          Tensor::alloc(ledger, Shape{d.P, d.c}, AllocTag::Workspace);
      subnet_cotangent(d, theta, res->masks, half_view(h, !spec.flip), ledger,
                       delta0.data(), nullptr, nullptr, h.precision());
      add_into_half(h, spec.flip, delta0.data(), -1.0);
      delta0.free();
      return;
    }
    case LayerKind::Activation: {
      if (x_pre == nullptr) {
        throw Error("vijp_input: missing pre-activation input");
      }
      double* hd = h.data();
      const Precision prec = h.precision();
      for (std::int64_t i = 0; i < h.size(); ++i) {
        const double fp =
            act_deriv_from_pre(spec.act, spec.leaky_alpha, (*x_pre)[i]);
        if (std::abs(fp) < 1e-300) {
          throw SingularityError("activation derivative underflow in vijp");
        }
        hd[i] = round_store(hd[i] / fp, prec);
      }
      return;
    }
    case LayerKind::Downsample: {
      Tensor out = Tensor::alloc(ledger, spec.out_shape, h.tag());
      psi_apply(h, out);
      h.free();
      h = std::move(out);
      return;
    }
  }
}

// ---- parameter gradient (vjp wrt theta) ----

Tensor layer_vjp_params(const LayerSpec& spec, const double* theta,
                        const LayerResiduals& res, const Tensor& v,
                        MemoryLedger& ledger, AllocTag tag) {
  if (spec.param_count() == 0) return Tensor();
  if (v.shape() != spec.out_shape) {
    throw ShapeError("vjp_params: cotangent shape mismatch");
  }
  const SubnetDims d = coupling_dims(spec);
  if (static_cast<int>(res.dense_inputs.size()) != d.m ||
      static_cast<int>(res.masks.size()) != d.m - 1) {
    throw Error("vjp_params: missing dense-input residuals");
  }
  Tensor grad = Tensor::alloc(ledger, Shape::vec(d.param_count()), tag);
  subnet_cotangent(d, theta, res.masks, half_view(v, !spec.flip), ledger,
                   nullptr, &res.dense_inputs, grad.data(), v.precision());
  return grad;
}

// ---- residual-based tangent step ----

void layer_jvp_via_residuals_inplace(const LayerSpec& spec,
                                     const double* theta,
                                     const LayerResiduals& res, Tensor& u,
                                     MemoryLedger& ledger) {
  if (u.shape() != spec.in_shape) {
    throw ShapeError("jvp_via_residuals: tangent shape mismatch");
  }
  switch (spec.kind) {
    case LayerKind::Coupling: {
      // tz_j = W_j tu_{j-1} gated by the stored masks; u2 += tz_m.
      const SubnetDims d = coupling_dims(spec);
      if (static_cast<int>(res.masks.size()) != d.m - 1) {
        throw Error("jvp_via_residuals: missing coupling masks");
      }
      const Precision prec = u.precision();
      Tensor cur;
      const double* cur_data = nullptr;
      for (int j = 1; j <= d.m; ++j) {
        const View tu = (j == 1) ? half_view(u, spec.flip)
                                 : View{cur_data, d.width(j - 1)};
        const std::int64_t rows = d.width(j), cols = d.width(j - 1);
        Tensor next = Tensor::alloc(ledger, Shape{d.P, rows},
                                    AllocTag::Tangent);
        const double* W = theta + d.weight_offset(j);
        double* nz = next.data();
        for (std::int64_t p = 0; p < d.P; ++p) {
          for (std::int64_t o = 0; o < rows; ++o) {
            double s = 0;
            const double* wr = W + o * cols;
            for (std::int64_t k = 0; k < cols; ++k) s += wr[k] * tu.at(p, k);
            nz[p * rows + o] = round_store(s, prec);
          }
        }
        if (j < d.m) {
          const MaskTensor& m = res.masks[static_cast<size_t>(j - 1)];
          for (std::int64_t i = 0; i < next.size(); ++i) {
            if (!m[i]) nz[i] = 0;
          }
        }
        if (cur.live()) cur.free();
        cur = std::move(next);
        cur_data = cur.data();
      }
      add_into_half(u, !spec.flip, cur.data(), +1.0);
      cur.free();
      return;
    }
    case LayerKind::Activation: {
      if (!res.act_output) {
        throw Error("jvp_via_residuals: missing activation output");
      }
      const Tensor& y = *res.act_output;
      double* ud = u.data();
      const Precision prec = u.precision();
      for (std::int64_t i = 0; i < u.size(); ++i) {
        ud[i] = round_store(
            ud[i] * act_deriv_from_out(spec.act, spec.leaky_alpha, y[i]),
            prec);
      }
      return;
    }
    case LayerKind::Downsample: {
      Tensor out = Tensor::alloc(ledger, spec.out_shape, u.tag());
      psi_apply(u, out);
      u.free();
      u = std::move(out);
      return;
    }
  }
}

double activation_forward(ActKind kind, double alpha, double x) {
  return act_forward_value(kind, alpha, x);
}
double activation_deriv_from_pre(ActKind kind, double alpha, double x) {
  return act_deriv_from_pre(kind, alpha, x);
}
double activation_deriv_from_out(ActKind kind, double alpha, double y) {
  return act_deriv_from_out(kind, alpha, y);
}
double activation_inverse(ActKind kind, double alpha, double y) {
  return act_inverse_value(kind, alpha, y);
}

// ---- allocating wrappers ----

Tensor layer_forward(const LayerSpec& spec, const double* theta,
                     const Tensor& x, MemoryLedger& ledger, AllocTag tag,
                     Capture capture, LayerResiduals* res) {
  Tensor y = x.clone(ledger, tag);
  layer_forward_inplace(spec, theta, y, ledger, capture, res);
  return y;
}

Tensor layer_inverse(const LayerSpec& spec, const double* theta,
                     const Tensor& y, MemoryLedger& ledger, AllocTag tag) {
  Tensor x = y.clone(ledger, tag);
  layer_inverse_inplace(spec, theta, x, ledger, Capture::None, nullptr);
  return x;
}

Tensor jvp_input(const LayerSpec& spec, const double* theta, const Tensor& x,
                 const Tensor& u, MemoryLedger& ledger, AllocTag tag) {
  Tensor xc = x.clone(ledger, AllocTag::Workspace);
  Tensor uc = u.clone(ledger, tag);
  layer_tangent_inplace(spec, theta, xc, uc, ledger);
  xc.free();
  return uc;
}

Tensor jvp_params(const LayerSpec& spec, const double* theta, const Tensor& x,
                  const ParamTangent& ptan, MemoryLedger& ledger,
                  AllocTag tag) {
  Tensor xc = x.clone(ledger, AllocTag::Workspace);
  Tensor u = Tensor::alloc(ledger, spec.in_shape, tag);
  layer_tangent_inplace(spec, theta, xc, u, ledger, ptan);
  xc.free();
  return u;
}

Tensor vjp_input(const LayerSpec& spec, const double* theta,
                 const LayerResiduals& res, const Tensor& v,
                 MemoryLedger& ledger, AllocTag tag) {
  Tensor vc = v.clone(ledger, tag);
  layer_vjp_input_inplace(spec, theta, res, vc, ledger);
  return vc;
}

Tensor vijp_input(const LayerSpec& spec, const double* theta,
                  const LayerResiduals* res, const Tensor* x_pre,
                  const Tensor& h, MemoryLedger& ledger, AllocTag tag) {
  Tensor hc = h.clone(ledger, tag);
  layer_vijp_input_inplace(spec, theta, res, x_pre, hc, ledger);
  return hc;
}

// ---- head ----

namespace {

void head_pool(const HeadSpec& head, const Tensor& x, double* pooled,
               Precision prec) {
  const std::int64_t P = head.pixels(), C = head.in_channels;
  for (std::int64_t c = 0; c < C; ++c) pooled[c] = 0;
  const double* xd = x.data();
  for (std::int64_t p = 0; p < P; ++p) {
    for (std::int64_t c = 0; c < C; ++c) pooled[c] += xd[p * C + c];
  }
  for (std::int64_t c = 0; c < C; ++c) {
    pooled[c] = round_store(pooled[c] / static_cast<double>(P), prec);
  }
}

void head_dense(const HeadSpec& head, const double* theta,
                const double* pooled, double* logits, Precision prec) {
  const std::int64_t C = head.in_channels;
  const int K = head.num_classes;
  const double* W = theta;
  const double* b = theta + static_cast<std::int64_t>(K) * C;
  for (int k = 0; k < K; ++k) {
    double s = b[k];
    for (std::int64_t c = 0; c < C; ++c) s += W[k * C + c] * pooled[c];
    logits[k] = round_store(s, prec);
  }
}

// softmax probabilities and loss via shifted log-sum-exp
double head_softmax(const double* logits, int K, int label, double* probs) {
  double mx = logits[0];
  for (int k = 1; k < K; ++k) mx = std::max(mx, logits[k]);
  double sum = 0;
  for (int k = 0; k < K; ++k) sum += std::exp(logits[k] - mx);
  const double lse = mx + std::log(sum);
  for (int k = 0; k < K; ++k) probs[k] = std::exp(logits[k] - lse);
  return lse - logits[label];
}

void check_head_input(const HeadSpec& head, const Tensor& x, int label,
                      bool need_label) {
  if (x.shape() !=
      Shape::hwc(head.in_height, head.in_width, head.in_channels)) {
    throw ShapeError("head: input shape mismatch");
  }
  if (need_label && (label < 0 || label >= head.num_classes)) {
    throw Error("head: label out of range");
  }
}

}  // namespace

double head_loss(const HeadSpec& head, const double* theta, const Tensor& x,
                 int label) {
  check_head_input(head, x, label, true);
  std::vector<double> pooled(static_cast<size_t>(head.in_channels));
  std::vector<double> logits(static_cast<size_t>(head.num_classes));
  std::vector<double> probs(static_cast<size_t>(head.num_classes));
  head_pool(head, x, pooled.data(), x.precision());
  head_dense(head, theta, pooled.data(), logits.data(), x.precision());
  return head_softmax(logits.data(), head.num_classes, label, probs.data());
}

int head_predict(const HeadSpec& head, const double* theta, const Tensor& x) {
  check_head_input(head, x, 0, false);
  std::vector<double> pooled(static_cast<size_t>(head.in_channels));
  std::vector<double> logits(static_cast<size_t>(head.num_classes));
  head_pool(head, x, pooled.data(), x.precision());
  head_dense(head, theta, pooled.data(), logits.data(), x.precision());
  int best = 0;
  for (int k = 1; k < head.num_classes; ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return best;
}

Tensor head_input_grad(const HeadSpec& head, const double* theta,
                       const Tensor& x, int label, MemoryLedger& ledger,
                       AllocTag tag) {
  check_head_input(head, x, label, true);
  const std::int64_t P = head.pixels(), C = head.in_channels;
  const int K = head.num_classes;
  std::vector<double> pooled(static_cast<size_t>(C));
  std::vector<double> logits(static_cast<size_t>(K));
  std::vector<double> probs(static_cast<size_t>(K));
  head_pool(head, x, pooled.data(), x.precision());
  head_dense(head, theta, pooled.data(), logits.data(), x.precision());
  head_softmax(logits.data(), K, label, probs.data());
  std::vector<double> dpooled(static_cast<size_t>(C), 0.0);
  for (int k = 0; k < K; ++k) {
    const double dk = probs[k] - (k == label ? 1.0 : 0.0);
    for (std::int64_t c = 0; c < C; ++c) dpooled[c] += dk * theta[k * C + c];
  }
  Tensor h = Tensor::alloc(ledger, x.shape(), tag);
  for (std::int64_t p = 0; p < P; ++p) {
    for (std::int64_t c = 0; c < C; ++c) {
      h.set(p * C + c, dpooled[c] / static_cast<double>(P));
    }
  }
  return h;
}

Tensor head_param_grad(const HeadSpec& head, const double* theta,
                       const Tensor& x, int label, MemoryLedger& ledger,
                       AllocTag tag) {
  check_head_input(head, x, label, true);
  const std::int64_t C = head.in_channels;
  const int K = head.num_classes;
  std::vector<double> pooled(static_cast<size_t>(C));
  std::vector<double> logits(static_cast<size_t>(K));
  std::vector<double> probs(static_cast<size_t>(K));
  head_pool(head, x, pooled.data(), x.precision());
  head_dense(head, theta, pooled.data(), logits.data(), x.precision());
  head_softmax(logits.data(), K, label, probs.data());
  Tensor g = Tensor::alloc(ledger, Shape::vec(head.param_count()), tag);
  for (int k = 0; k < K; ++k) {
    const double dk = probs[k] - (k == label ? 1.0 : 0.0);
    for (std::int64_t c = 0; c < C; ++c) g.set(k * C + c, dk * pooled[c]);
    g.set(static_cast<std::int64_t>(K) * C + k, dk);
  }
  return g;
}

HeadTangentOut head_tangent(const HeadSpec& head, const double* theta,
                            const Tensor& x, int label, const Tensor* u,
                            const ParamTangent& ptan) {
  check_head_input(head, x, label, true);
  const std::int64_t P = head.pixels(), C = head.in_channels;
  const int K = head.num_classes;
  std::vector<double> pooled(static_cast<size_t>(C));
  std::vector<double> logits(static_cast<size_t>(K));
  std::vector<double> probs(static_cast<size_t>(K));
  head_pool(head, x, pooled.data(), x.precision());
  head_dense(head, theta, pooled.data(), logits.data(), x.precision());

  std::vector<double> dlogits(static_cast<size_t>(K), 0.0);
  if (u != nullptr) {
    std::vector<double> dpooled(static_cast<size_t>(C), 0.0);
    const double* ud = u->data();
    for (std::int64_t p = 0; p < P; ++p) {
      for (std::int64_t c = 0; c < C; ++c) dpooled[c] += ud[p * C + c];
    }
    for (std::int64_t c = 0; c < C; ++c) dpooled[c] /= static_cast<double>(P);
    for (int k = 0; k < K; ++k) {
      double s = 0;
      for (std::int64_t c = 0; c < C; ++c) s += theta[k * C + c] * dpooled[c];
      dlogits[static_cast<size_t>(k)] += s;
    }
  }
  switch (ptan.kind) {
    case ParamTangent::Kind::None:
      break;
    case ParamTangent::Kind::Dense: {
      const double* dW = ptan.dense;
      const double* db = ptan.dense + static_cast<std::int64_t>(K) * C;
      for (int k = 0; k < K; ++k) {
        double s = db[k];
        for (std::int64_t c = 0; c < C; ++c) s += dW[k * C + c] * pooled[c];
        dlogits[static_cast<size_t>(k)] += s;
      }
      break;
    }
    case ParamTangent::Kind::Basis: {
      const std::int64_t i = ptan.basis_index;
      const std::int64_t nw = static_cast<std::int64_t>(K) * C;
      if (i < nw) {
        dlogits[static_cast<size_t>(i / C)] +=
            pooled[static_cast<size_t>(i % C)];
      } else {
        dlogits[static_cast<size_t>(i - nw)] += 1.0;
      }
      break;
    }
    case ParamTangent::Kind::Gaussian: {
      for (int k = 0; k < K; ++k) {
        for (std::int64_t c = 0; c < C; ++c) {
          dlogits[static_cast<size_t>(k)] += ptan.gauss->normal() * pooled[c];
        }
      }
      for (int k = 0; k < K; ++k) {
        dlogits[static_cast<size_t>(k)] += ptan.gauss->normal();
      }
      break;
    }
  }

  HeadTangentOut out;
  out.loss = head_softmax(logits.data(), K, label, probs.data());
  double dj = 0;
  for (int k = 0; k < K; ++k) {
    const double dk = probs[k] - (k == label ? 1.0 : 0.0);
    dj += dk * dlogits[static_cast<size_t>(k)];
  }
  out.dloss = dj;
  int best = 0;
  for (int k = 1; k < K; ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  out.predicted = best;
  return out;
}

}  // namespace invgrad
