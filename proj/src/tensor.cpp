// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include "invgrad/tensor.hpp"

#include <limits>
#include <sstream>

namespace invgrad {

std::int64_t Shape::elems() const {
  if (extents.empty() || extents.size() > 4) {
    throw ShapeError("tensor rank must be 1..4, got " +
                     std::to_string(extents.size()));
  }
  std::int64_t n = 1;
  for (auto e : extents) {
    if (e <= 0) throw ShapeError("extents must be positive");
    if (n > std::numeric_limits<std::int64_t>::max() / e) {
      throw SizeError("extent product overflows");
    }
    n *= e;
  }
  return n;
}

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.extents.size(); ++i) {
    if (i) os << 'x';
    os << s.extents[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::alloc(MemoryLedger& ledger, const Shape& shape, AllocTag tag) {
  const std::int64_t n = shape.elems();
  Tensor t;
  t.ledger_ = &ledger;
  t.shape_ = shape;
  t.data_.assign(static_cast<size_t>(n), 0.0);
  t.tag_ = tag;
  t.prec_ = ledger.precision();
  ledger.on_alloc(tag, n * element_bytes(t.prec_));
  return t;
}

void Tensor::free() {
  if (!live()) throw LedgerFault("free of unregistered tensor");
  release();
}

void Tensor::release() {
  if (!live()) return;
  ledger_->on_free(tag_, byte_size());
  ledger_ = nullptr;
  data_.clear();
}

void Tensor::fill(double v) {
  const double r = round_store(v, prec_);
  for (auto& x : data_) x = r;
}

Tensor Tensor::clone(MemoryLedger& ledger, AllocTag tag) const {
  Tensor out = Tensor::alloc(ledger, shape_, tag);
  const Precision p = out.prec_;
  for (std::int64_t i = 0; i < size(); ++i) {
    out.data_[i] = round_store(data_[i], p);
  }
  return out;
}

MaskTensor MaskTensor::alloc(MemoryLedger& ledger, std::int64_t n,
                             AllocTag tag) {
  if (n <= 0) throw ShapeError("mask size must be positive");
  MaskTensor m;
  m.ledger_ = &ledger;
  m.data_.assign(static_cast<size_t>(n), 0);
  m.tag_ = tag;
  ledger.on_alloc(tag, n);  // 1 byte per unit
  return m;
}

void MaskTensor::free() {
  if (!live()) throw LedgerFault("free of unregistered mask");
  release();
}

void MaskTensor::release() {
  if (!live()) return;
  ledger_->on_free(tag_, size());
  ledger_ = nullptr;
  data_.clear();
}

static void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

Tensor add(const Tensor& a, const Tensor& b, MemoryLedger& ledger,
           AllocTag tag) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::alloc(ledger, a.shape(), tag);
  for (std::int64_t i = 0; i < a.size(); ++i) out.set(i, a[i] + b[i]);
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add_inplace");
  double* d = a.data();
  const Precision p = a.precision();
  for (std::int64_t i = 0; i < a.size(); ++i) {
    d[i] = round_store(d[i] + b[i], p);
  }
}

Tensor scale(const Tensor& a, double s, MemoryLedger& ledger, AllocTag tag) {
  Tensor out = Tensor::alloc(ledger, a.shape(), tag);
  for (std::int64_t i = 0; i < a.size(); ++i) out.set(i, a[i] * s);
  return out;
}

void scale_inplace(Tensor& a, double s) {
  double* d = a.data();
  const Precision p = a.precision();
  for (std::int64_t i = 0; i < a.size(); ++i) d[i] = round_store(d[i] * s, p);
}

double dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  double s = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor matmul(const Tensor& a, const Tensor& b, MemoryLedger& ledger,
              AllocTag tag) {
  if (a.shape().rank() != 2) throw ShapeError("matmul: lhs must be rank-2");
  const std::int64_t r = a.shape()[0];
  const std::int64_t k = a.shape()[1];
  if (b.shape().rank() == 1) {
    if (b.shape()[0] != k) throw ShapeError("matmul: inner extent mismatch");
    Tensor out = Tensor::alloc(ledger, Shape::vec(r), tag);
    for (std::int64_t i = 0; i < r; ++i) {
      double s = 0;
      for (std::int64_t j = 0; j < k; ++j) s += a[i * k + j] * b[j];
      out.set(i, s);
    }
    return out;
  }
  if (b.shape().rank() != 2 || b.shape()[0] != k) {
    throw ShapeError("matmul: inner extent mismatch");
  }
  const std::int64_t c = b.shape()[1];
  Tensor out = Tensor::alloc(ledger, Shape{r, c}, tag);
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      double s = 0;
      for (std::int64_t l = 0; l < k; ++l) s += a[i * k + l] * b[l * c + j];
      out.set(i * c + j, s);
    }
  }
  return out;
}

Tensor pad_channels(const Tensor& a, std::int64_t new_channels,
                    MemoryLedger& ledger, AllocTag tag) {
  if (a.shape().rank() != 3) throw ShapeError("pad_channels: need rank-3");
  const std::int64_t h = a.shape().height();
  const std::int64_t w = a.shape().width();
  const std::int64_t c = a.shape().channels();
  if (new_channels < c) {
    throw ShapeError("pad_channels: target channels below source");
  }
  Tensor out = Tensor::alloc(ledger, Shape::hwc(h, w, new_channels), tag);
  for (std::int64_t p = 0; p < h * w; ++p) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      out.set(p * new_channels + ch, a[p * c + ch]);
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& a, std::int64_t c0, std::int64_t c1,
                      MemoryLedger& ledger, AllocTag tag) {
  if (a.shape().rank() != 3) throw ShapeError("slice_channels: need rank-3");
  const std::int64_t h = a.shape().height();
  const std::int64_t w = a.shape().width();
  const std::int64_t c = a.shape().channels();
  if (c0 < 0 || c1 <= c0 || c1 > c) {
    throw ShapeError("slice_channels: bad channel range");
  }
  Tensor out = Tensor::alloc(ledger, Shape::hwc(h, w, c1 - c0), tag);
  const std::int64_t nc = c1 - c0;
  for (std::int64_t p = 0; p < h * w; ++p) {
    for (std::int64_t ch = 0; ch < nc; ++ch) {
      out.set(p * nc + ch, a[p * c + c0 + ch]);
    }
  }
  return out;
}

}  // namespace invgrad
