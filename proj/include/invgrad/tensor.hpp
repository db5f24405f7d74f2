// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "invgrad/errors.hpp"
#include "invgrad/ledger.hpp"

namespace invgrad {

// Dense extents, rank 1..4. Rank-3 data uses height x width x channels
// layout with index ((h*W)+w)*C + c; flat vectors are 1x1xC or rank-1.
struct Shape {
  std::vector<std::int64_t> extents;

  Shape() = default;
  Shape(std::initializer_list<std::int64_t> e) : extents(e) {}
  explicit Shape(std::vector<std::int64_t> e) : extents(std::move(e)) {}

  static Shape hwc(std::int64_t h, std::int64_t w, std::int64_t c) {
    return Shape{h, w, c};
  }
  static Shape vec(std::int64_t n) { return Shape{n}; }

  int rank() const { return static_cast<int>(extents.size()); }
  std::int64_t operator[](int i) const { return extents[i]; }

  // Overflow-checked element count; throws SizeError.
  std::int64_t elems() const;

  std::int64_t height() const { return extents[0]; }
  std::int64_t width() const { return extents[1]; }
  std::int64_t channels() const { return extents[2]; }

  bool operator==(const Shape& o) const { return extents == o.extents; }
  bool operator!=(const Shape& o) const { return extents != o.extents; }
};

std::string to_string(const Shape& s);

// Rounds a value down to the run precision on store. In 32-bit mode all
// arithmetic still happens in double but every stored value is a float.
inline double round_store(double v, Precision p) {
  return p == Precision::f64 ? v : static_cast<double>(static_cast<float>(v));
}

// Move-only dense tensor registered in exactly one ledger. Strategies free
// tensors explicitly so that ledger peaks reflect algorithmic lifetime
// choices; the destructor deregisters as a backstop.
class Tensor {
 public:
  Tensor() = default;

  // Zero-initialized tensor registered under `tag`.
  static Tensor alloc(MemoryLedger& ledger, const Shape& shape, AllocTag tag);

  Tensor(const Tensor&) = delete;
  Tensor& operator=(const Tensor&) = delete;
  Tensor(Tensor&& o) noexcept { move_from(o); }
  Tensor& operator=(Tensor&& o) noexcept {
    if (this != &o) {
      release();
      move_from(o);
    }
    return *this;
  }
  ~Tensor() { release(); }

  // Explicit deregistration. Freeing a tensor that is not live (never
  // allocated, moved-from, or already freed) is a ledger fault.
  void free();

  bool live() const { return ledger_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  AllocTag tag() const { return tag_; }
  MemoryLedger& ledger() const { return *ledger_; }
  Precision precision() const { return prec_; }
  std::int64_t byte_size() const {
    return size() * element_bytes(prec_);
  }

  double operator[](std::int64_t i) const { return data_[i]; }
  void set(std::int64_t i, double v) { data_[i] = round_store(v, prec_); }

  // Raw access for kernels. Writers must round through round_store with
  // this tensor's precision.
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  Tensor clone(MemoryLedger& ledger, AllocTag tag) const;

 private:
  void release();
  void move_from(Tensor& o) {
    ledger_ = o.ledger_;
    shape_ = std::move(o.shape_);
    data_ = std::move(o.data_);
    tag_ = o.tag_;
    prec_ = o.prec_;
    o.ledger_ = nullptr;
  }

  MemoryLedger* ledger_ = nullptr;
  Shape shape_;
  std::vector<double> data_;
  AllocTag tag_ = AllocTag::Workspace;
  Precision prec_ = Precision::f64;
};

// Byte-per-element tensor for ReLU sign masks (the ResidualX of coupling
// layers). One unit costs one ledger byte.
class MaskTensor {
 public:
  MaskTensor() = default;
  static MaskTensor alloc(MemoryLedger& ledger, std::int64_t n, AllocTag tag);

  MaskTensor(const MaskTensor&) = delete;
  MaskTensor& operator=(const MaskTensor&) = delete;
  MaskTensor(MaskTensor&& o) noexcept { move_from(o); }
  MaskTensor& operator=(MaskTensor&& o) noexcept {
    if (this != &o) {
      release();
      move_from(o);
    }
    return *this;
  }
  ~MaskTensor() { release(); }

  void free();
  bool live() const { return ledger_ != nullptr; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  std::uint8_t operator[](std::int64_t i) const { return data_[i]; }
  std::uint8_t* data() { return data_.data(); }
  const std::uint8_t* data() const { return data_.data(); }

 private:
  void release();
  void move_from(MaskTensor& o) {
    ledger_ = o.ledger_;
    data_ = std::move(o.data_);
    tag_ = o.tag_;
    o.ledger_ = nullptr;
  }

  MemoryLedger* ledger_ = nullptr;
  std::vector<std::uint8_t> data_;
  AllocTag tag_ = AllocTag::ResidualX;
};

// ---- dense ops (all results are fresh allocations in `ledger`) ----

Tensor add(const Tensor& a, const Tensor& b, MemoryLedger& ledger,
           AllocTag tag = AllocTag::Workspace);
void add_inplace(Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s, MemoryLedger& ledger,
             AllocTag tag = AllocTag::Workspace);
void scale_inplace(Tensor& a, double s);
double dot(const Tensor& a, const Tensor& b);

// Elementwise map.
template <class F>
Tensor elementwise(const Tensor& a, F&& f, MemoryLedger& ledger,
                   AllocTag tag = AllocTag::Workspace) {
  Tensor out = Tensor::alloc(ledger, a.shape(), tag);
  for (std::int64_t i = 0; i < a.size(); ++i) out.set(i, f(a[i]));
  return out;
}

// matmul: a is rank-2 [r,k]; b is rank-2 [k,c] or rank-1 [k].
Tensor matmul(const Tensor& a, const Tensor& b, MemoryLedger& ledger,
              AllocTag tag = AllocTag::Workspace);

// Appends zero channels to a rank-3 tensor.
Tensor pad_channels(const Tensor& a, std::int64_t new_channels,
                    MemoryLedger& ledger, AllocTag tag = AllocTag::Workspace);

// Copies channels [c0, c1) of a rank-3 tensor.
Tensor slice_channels(const Tensor& a, std::int64_t c0, std::int64_t c1,
                      MemoryLedger& ledger, AllocTag tag = AllocTag::Workspace);

}  // namespace invgrad
