// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include "invgrad/network.hpp"

#include <cmath>

#include "invgrad/rng.hpp"

namespace invgrad {

void NetworkSpec::validate() const {
  if (height < 1 || width < 1 || channels < 1) {
    throw ConfigError("input extents must be positive");
  }
  if (layers_per_block.empty()) {
    throw ConfigError("at least one block is required");
  }
  for (int n : layers_per_block) {
    if (n < 0) throw ConfigError("layers per block must be >= 0");
  }
  if (num_classes < 2) throw ConfigError("need at least two classes");
  if (subnet_depth < 1) throw ConfigError("subnet depth must be >= 1");
  if (hidden_scale < 0) throw ConfigError("hidden scale must be >= 0");
  if (hidden_scale == 0 && subnet_depth > 1 && hidden_width < 1) {
    throw ConfigError("hidden width must be >= 1");
  }
  if (activation == ActKind::LeakyRelu && leaky_alpha <= 0) {
    throw ConfigError("leaky-relu slope must be positive");
  }
  // chain the shapes to surface invertibility violations before allocation
  std::int64_t h = height, w = width, c = channels;
  for (size_t b = 0; b < layers_per_block.size(); ++b) {
    if (layers_per_block[b] > 0 && (c % 2 != 0 || c < 2)) {
      throw ConfigError("block " + std::to_string(b) +
                        ": coupling layers need an even channel count >= 2, "
                        "got " + std::to_string(c));
    }
    if (downsample) {
      if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("block " + std::to_string(b) +
                          ": downsampling needs even spatial extents, got " +
                          std::to_string(h) + "x" + std::to_string(w));
      }
      h /= 2;
      w /= 2;
      c *= 4;
    }
  }
}

std::vector<LayerSpec> build_trunk(const NetworkSpec& spec) {
  spec.validate();
  std::vector<LayerSpec> trunk;
  Shape cur = Shape::hwc(spec.height, spec.width, spec.channels);
  int coupling_index = 0;  // alternates the transformed half across the trunk
  for (size_t b = 0; b < spec.layers_per_block.size(); ++b) {
    const std::int64_t c = cur.channels() / 2;
    SubnetSpec subnet;
    subnet.depth = spec.subnet_depth;
    subnet.width = spec.hidden_scale > 0
                       ? std::max<std::int64_t>(
                             1, static_cast<std::int64_t>(
                                    std::llround(spec.hidden_scale *
                                                 static_cast<double>(c))))
                       : spec.hidden_width;
    for (int i = 0; i < spec.layers_per_block[b]; ++i) {
      trunk.push_back(
          LayerSpec::coupling(cur, subnet, coupling_index % 2 == 1));
      ++coupling_index;
      if (spec.insert_activation) {
        trunk.push_back(
            LayerSpec::activation(cur, spec.activation, spec.leaky_alpha));
      }
    }
    if (spec.downsample) {
      trunk.push_back(LayerSpec::downsample(cur));
      cur = trunk.back().out_shape;
    }
  }
  return trunk;
}

Network::Network(const NetworkSpec& spec, std::uint64_t seed)
    : spec_(spec), trunk_(build_trunk(spec)), param_ledger_(spec.precision) {
  const Shape out =
      trunk_.empty() ? Shape::hwc(spec.height, spec.width, spec.channels)
                     : trunk_.back().out_shape;
  head_.in_height = out.height();
  head_.in_width = out.width();
  head_.in_channels = out.channels();
  head_.num_classes = spec.num_classes;

  trunk_params_.resize(trunk_.size());
  for (size_t i = 0; i < trunk_.size(); ++i) {
    const std::int64_t d = trunk_[i].param_count();
    if (d == 0) continue;
    Tensor t = Tensor::alloc(param_ledger_, Shape::vec(d),
                             AllocTag::Parameter);
    // He-style init on the weights, zero biases. The flat layout is
    // W_1, b_1, ..., W_m, b_m; fan-in per level sets the scale.
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    const LayerSpec& ls = trunk_[i];
    const std::int64_t c = ls.in_shape.channels() / 2;
    std::int64_t off = 0;
    for (int j = 1; j <= ls.subnet.depth; ++j) {
      const std::int64_t rows =
          (j == ls.subnet.depth) ? c : ls.subnet.width;
      const std::int64_t cols = (j == 1) ? c : ls.subnet.width;
      const double sigma =
          spec.init_scale * std::sqrt(2.0 / static_cast<double>(cols));
      for (std::int64_t k = 0; k < rows * cols; ++k) {
        t.set(off + k, sigma * rng.normal());
      }
      off += rows * cols + rows;  // biases stay zero
    }
    trunk_params_[i] = std::move(t);
  }

  head_params_ = Tensor::alloc(param_ledger_, Shape::vec(head_.param_count()),
                               AllocTag::Parameter);
  Rng rng = Rng::stream(seed, 0xFFFFULL + trunk_.size());
  const double sigma =
      spec.init_scale / std::sqrt(static_cast<double>(head_.in_channels));
  for (std::int64_t k = 0;
       k < static_cast<std::int64_t>(head_.num_classes) * head_.in_channels;
       ++k) {
    head_params_.set(k, sigma * rng.normal());
  }
}

const double* Network::layer_params(int i) const {
  const Tensor& t = trunk_params_[static_cast<size_t>(i)];
  return t.live() ? t.data() : nullptr;
}

double* Network::mutable_layer_params(int i) {
  Tensor& t = trunk_params_[static_cast<size_t>(i)];
  return t.live() ? t.data() : nullptr;
}

std::int64_t Network::max_layer_param_count() const {
  std::int64_t d = 0;
  for (const auto& l : trunk_) d = std::max(d, l.param_count());
  return d;
}

std::int64_t Network::trunk_param_count() const {
  std::int64_t d = 0;
  for (const auto& l : trunk_) d += l.param_count();
  return d;
}

Network::ParamRef Network::locate_param(std::int64_t flat_index) const {
  std::int64_t off = flat_index;
  for (int i = 0; i < trunk_size(); ++i) {
    const std::int64_t d = layer_param_count(i);
    if (off < d) return {i, off};
    off -= d;
  }
  if (off < head_.param_count()) return {-1, off};
  throw Error("flat parameter index out of range");
}

double Network::get_param(std::int64_t flat_index) const {
  const ParamRef r = locate_param(flat_index);
  return r.layer < 0 ? head_params_[r.offset]
                     : layer_params(r.layer)[r.offset];
}

void Network::set_param(std::int64_t flat_index, double v) {
  const ParamRef r = locate_param(flat_index);
  if (r.layer < 0) {
    head_params_.set(r.offset, v);
  } else {
    Tensor& t = trunk_params_[static_cast<size_t>(r.layer)];
    t.set(r.offset, v);
  }
}

std::int64_t Network::forward_cost_ops() const {
  std::int64_t ops = 0;
  for (const auto& l : trunk_) {
    switch (l.kind) {
      case LayerKind::Coupling: {
        const std::int64_t P = l.in_shape.height() * l.in_shape.width();
        const std::int64_t c = l.in_shape.channels() / 2;
        std::int64_t prev = c;
        for (int j = 1; j <= l.subnet.depth; ++j) {
          const std::int64_t cur = (j == l.subnet.depth) ? c : l.subnet.width;
          ops += P * cur * prev;
          prev = cur;
        }
        break;
      }
      case LayerKind::Activation:
      case LayerKind::Downsample:
        ops += l.in_shape.elems();
        break;
    }
  }
  ops += head_.pixels() * head_.in_channels +
         static_cast<std::int64_t>(head_.num_classes) * head_.in_channels;
  return ops;
}

}  // namespace invgrad
