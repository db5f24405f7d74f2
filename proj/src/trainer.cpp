// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include "invgrad/trainer.hpp"

#include <bit>
#include <memory>
#include <cmath>
#include <cstring>
#include <fstream>

#include "invgrad/rng.hpp"

namespace invgrad {

void TrainConfig::validate() const {
  if (lr <= 0) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (decay_rate <= 0 || decay_rate > 1) {
    throw ConfigError("decay rate must be in (0, 1]");
  }
}

Optimizer::Optimizer(const TrainConfig& cfg, std::int64_t param_count)
    : cfg_(cfg), state_ledger_(Precision::f64) {
  if (cfg.optimizer == OptimizerKind::Adam) {
    m_ = Tensor::alloc(state_ledger_, Shape::vec(param_count),
                       AllocTag::Parameter);
    v_ = Tensor::alloc(state_ledger_, Shape::vec(param_count),
                       AllocTag::Parameter);
  }
}

double Optimizer::lr_at(int step_index) const {
  if (cfg_.schedule == LrSchedule::Constant) return cfg_.lr;
  return cfg_.lr * std::pow(cfg_.decay_rate, step_index);
}

void Optimizer::step(Network& net, std::span<const double> grad,
                     int step_index) {
  const std::int64_t d = net.total_param_count();
  if (static_cast<std::int64_t>(grad.size()) != d) {
    throw ShapeError("optimizer: gradient length mismatch");
  }
  const double lr = lr_at(step_index);
  if (cfg_.optimizer == OptimizerKind::Sgd) {
    for (std::int64_t i = 0; i < d; ++i) {
      net.set_param(i, net.get_param(i) - lr * grad[static_cast<size_t>(i)]);
    }
    return;
  }
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double b1t = std::pow(b1, step_index + 1);
  const double b2t = std::pow(b2, step_index + 1);
  for (std::int64_t i = 0; i < d; ++i) {
    const double g = grad[static_cast<size_t>(i)];
    const double m = b1 * m_[i] + (1 - b1) * g;
    const double v = b2 * v_[i] + (1 - b2) * g * g;
    m_.set(i, m);
    v_.set(i, v);
    const double mhat = m / (1 - b1t);
    const double vhat = v / (1 - b2t);
    net.set_param(i, net.get_param(i) -
                         lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
  }
}

BatchGrad batch_gradient(const Network& net, const Dataset& ds,
                         std::span<const std::int64_t> indices,
                         StrategyId strategy, const StrategyOptions& opts) {
  BatchGrad out;
  out.grad.assign(static_cast<size_t>(net.total_param_count()), 0.0);
  MemoryLedger sample_ledger(net.spec().precision);
  int correct = 0;
  for (size_t b = 0; b < indices.size(); ++b) {
    const Sample& s = ds.samples[static_cast<size_t>(indices[b])];
    Tensor x0 = sample_to_input(ds, s, net.spec().channels, sample_ledger);
    StrategyOptions o = opts;
    o.seed = opts.seed + b;  // per-sample tangent stream for ProjForward
    const GradReport r = compute_gradients(net, x0, s.label, strategy, o);
    x0.free();
    const std::vector<double> flat = flatten_gradients(r);
    for (size_t i = 0; i < flat.size(); ++i) out.grad[i] += flat[i];
    out.loss += r.loss;
    if (r.predicted_label == s.label) ++correct;
    out.peak_tracked_bytes =
        std::max(out.peak_tracked_bytes, r.peak_tracked_bytes);
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (double& g : out.grad) g *= inv;
  out.loss *= inv;
  out.accuracy = static_cast<double>(correct) /
                 static_cast<double>(indices.size());
  return out;
}

namespace {

std::vector<std::int64_t> epoch_order(std::int64_t count, std::uint64_t seed,
                                      int epoch) {
  std::vector<std::int64_t> idx(static_cast<size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng = Rng::stream(seed, 0x5AFFu + static_cast<std::uint64_t>(epoch));
  for (std::int64_t i = count - 1; i > 0; --i) {
    const std::int64_t j = static_cast<std::int64_t>(
        rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  return idx;
}

double param_drift(const Network& net, const std::vector<double>& init) {
  double s = 0;
  for (std::int64_t i = 0; i < net.total_param_count(); ++i) {
    const double dlt = net.get_param(i) - init[static_cast<size_t>(i)];
    s += dlt * dlt;
  }
  return std::sqrt(s);
}

std::vector<double> snapshot_params(const Network& net) {
  std::vector<double> p(static_cast<size_t>(net.total_param_count()));
  for (std::int64_t i = 0; i < net.total_param_count(); ++i) {
    p[static_cast<size_t>(i)] = net.get_param(i);
  }
  return p;
}

}  // namespace

TrainResult train(Network& net, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.samples.empty()) throw ConfigError("empty dataset");
  TrainResult result;
  Optimizer opt(cfg, net.total_param_count());
  const std::vector<double> init = snapshot_params(net);

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order =
        epoch_order(static_cast<std::int64_t>(ds.samples.size()), cfg.seed,
                    epoch);
    for (size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      const size_t take =
          std::min<size_t>(cfg.batch_size, order.size() - pos);
      StrategyOptions opts;
      opts.seed = Rng::stream(cfg.seed, 0xBA7C4 + step).next_u64();
      const BatchGrad bg = batch_gradient(
          net, ds,
          std::span<const std::int64_t>(order.data() + pos, take),
          cfg.strategy, opts);
      result.peak_tracked_bytes =
          std::max(result.peak_tracked_bytes, bg.peak_tracked_bytes);
      if (std::isnan(bg.loss) || bg.loss > cfg.divergence_loss) {
        result.diverged = true;
        result.diverged_step = step;
        return result;
      }
      opt.step(net, bg.grad, step);
      TraceRecord rec;
      rec.step = step;
      rec.loss = bg.loss;
      rec.accuracy = bg.accuracy;
      rec.param_drift = param_drift(net, init);
      result.trace.push_back(rec);
      ++step;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) return result;
    }
  }
  return result;
}

std::vector<ErrorTrackArm> gradient_error_tracking(
    const NetworkSpec& spec, std::uint64_t net_seed, const Dataset& ds,
    const TrainConfig& base, const std::vector<StrategyId>& arms,
    StrategyId oracle, int steps) {
  base.validate();
  if (ds.samples.empty()) throw ConfigError("empty dataset");

  struct ArmState {
    ErrorTrackArm out;
    Network net;
    Optimizer opt;
    ArmState(StrategyId id, const NetworkSpec& sp, std::uint64_t seed,
             const TrainConfig& cfg)
        : net(sp, seed), opt(cfg, net.total_param_count()) {
      out.strategy = id;
    }
  };
  std::vector<std::unique_ptr<ArmState>> states;
  states.reserve(arms.size());
  for (StrategyId id : arms) {
    states.push_back(std::make_unique<ArmState>(id, spec, net_seed, base));
  }

  int step = 0;
  int epoch = 0;
  size_t pos = 0;
  auto order =
      epoch_order(static_cast<std::int64_t>(ds.samples.size()), base.seed, 0);
  while (step < steps) {
    if (pos >= order.size()) {
      ++epoch;
      order = epoch_order(static_cast<std::int64_t>(ds.samples.size()),
                          base.seed, epoch);
      pos = 0;
    }
    const size_t take =
        std::min<size_t>(base.batch_size, order.size() - pos);
    const std::span<const std::int64_t> batch(order.data() + pos, take);
    StrategyOptions opts;
    opts.seed = Rng::stream(base.seed, 0xBA7C4 + step).next_u64();
    for (auto& arm : states) {
      if (arm->out.diverged) continue;
      // arm gradient and oracle gradient at the same (arm's) parameters;
      // a reconstruction leaving the invertible domain counts as divergence
      BatchGrad g_arm;
      try {
        g_arm = batch_gradient(arm->net, ds, batch, arm->out.strategy, opts);
      } catch (const DomainError&) {
        arm->out.diverged = true;
        continue;
      } catch (const SingularityError&) {
        arm->out.diverged = true;
        continue;
      }
      const BatchGrad g_oracle =
          batch_gradient(arm->net, ds, batch, oracle, opts);
      double diff2 = 0, norm2 = 0;
      for (size_t i = 0; i < g_arm.grad.size(); ++i) {
        const double dlt = g_arm.grad[i] - g_oracle.grad[i];
        diff2 += dlt * dlt;
        norm2 += g_oracle.grad[i] * g_oracle.grad[i];
      }
      arm->out.errors.push_back(std::sqrt(diff2) /
                                std::max(std::sqrt(norm2), 1e-300));
      if (std::isnan(g_arm.loss) || g_arm.loss > base.divergence_loss) {
        arm->out.diverged = true;
        continue;
      }
      arm->opt.step(arm->net, g_arm.grad, step);
    }
    pos += take;
    ++step;
  }

  std::vector<ErrorTrackArm> out;
  out.reserve(states.size());
  for (auto& s : states) out.push_back(std::move(s->out));
  return out;
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'I', 'G', 'C', 'K', 'P', 'T', '0', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f64(std::string& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(size_t n) const {
    if (pos + n > buf.size()) throw IoError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    }
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const Network& net, const std::string& config_echo,
                     const std::string& path) {
  std::string out;
  out.append(kMagic, sizeof kMagic);
  put_u32(out, 1);  // version
  put_u64(out, config_echo.size());
  out += config_echo;
  const std::uint32_t entries =
      static_cast<std::uint32_t>(net.trunk_size()) + 1;
  put_u32(out, entries);
  for (int i = 0; i < net.trunk_size(); ++i) {
    const std::int64_t d = net.layer_param_count(i);
    put_u64(out, static_cast<std::uint64_t>(d));
    const double* p = net.layer_params(i);
    for (std::int64_t k = 0; k < d; ++k) put_f64(out, p[k]);
  }
  put_u64(out, static_cast<std::uint64_t>(net.head().param_count()));
  for (std::int64_t k = 0; k < net.head().param_count(); ++k) {
    put_f64(out, net.head_params()[k]);
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Reader r(buf);
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw IoError(path + ": not a checkpoint file");
  }
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != 1) {
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(ck.version));
  }
  const std::uint64_t cfg_len = r.u64();
  ck.config_echo = r.bytes(cfg_len);
  const std::uint32_t entries = r.u32();
  ck.layer_params.resize(entries);
  for (std::uint32_t i = 0; i < entries; ++i) {
    const std::uint64_t d = r.u64();
    auto& v = ck.layer_params[i];
    v.resize(d);
    for (std::uint64_t k = 0; k < d; ++k) v[k] = r.f64();
  }
  return ck;
}

void apply_checkpoint(Network& net, const Checkpoint& ck) {
  if (static_cast<int>(ck.layer_params.size()) != net.trunk_size() + 1) {
    throw ConfigError("checkpoint layer count does not match network");
  }
  for (int i = 0; i < net.trunk_size(); ++i) {
    const auto& v = ck.layer_params[static_cast<size_t>(i)];
    if (static_cast<std::int64_t>(v.size()) != net.layer_param_count(i)) {
      throw ConfigError("checkpoint shape table mismatch at layer " +
                        std::to_string(i));
    }
    double* p = net.mutable_layer_params(i);
    for (size_t k = 0; k < v.size(); ++k) p[k] = v[k];
  }
  const auto& hv = ck.layer_params.back();
  if (static_cast<std::int64_t>(hv.size()) != net.head().param_count()) {
    throw ConfigError("checkpoint head size mismatch");
  }
  double* hp = net.mutable_head_params();
  for (size_t k = 0; k < hv.size(); ++k) hp[k] = hv[k];
}

}  // namespace invgrad
