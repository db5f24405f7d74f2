// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: every release gate runs here, one test case per
// criterion, each printing a single PASS/FAIL line. Tolerances are pinned
// in code; nothing is deferred to later calibration.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "invgrad/bench.hpp"
#include "invgrad/trainer.hpp"
#include "test_util.hpp"

using namespace invgrad;
using Clock = std::chrono::steady_clock;

namespace {

// Collects sub-checks and prints the one-line verdict for a criterion.
class Criterion {
 public:
  Criterion(int id, const char* name) : id_(id), name_(name) {}
  void expect(bool cond, const std::string& what) {
    CHECK_MESSAGE(cond, "criterion ", id_, ": ", what);
    if (!cond) failures_.push_back(what);
  }
  ~Criterion() {
    const double sec =
        std::chrono::duration<double>(Clock::now() - t0_).count();
    std::printf("[ACCEPTANCE] criterion %d (%s): %s (%.1f s)\n", id_, name_,
                failures_.empty() ? "PASS" : "FAIL", sec);
    for (const auto& f : failures_) {
      std::printf("[ACCEPTANCE]   failed: %s\n", f.c_str());
    }
    std::fflush(stdout);
  }
  double elapsed() const {
    return std::chrono::duration<double>(Clock::now() - t0_).count();
  }

 private:
  int id_;
  const char* name_;
  std::vector<std::string> failures_;
  Clock::time_point t0_ = Clock::now();
};

Tensor draw_input(const Network& net, std::uint64_t seed, MemoryLedger& lg,
                  double scale = 0.6) {
  Rng rng = Rng::stream(seed, 0x717u);
  Tensor x = Tensor::alloc(lg, net.input_shape(), AllocTag::Activation);
  for (std::int64_t i = 0; i < x.size(); ++i) x.set(i, scale * rng.normal());
  return x;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::max(std::sqrt(aa * bb), 1e-300);
}

}  // namespace

TEST_CASE("criterion 1: exactness of Moonwalk, Mixed and Forward") {
  Criterion c(1, "exactness");
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(trial);
    Rng pick(seed);
    NetworkSpec spec;
    spec.height = 8;
    spec.width = 8;
    spec.channels = 4 + 2 * static_cast<std::int64_t>(pick.below(7));  // 4..16
    const int lpb = 1 + static_cast<int>(pick.below(3));               // 1..3
    spec.layers_per_block = {lpb, 1 + static_cast<int>(pick.below(3)),
                             1 + static_cast<int>(pick.below(3))};
    spec.subnet_depth = 2;
    spec.hidden_width = 4 + static_cast<std::int64_t>(pick.below(3));
    spec.num_classes = 2 + static_cast<int>(pick.below(3));
    spec.init_scale = 0.5;  // keeps deep coupling stacks from saturating
    Network net(spec, seed);
    MemoryLedger lg;
    const int label = static_cast<int>(seed % spec.num_classes);

    // reject draws whose softmax is already saturated: a vanishing loss
    // leaves nothing for a finite-difference oracle to resolve
    Tensor x0;
    for (std::uint64_t attempt = 0; attempt < 20; ++attempt) {
      x0 = draw_input(net, seed + 131 * attempt, lg);
      const double j = forward_loss(net, x0, label);
      if (j > 1e-3 && j < 50.0) break;
      x0.free();
    }
    REQUIRE(x0.live());

    const GradReport bp = backprop(net, x0, label);
    const double mw_err =
        compare_reports(moonwalk(net, x0, label), bp).max_rel;
    const double mx_err = compare_reports(mixed(net, x0, label), bp).max_rel;
    const double fw_err =
        compare_reports(forward_naive(net, x0, label), bp).max_rel;
    c.expect(mw_err <= 1e-7,
             "net " + std::to_string(trial) + ": Moonwalk vs Backprop " +
                 fmt(mw_err) + " > 1e-7");
    c.expect(mx_err <= 1e-7,
             "net " + std::to_string(trial) + ": Mixed vs Backprop " +
                 fmt(mx_err) + " > 1e-7");
    c.expect(fw_err <= 1e-7,
             "net " + std::to_string(trial) + ": Forward vs Backprop " +
                 fmt(fw_err) + " > 1e-7");
    // Central differences are not a valid derivative oracle for parameters
    // whose step crosses a ReLU kink; those components flag themselves by
    // disagreeing across two step sizes and are excluded. Coverage must
    // stay essentially complete.
    const std::vector<double> fd = fd_gradient(net, x0, label, 1e-5);
    const std::vector<double> fd2 = fd_gradient(net, x0, label, 2e-5);
    const std::vector<double> flat = flatten_gradients(bp);
    double linf = 0;
    for (double v : fd) linf = std::max(linf, std::abs(v));
    const double floor = std::max(1e-3 * linf, 1e-30);
    double fd_err = 0;
    std::int64_t valid = 0;
    for (size_t i = 0; i < fd.size(); ++i) {
      const double scale = std::max(std::abs(fd[i]), floor);
      if (std::abs(fd[i] - fd2[i]) > 1e-6 * scale) continue;  // kink-tainted
      ++valid;
      const double denom = std::max({std::abs(fd[i]), std::abs(flat[i]),
                                     floor});
      fd_err = std::max(fd_err, std::abs(flat[i] - fd[i]) / denom);
    }
    c.expect(fd_err <= 1e-5,
             "net " + std::to_string(trial) + ": Backprop vs central FD " +
                 fmt(fd_err) + " > 1e-5");
    c.expect(valid >= static_cast<std::int64_t>(fd.size()) * 995 / 1000,
             "net " + std::to_string(trial) +
                 ": too many kink-tainted FD components");
    x0.free();
  }
  c.expect(c.elapsed() <= 120.0, "runtime exceeded 2 minutes");
}

TEST_CASE("criterion 2: vijp composed with the Jacobian is the identity") {
  Criterion c(2, "inverse-jacobian identity");
  Rng rng(42);
  MemoryLedger lg;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> theta;
    LayerSpec specs[3] = {
        LayerSpec::coupling(Shape::hwc(1, 1, 4), SubnetSpec{2, 7},
                            trial % 2 == 1),
        LayerSpec::activation(Shape::hwc(1, 1, 4), ActKind::Tanh),
        LayerSpec::activation(Shape::hwc(1, 1, 4), ActKind::LeakyRelu, 0.1),
    };
    theta = test::rand_vec(specs[0].param_count(), rng, 0.6);
    for (const LayerSpec& spec : specs) {
      Tensor x = test::rand_tensor(lg, spec.in_shape, rng, 0.6);
      const std::vector<double> jac =
          test::assemble_input_jacobian(spec, theta.data(), x, lg);
      LayerResiduals res;
      Tensor y = layer_forward(spec, theta.data(), x, lg,
                               AllocTag::Workspace, Capture::Full, &res);
      Tensor h = test::rand_tensor(lg, spec.in_shape, rng, 1.0,
                                   AllocTag::Cotangent);
      Tensor hi = vijp_input(spec, theta.data(), &res, &x, h, lg);
      const std::int64_t n = spec.in_shape.elems();
      std::vector<double> round(static_cast<size_t>(n), 0.0);
      for (std::int64_t row = 0; row < n; ++row) {
        for (std::int64_t col = 0; col < n; ++col) {
          round[static_cast<size_t>(col)] +=
              hi[row] * jac[static_cast<size_t>(row * n + col)];
        }
      }
      std::vector<double> orig(h.data(), h.data() + h.size());
      const double err = max_rel_err(round, orig);
      c.expect(err <= 1e-10, "vijp round trip error " + fmt(err) +
                                 " > 1e-10 on a 1x1x4 layer");
      hi.free();
      h.free();
      y.free();
      x.free();
      res.free_all();
    }
  }
}

TEST_CASE("criterion 3: memory ordering and scaling across the depth grid") {
  Criterion c(3, "memory ordering and scaling");
  SweepConfig cfg;
  cfg.base.height = 8;
  cfg.base.width = 8;
  cfg.base.channels = 2;
  cfg.base.layers_per_block = {1, 1, 1};
  cfg.base.subnet_depth = 2;
  cfg.base.hidden_width = 0;
  cfg.base.hidden_scale = 8.0;
  cfg.base.insert_activation = true;
  cfg.base.activation = ActKind::LeakyRelu;
  cfg.base.num_classes = 2;
  cfg.layers_grid = {1, 3, 5, 10};
  cfg.seed = 7;
  cfg.time_reps = 0;

  const std::vector<SweepRow> rows = run_sweep(cfg);
  const auto series = [&rows](StrategyId id) {
    std::vector<double> x, y;
    for (const SweepRow& r : rows) {
      if (r.strategy == id && !r.skipped) {
        x.push_back(static_cast<double>(r.L_total));
        y.push_back(static_cast<double>(r.peak_bytes));
      }
    }
    return std::pair(x, y);
  };

  const auto [bx, by] = series(StrategyId::Backprop);
  c.expect(bx.size() == 4, "Backprop must run in all four cells");
  const FitResult bp_fit = fit_scaling(bx, by);
  c.expect(bp_fit.slope > 0, "Backprop peak slope must be positive");
  c.expect(bp_fit.r2 >= 0.95,
           "Backprop peak linearity R^2 " + fmt(bp_fit.r2) + " < 0.95");

  for (StrategyId id : {StrategyId::Moonwalk, StrategyId::Forward,
                        StrategyId::RevBackprop, StrategyId::ProjForward}) {
    const auto [x, y] = series(id);
    c.expect(y.size() == 4, std::string(to_string(id)) + " missing cells");
    const auto [mn, mx] = std::minmax_element(y.begin(), y.end());
    const double ratio = *mx / *mn;
    c.expect(ratio <= 1.10, std::string(to_string(id)) +
                                " peak varies by " + fmt(ratio) +
                                " > 1.10 across the sweep");
  }

  const auto [mxx, mxy] = series(StrategyId::Mixed);
  const FitResult mx_fit = fit_scaling(mxx, mxy);
  c.expect(mx_fit.slope <= 0.5 * bp_fit.slope,
           "Mixed slope " + fmt(mx_fit.slope) + " exceeds half of Backprop " +
               fmt(bp_fit.slope));

  const auto [wx, wy] = series(StrategyId::Moonwalk);
  for (size_t i = 0; i < bx.size(); ++i) {
    if (bx[i] <= 10) continue;  // cells with >= 2 layers per block
    c.expect(by[i] > mxy[i], "cell L=" + std::to_string((int)bx[i]) +
                                 ": Backprop peak must exceed Mixed");
    c.expect(mxy[i] > wy[i], "cell L=" + std::to_string((int)bx[i]) +
                                 ": Mixed peak must exceed Moonwalk");
  }
  c.expect(c.elapsed() <= 300.0, "runtime exceeded 5 minutes");
}

TEST_CASE("criterion 4: time scaling trends") {
  Criterion c(4, "time scaling");
  // three blocks without downsampling isolate the depth trends; the
  // parameter count dwarfs n so the per-parameter passes dominate Forward
  SweepConfig cfg;
  cfg.base.height = 2;
  cfg.base.width = 2;
  cfg.base.channels = 8;
  cfg.base.layers_per_block = {1, 1, 1};
  cfg.base.subnet_depth = 2;
  cfg.base.hidden_width = 0;
  cfg.base.hidden_scale = 8.0;
  cfg.base.downsample = false;
  cfg.base.num_classes = 2;
  cfg.strategies = {StrategyId::Forward, StrategyId::Moonwalk,
                    StrategyId::Mixed, StrategyId::Backprop};
  cfg.layers_grid = {1, 3, 5, 10};
  cfg.seed = 11;
  cfg.time_reps = 5;  // median of 5 after one warmup
  cfg.measure_error = false;

  const std::vector<SweepRow> rows = run_sweep(cfg);
  const auto times = [&rows](StrategyId id) {
    std::vector<double> x, y;
    for (const SweepRow& r : rows) {
      if (r.strategy == id && !r.skipped && r.has_time) {
        x.push_back(static_cast<double>(r.L_total));
        y.push_back(r.time_ms);
      }
    }
    return std::pair(x, y);
  };

  const auto [fx, fy] = times(StrategyId::Forward);
  const auto [wx, wy] = times(StrategyId::Moonwalk);
  const auto [mx, my] = times(StrategyId::Mixed);
  const auto [bx, by] = times(StrategyId::Backprop);
  c.expect(fx.size() == 4 && wx.size() == 4, "missing timed cells");

  const double fwd_exp = fit_loglog(fx, fy).slope;
  c.expect(fwd_exp >= 1.6 && fwd_exp <= 2.4,
           "Forward time exponent " + fmt(fwd_exp) + " outside [1.6, 2.4]");
  const double mw_exp = fit_loglog(wx, wy).slope;
  c.expect(mw_exp >= 0.7 && mw_exp <= 1.4,
           "Moonwalk time exponent " + fmt(mw_exp) + " outside [0.7, 1.4]");

  c.expect(fy.back() >= 5.0 * wy.back(),
           "largest cell: Forward " + fmt(fy.back()) + " ms not 5x Moonwalk " +
               fmt(wy.back()) + " ms");
  c.expect(my.back() <= 4.0 * by.back(),
           "largest cell: Mixed " + fmt(my.back()) + " ms above 4x Backprop " +
               fmt(by.back()) + " ms");

  // monotone growth with depth, allowing 10% measurement slack
  for (const auto* t : {&fy, &wy, &my, &by}) {
    for (size_t i = 1; i < t->size(); ++i) {
      c.expect((*t)[i] >= 0.9 * (*t)[i - 1],
               "median time decreased along the depth grid");
    }
  }
  c.expect(c.elapsed() <= 900.0, "runtime exceeded 15 minutes");
}

TEST_CASE("criterion 5: ProjForward unbiasedness") {
  Criterion c(5, "projforward unbiasedness");
  NetworkSpec spec;
  spec.height = 2;
  spec.width = 2;
  spec.channels = 2;
  spec.layers_per_block = {2};
  spec.subnet_depth = 2;
  spec.hidden_width = 4;
  spec.num_classes = 2;
  Network net(spec, 31);
  MemoryLedger lg;
  Tensor x0 = draw_input(net, 31, lg);
  const int label = 1;

  const GradReport bp = backprop(net, x0, label);
  const std::vector<double> exact = flatten_gradients(bp);

  std::vector<double> mean(exact.size(), 0.0);
  std::vector<std::vector<double>> mean_layers(bp.layer_grads.size());
  for (size_t i = 0; i < bp.layer_grads.size(); ++i) {
    mean_layers[i].assign(bp.layer_grads[i].size(), 0.0);
  }
  const int checkpoints[] = {1000, 4000, 16000};
  double errs[3] = {0, 0, 0};
  int next = 0;
  for (int s = 1; s <= 16000; ++s) {
    const GradReport r =
        proj_forward(net, x0, label, 777 + static_cast<std::uint64_t>(s));
    const std::vector<double> f = flatten_gradients(r);
    for (size_t i = 0; i < mean.size(); ++i) mean[i] += f[i];
    for (size_t l = 0; l < r.layer_grads.size(); ++l) {
      for (size_t i = 0; i < r.layer_grads[l].size(); ++i) {
        mean_layers[l][i] += r.layer_grads[l][i];
      }
    }
    if (next < 3 && s == checkpoints[next]) {
      double d2 = 0, n2 = 0;
      for (size_t i = 0; i < mean.size(); ++i) {
        const double m = mean[i] / s;
        d2 += (m - exact[i]) * (m - exact[i]);
        n2 += exact[i] * exact[i];
      }
      errs[next] = std::sqrt(d2 / n2);
      ++next;
    }
  }

  for (size_t l = 0; l < mean_layers.size(); ++l) {
    if (mean_layers[l].empty()) continue;
    for (double& v : mean_layers[l]) v /= 16000.0;
    const double cs = cosine(mean_layers[l], bp.layer_grads[l]);
    c.expect(cs >= 0.99, "layer " + std::to_string(l) + " cosine " +
                             fmt(cs) + " < 0.99 after 16000 samples");
  }
  // each quadrupling should halve the error, with 50% slack
  c.expect(errs[1] <= 0.75 * errs[0],
           "error " + fmt(errs[1]) + " at 4k samples not below 0.75 * " +
               fmt(errs[0]));
  c.expect(errs[2] <= 0.75 * errs[1],
           "error " + fmt(errs[2]) + " at 16k samples not below 0.75 * " +
               fmt(errs[1]));
  x0.free();
}

TEST_CASE("criterion 6: RevBackprop instability with tanh outputs in f32") {
  Criterion c(6, "instability reproduction");
  NetworkSpec spec;
  spec.height = 8;
  spec.width = 8;
  spec.channels = 2;
  spec.layers_per_block = {2, 2, 2};
  spec.subnet_depth = 2;
  spec.hidden_width = 6;
  spec.insert_activation = true;
  spec.activation = ActKind::Tanh;
  spec.num_classes = 2;
  spec.precision = Precision::f32;
  spec.init_scale = 1.2;

  SyntheticSpec data;
  data.count = 32;
  data.height = 8;
  data.width = 8;
  data.channels = 1;
  data.num_classes = 2;
  data.noise = 0.05;
  const Dataset ds = generate_dataset(data, 3);

  TrainConfig base;
  base.optimizer = OptimizerKind::Adam;
  base.lr = 1e-3;
  base.batch_size = 8;
  base.seed = 3;

  const int steps = 200;
  const auto arms = gradient_error_tracking(
      spec, 3, ds, base, {StrategyId::RevBackprop, StrategyId::Mixed},
      StrategyId::Backprop, steps);
  const auto& rev = arms[0];
  const auto& mix = arms[1];
  c.expect(!rev.diverged && static_cast<int>(rev.errors.size()) == steps,
           "RevBackprop arm must survive 200 tracked steps");
  c.expect(!mix.diverged && static_cast<int>(mix.errors.size()) == steps,
           "Mixed arm must survive 200 tracked steps");
  if (rev.errors.size() == static_cast<size_t>(steps) &&
      mix.errors.size() == static_cast<size_t>(steps)) {
    const double rev_final = rev.errors.back();
    const double mix_final = mix.errors.back();
    c.expect(rev_final >= 10.0 * mix_final,
             "final RevBackprop error " + fmt(rev_final) + " not 10x Mixed " +
                 fmt(mix_final));
    std::vector<double> xs(rev.errors.size());
    for (size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i);
    const double slope = fit_scaling(xs, rev.errors).slope;
    c.expect(slope >= 0,
             "RevBackprop error trend must be non-decreasing, slope " +
                 fmt(slope));
    const double mix_max =
        *std::max_element(mix.errors.begin(), mix.errors.end());
    c.expect(mix_max <= 1e-4, "Mixed error " + fmt(mix_max) +
                                  " exceeded 1e-4 during the run");
  }
  c.expect(c.elapsed() <= 300.0, "runtime exceeded 5 minutes");
}

TEST_CASE("criterion 7: phase 2 streams one gradient buffer at a time") {
  Criterion c(7, "streaming gradients");
  for (std::uint64_t seed : {1001ULL, 1004ULL, 1009ULL, 1013ULL}) {
    Rng pick(seed);
    NetworkSpec spec;
    spec.height = 8;
    spec.width = 8;
    spec.channels = 4 + 2 * static_cast<std::int64_t>(pick.below(4));
    spec.layers_per_block = {1 + static_cast<int>(pick.below(3)),
                             1 + static_cast<int>(pick.below(3)),
                             1 + static_cast<int>(pick.below(3))};
    spec.subnet_depth = 2;
    spec.hidden_width = 5;
    spec.num_classes = 2;
    Network net(spec, seed);
    MemoryLedger lg;
    Tensor x0 = draw_input(net, seed, lg);

    const GradReport mw = moonwalk(net, x0, 0);
    const GradReport mx = mixed(net, x0, 0);
    c.expect(mw.peak_gradient_buffers == 1,
             "Moonwalk held " + std::to_string(mw.peak_gradient_buffers) +
                 " gradient buffers simultaneously");
    c.expect(mx.peak_gradient_buffers == 1,
             "Mixed held " + std::to_string(mx.peak_gradient_buffers) +
                 " gradient buffers simultaneously");
    // contrast: Backprop stores one per parametrized layer plus the head
    const GradReport bp = backprop(net, x0, 0);
    std::int64_t param_layers = 0;
    for (int i = 0; i < net.trunk_size(); ++i) {
      param_layers += net.layer_param_count(i) > 0;
    }
    c.expect(bp.peak_gradient_buffers == param_layers + 1,
             "Backprop gradient buffer count unexpected");
    x0.free();
  }
}

TEST_CASE("criterion 8: determinism and I/O round trips") {
  Criterion c(8, "determinism and i/o");
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "invgrad_acceptance";
  fs::remove_all(root);

  // twin bench runs on the golden config produce byte-identical CSV
  cli::BenchOptions bench;
  bench.net.channels = 2;
  bench.net.layers = {1, 1, 1};
  bench.net.hidden_width = 0;
  bench.net.hidden_scale = 8.0;
  bench.net.activation = "leaky_relu";
  bench.common.seed = 7;
  bench.layers_grid = {1, 2};
  bench.strategies = {"Backprop", "Moonwalk", "ProjForward"};
  bench.common.out_dir = (root / "bench_a").string();
  cli::cmd_bench(bench);
  bench.common.out_dir = (root / "bench_b").string();
  cli::cmd_bench(bench);
  const auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
  };
  const std::string csv_a = slurp(root / "bench_a" / "sweep.csv");
  c.expect(!csv_a.empty() && csv_a == slurp(root / "bench_b" / "sweep.csv"),
           "twin bench runs must emit byte-identical sweep.csv");
  c.expect(csv_a.rfind("strategy,L_total,n,d,peak_bytes,time_ms,max_rel_err,"
                       "status\n",
                       0) == 0,
           "sweep.csv header mismatch");

  // checkpoint round trip is bit-exact
  NetworkSpec spec;
  spec.channels = 4;
  spec.layers_per_block = {2, 1, 2};
  spec.hidden_width = 5;
  Network net(spec, 99);
  const std::string ck_path = (root / "ck.bin").string();
  save_checkpoint(net, "golden = 1\n", ck_path);
  Network other(spec, 7);
  apply_checkpoint(other, load_checkpoint(ck_path));
  bool same = true;
  for (std::int64_t i = 0; i < net.total_param_count(); ++i) {
    same = same && net.get_param(i) == other.get_param(i);
  }
  c.expect(same, "checkpoint round trip must restore parameters bit-exactly");

  // dataset generation is seed-deterministic
  SyntheticSpec dspec;
  dspec.count = 50;
  const Dataset d1 = generate_dataset(dspec, 21);
  const Dataset d2 = generate_dataset(dspec, 21);
  bool ds_same = d1.samples.size() == d2.samples.size();
  for (size_t i = 0; ds_same && i < d1.samples.size(); ++i) {
    ds_same = d1.samples[i].label == d2.samples[i].label &&
              d1.samples[i].values == d2.samples[i].values;
  }
  c.expect(ds_same, "dataset generation must be seed-deterministic");
  save_dataset_csv(d1, (root / "d1.csv").string());
  save_dataset_csv(d2, (root / "d2.csv").string());
  c.expect(slurp(root / "d1.csv") == slurp(root / "d2.csv"),
           "dataset files must be byte-identical");
  fs::remove_all(root);
}
