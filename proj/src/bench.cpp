// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include "invgrad/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "invgrad/rng.hpp"

namespace invgrad {
namespace {

using Clock = std::chrono::steady_clock;

Tensor random_input(const Network& net, std::uint64_t seed,
                    MemoryLedger& lg) {
  Tensor x = Tensor::alloc(lg, net.input_shape(), AllocTag::Activation);
  Rng rng = Rng::stream(seed, 0x1A7u);
  for (std::int64_t i = 0; i < x.size(); ++i) x.set(i, 0.5 * rng.normal());
  return x;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median-of-reps timing with an inner repeat loop so sub-millisecond cells
// still produce stable medians. One warmup call happens before this.
double time_strategy_ms(const Network& net, const Tensor& x0, int label,
                        StrategyId id, const StrategyOptions& opts, int reps,
                        double warm_sec) {
  const int inner = static_cast<int>(std::clamp<double>(
      std::ceil(0.01 / std::max(warm_sec, 1e-7)), 1.0, 1000.0));
  std::vector<double> times;
  times.reserve(static_cast<size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    for (int i = 0; i < inner; ++i) {
      compute_gradients(net, x0, label, id, opts);
    }
    const double sec = std::chrono::duration<double>(Clock::now() - t0).count();
    times.push_back(sec / inner);
  }
  return median(times) * 1e3;
}

}  // namespace

std::vector<SweepRow> run_sweep(const SweepConfig& cfg) {
  if (cfg.layers_grid.empty()) {
    throw ConfigError("sweep grids must be non-empty");
  }
  if (cfg.strategies.empty()) {
    throw ConfigError("sweep needs at least one strategy");
  }
  const std::vector<std::int64_t> channel_grid =
      cfg.channel_grid.empty() ? std::vector<std::int64_t>{cfg.base.channels}
                               : cfg.channel_grid;
  std::vector<SweepRow> rows;
  for (std::int64_t channels : channel_grid) {
    for (int layers : cfg.layers_grid) {
      NetworkSpec spec = cfg.base;
      spec.channels = channels;
      for (auto& b : spec.layers_per_block) b = layers;
      const Network net(spec, cfg.seed);
      MemoryLedger input_ledger(spec.precision);
      Tensor x0 = random_input(net, cfg.seed, input_ledger);
      const int label = 0;

      GradReport oracle;
      bool have_oracle = false;
      if (cfg.measure_error) {
        oracle = backprop(net, x0, label);
        have_oracle = true;
      }

      for (StrategyId id : cfg.strategies) {
        SweepRow row;
        row.strategy = id;
        row.L_total = net.trunk_size();
        row.n = net.input_elems();
        row.d = net.max_layer_param_count();

        StrategyOptions opts;
        opts.seed = cfg.seed;
        opts.budget_mega_ops =
            id == StrategyId::Forward ? cfg.forward_budget_mega_ops : 0;

        GradReport rep;
        try {
          rep = compute_gradients(net, x0, label, id, opts);
        } catch (const BudgetError&) {
          row.skipped = true;
          rows.push_back(row);
          continue;
        }
        row.peak_bytes = rep.peak_tracked_bytes;
        if (have_oracle && strategy_is_exact(id)) {
          row.max_rel_err =
              id == StrategyId::Backprop
                  ? 0.0
                  : compare_reports(rep, oracle, true).max_rel;
          row.has_err = true;
        }
        if (cfg.time_reps > 0) {
          row.time_ms = time_strategy_ms(net, x0, label, id, opts,
                                         cfg.time_reps, rep.wall_time_sec);
          row.has_time = true;
        }
        rows.push_back(row);
      }
      x0.free();
    }
  }
  return rows;
}

FitResult fit_scaling(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error("fit_scaling: need matching x/y with at least 2 points");
  }
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0) throw Error("fit_scaling: degenerate x variance");
  FitResult f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.slope * x[i] + f.intercept);
    ss_res += e * e;
  }
  f.r2 = syy <= 0 ? 1.0 : 1.0 - ss_res / syy;
  return f;
}

FitResult fit_loglog(std::span<const double> x, std::span<const double> y) {
  std::vector<double> lx, ly;
  lx.reserve(x.size());
  ly.reserve(y.size());
  for (size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= 0 || y[i] <= 0) throw Error("fit_loglog: need positive data");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  return fit_scaling(lx, ly);
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "strategy,L_total,n,d,peak_bytes,time_ms,max_rel_err,status\n";
  char buf[64];
  for (const SweepRow& r : rows) {
    out << to_string(r.strategy) << ',' << r.L_total << ',' << r.n << ','
        << r.d << ',';
    if (!r.skipped) out << r.peak_bytes;
    out << ',';
    if (!r.skipped && r.has_time) {
      std::snprintf(buf, sizeof buf, "%.3f", r.time_ms);
      out << buf;
    }
    out << ',';
    if (!r.skipped && r.has_err) {
      std::snprintf(buf, sizeof buf, "%.6e", r.max_rel_err);
      out << buf;
    }
    out << ',' << (r.skipped ? "budget_skipped" : "ok") << '\n';
  }
  return out.str();
}

// ---- chart rendering ----

namespace {

const char* kSeriesColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c",
                               "#d62728", "#9467bd", "#8c564b"};

std::string fmt_tick(double v) {
  char buf[32];
  if (std::abs(v) >= 1e6 || (std::abs(v) < 1e-2 && v != 0)) {
    std::snprintf(buf, sizeof buf, "%.2e", v);
  } else {
    std::snprintf(buf, sizeof buf, "%g", v);
  }
  return buf;
}

}  // namespace

std::string render_line_chart(const std::string& title,
                              const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<ChartSeries>& series) {
  const int width = 720, height = 480;
  const int ml = 90, mr = 170, mt = 50, mb = 60;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const auto px = [&](double v) {
    return ml + (v - xmin) / (xmax - xmin) * (width - ml - mr);
  };
  const auto py = [&](double v) {
    return height - mb - (v - ymin) / (ymax - ymin) * (height - mt - mb);
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-size=\"16\">" << title << "</text>\n";
  // axes
  svg << "<line x1=\"" << ml << "\" y1=\"" << (height - mb) << "\" x2=\""
      << (width - mr) << "\" y2=\"" << (height - mb)
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << (height - mb) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 4.0;
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    svg << "<text x=\"" << px(xv) << "\" y=\"" << (height - mb + 18)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt_tick(xv)
        << "</text>\n";
    svg << "<text x=\"" << (ml - 6) << "\" y=\"" << (py(yv) + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << fmt_tick(yv)
        << "</text>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << py(yv) << "\" x2=\""
        << (width - mr) << "\" y2=\"" << py(yv)
        << "\" stroke=\"#dddddd\"/>\n";
  }
  svg << "<text x=\"" << (ml + (width - ml - mr) / 2) << "\" y=\""
      << (height - 16) << "\" text-anchor=\"middle\" font-size=\"13\">"
      << x_label << "</text>\n";
  svg << "<text x=\"20\" y=\"" << (mt + (height - mt - mb) / 2)
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 "
      << "20 " << (mt + (height - mt - mb) / 2) << ")\">" << y_label
      << "</text>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = kSeriesColors[s % 6];
    svg << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < series[s].x.size(); ++i) {
      svg << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    }
    svg << "\"/>\n";
    for (size_t i = 0; i < series[s].x.size(); ++i) {
      svg << "<circle cx=\"" << px(series[s].x[i]) << "\" cy=\""
          << py(series[s].y[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    svg << "<text x=\"" << (width - mr + 12) << "\" y=\""
        << (mt + 18 * static_cast<int>(s)) << "\" font-size=\"12\" fill=\""
        << color << "\">" << series[s].name << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_sweep_outputs(const std::vector<SweepRow>& rows,
                         const std::string& outdir) {
  std::filesystem::create_directories(outdir);
  {
    std::ofstream f(outdir + "/sweep.csv", std::ios::binary);
    if (!f) throw IoError("cannot write " + outdir + "/sweep.csv");
    f << sweep_to_csv(rows);
  }
  const struct {
    const char* metric;
    bool timing;
  } charts[] = {{"peak_bytes", false}, {"time_ms", true}};
  for (const auto& chart : charts) {
    std::vector<ChartSeries> series;
    for (StrategyId id : kAllStrategies) {
      ChartSeries s;
      s.name = std::string(to_string(id));
      for (const SweepRow& r : rows) {
        if (r.strategy != id || r.skipped) continue;
        if (chart.timing && !r.has_time) continue;
        s.x.push_back(static_cast<double>(r.L_total));
        s.y.push_back(chart.timing ? r.time_ms
                                   : static_cast<double>(r.peak_bytes));
      }
      if (!s.x.empty()) series.push_back(std::move(s));
    }
    if (series.empty()) continue;
    std::ofstream f(outdir + "/" + chart.metric + ".svg", std::ios::binary);
    if (!f) throw IoError("cannot write chart");
    f << render_line_chart(
        std::string(chart.metric) + " vs trunk depth", "L_total",
        chart.metric, series);
  }
}

}  // namespace invgrad
