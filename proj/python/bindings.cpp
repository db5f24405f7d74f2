// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>

#include "invgrad/bench.hpp"
#include "invgrad/dataset.hpp"
#include "invgrad/strategies.hpp"
#include "invgrad/trainer.hpp"
#include "invgrad/version.hpp"

namespace py = pybind11;
using namespace invgrad;

namespace {

// Python-facing wrapper owning a network plus a ledger for sample tensors.
struct PyNetwork {
  NetworkSpec spec;
  std::unique_ptr<Network> net;
  MemoryLedger io_ledger;

  PyNetwork(std::int64_t height, std::int64_t width, std::int64_t channels,
            std::vector<int> layers_per_block, int subnet_depth,
            std::int64_t hidden_width, double hidden_scale,
            const std::string& activation, double leaky_alpha,
            bool downsample, int classes, const std::string& precision,
            double init_scale, std::uint64_t seed)
      : io_ledger(precision == "f32" ? Precision::f32 : Precision::f64) {
    spec.height = height;
    spec.width = width;
    spec.channels = channels;
    spec.layers_per_block = std::move(layers_per_block);
    spec.subnet_depth = subnet_depth;
    spec.hidden_width = hidden_width;
    spec.hidden_scale = hidden_scale;
    if (activation == "none") {
      spec.insert_activation = false;
    } else if (activation == "tanh") {
      spec.insert_activation = true;
      spec.activation = ActKind::Tanh;
    } else if (activation == "leaky_relu") {
      spec.insert_activation = true;
      spec.activation = ActKind::LeakyRelu;
    } else {
      throw ConfigError("activation must be none, tanh or leaky_relu");
    }
    spec.leaky_alpha = leaky_alpha;
    spec.downsample = downsample;
    spec.num_classes = classes;
    if (precision == "f64") {
      spec.precision = Precision::f64;
    } else if (precision == "f32") {
      spec.precision = Precision::f32;
    } else {
      throw ConfigError("precision must be f32 or f64");
    }
    spec.init_scale = init_scale;
    net = std::make_unique<Network>(spec, seed);
  }

  Tensor input_from_array(const py::array_t<double>& arr) {
    const auto buf = arr.request();
    const std::int64_t want = net->input_elems();
    std::int64_t got = 1;
    for (auto d : buf.shape) got *= d;
    if (got != want) {
      throw ShapeError("expected " + std::to_string(want) +
                       " input values, got " + std::to_string(got));
    }
    Tensor x = Tensor::alloc(io_ledger, net->input_shape(),
                             AllocTag::Activation);
    const py::array_t<double, py::array::c_style | py::array::forcecast>
        flat(arr);
    const double* src = flat.data();
    for (std::int64_t i = 0; i < want; ++i) x.set(i, src[i]);
    return x;
  }
};

py::array_t<double> vec_to_array(const std::vector<double>& v) {
  py::array_t<double> a(
      std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())},
      std::vector<py::ssize_t>{static_cast<py::ssize_t>(sizeof(double))});
  if (!v.empty()) {
    std::memcpy(a.mutable_data(), v.data(), v.size() * sizeof(double));
  }
  return a;
}

StrategyId strategy_id(const std::string& name) {
  const auto id = parse_strategy(name);
  if (!id) throw ConfigError("unknown strategy '" + name + "'");
  return *id;
}

py::dict report_to_dict(const GradReport& r) {
  py::dict d;
  d["strategy"] = std::string(to_string(r.strategy));
  d["loss"] = r.loss;
  d["predicted_label"] = r.predicted_label;
  py::list grads;
  for (const auto& g : r.layer_grads) grads.append(vec_to_array(g));
  d["layer_grads"] = grads;
  d["head_grad"] = vec_to_array(r.head_grad);
  d["input_grad"] = vec_to_array(r.input_grad);
  d["peak_tracked_bytes"] = r.peak_tracked_bytes;
  d["peak_gradient_buffers"] = r.peak_gradient_buffers;
  d["wall_time_sec"] = r.wall_time_sec;
  d["stochastic"] = r.stochastic;
  d["tangent_seed"] = r.tangent_seed;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gradient strategies for invertible networks with exact "
            "memory accounting";
  m.attr("__version__") = kVersion;
  m.attr("STRATEGIES") =
      py::make_tuple("Backprop", "Forward", "ProjForward", "RevBackprop",
                     "Moonwalk", "Mixed");

  py::register_exception<Error>(m, "InvgradError");

  py::class_<PyNetwork>(m, "Network")
      .def(py::init<std::int64_t, std::int64_t, std::int64_t,
                    std::vector<int>, int, std::int64_t, double,
                    const std::string&, double, bool, int,
                    const std::string&, double, std::uint64_t>(),
           py::arg("height") = 8, py::arg("width") = 8,
           py::arg("channels") = 4,
           py::arg("layers_per_block") = std::vector<int>{2, 2, 2},
           py::arg("subnet_depth") = 2, py::arg("hidden_width") = 8,
           py::arg("hidden_scale") = 0.0, py::arg("activation") = "none",
           py::arg("leaky_alpha") = 0.1, py::arg("downsample") = true,
           py::arg("classes") = 2, py::arg("precision") = "f64",
           py::arg("init_scale") = 1.0, py::arg("seed") = 0)
      .def_property_readonly(
          "input_shape",
          [](const PyNetwork& n) {
            return py::make_tuple(n.spec.height, n.spec.width,
                                  n.spec.channels);
          })
      .def_property_readonly("trunk_layers",
                             [](const PyNetwork& n) {
                               return n.net->trunk_size();
                             })
      .def_property_readonly("total_params",
                             [](const PyNetwork& n) {
                               return n.net->total_param_count();
                             })
      .def("get_param",
           [](const PyNetwork& n, std::int64_t i) {
             return n.net->get_param(i);
           })
      .def("set_param", [](PyNetwork& n, std::int64_t i, double v) {
        n.net->set_param(i, v);
      });

  m.def(
      "compute_gradients",
      [](PyNetwork& net, const py::array_t<double>& x, int label,
         const std::string& strategy, std::uint64_t seed,
         std::int64_t phase1_chunk) {
        Tensor x0 = net.input_from_array(x);
        StrategyOptions opts;
        opts.seed = seed;
        opts.phase1_chunk = phase1_chunk;
        const GradReport r =
            compute_gradients(*net.net, x0, label, strategy_id(strategy),
                              opts);
        x0.free();
        return report_to_dict(r);
      },
      py::arg("net"), py::arg("x"), py::arg("label"),
      py::arg("strategy") = "Backprop", py::arg("seed") = 0,
      py::arg("phase1_chunk") = 1,
      "Run one gradient strategy on a single sample and return the report");

  m.def(
      "fd_gradient",
      [](PyNetwork& net, const py::array_t<double>& x, int label, double eps,
         std::int64_t budget_params) {
        Tensor x0 = net.input_from_array(x);
        std::vector<double> g =
            fd_gradient(*net.net, x0, label, eps, budget_params);
        x0.free();
        return vec_to_array(g);
      },
      py::arg("net"), py::arg("x"), py::arg("label"), py::arg("eps") = 1e-5,
      py::arg("budget_params") = 1'000'000,
      "Central finite differences over every parameter (oracle)");

  m.def(
      "run_sweep",
      [](PyNetwork& net, const std::vector<int>& layers_grid,
         const std::vector<std::string>& strategies, int time_reps,
         std::uint64_t seed, std::int64_t forward_budget_mega_ops) {
        SweepConfig cfg;
        cfg.base = net.spec;
        cfg.layers_grid = layers_grid;
        cfg.channel_grid = {net.spec.channels};
        if (!strategies.empty()) {
          cfg.strategies.clear();
          for (const auto& s : strategies) {
            cfg.strategies.push_back(strategy_id(s));
          }
        }
        cfg.time_reps = time_reps;
        cfg.seed = seed;
        cfg.forward_budget_mega_ops = forward_budget_mega_ops;
        py::list out;
        for (const SweepRow& r : run_sweep(cfg)) {
          py::dict d;
          d["strategy"] = std::string(to_string(r.strategy));
          d["L_total"] = r.L_total;
          d["n"] = r.n;
          d["d"] = r.d;
          d["peak_bytes"] = r.peak_bytes;
          d["time_ms"] = r.has_time ? py::cast(r.time_ms) : py::none();
          d["max_rel_err"] =
              r.has_err ? py::cast(r.max_rel_err) : py::none();
          d["status"] = r.skipped ? "budget_skipped" : "ok";
          out.append(d);
        }
        return out;
      },
      py::arg("net"), py::arg("layers_grid"),
      py::arg("strategies") = std::vector<std::string>{},
      py::arg("time_reps") = 0, py::arg("seed") = 7,
      py::arg("forward_budget_mega_ops") = 0,
      "Depth sweep over strategies; peaks come from the allocation ledger");

  m.def(
      "generate_dataset",
      [](std::int64_t count, std::int64_t height, std::int64_t width,
         std::int64_t channels, int classes, double noise,
         std::uint64_t seed) {
        const SyntheticSpec spec{count, height, width, channels, classes,
                                 noise};
        const Dataset ds = generate_dataset(spec, seed);
        py::list samples;
        for (const Sample& s : ds.samples) {
          samples.append(py::make_tuple(s.label, vec_to_array(s.values)));
        }
        return samples;
      },
      py::arg("count") = 64, py::arg("height") = 8, py::arg("width") = 8,
      py::arg("channels") = 1, py::arg("classes") = 2,
      py::arg("noise") = 0.1, py::arg("seed") = 0,
      "Seed-deterministic synthetic ring-vs-cluster dataset");
}
