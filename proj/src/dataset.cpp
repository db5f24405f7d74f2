// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include "invgrad/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "invgrad/rng.hpp"

namespace invgrad {

Dataset generate_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.count < 1 || spec.height < 1 || spec.width < 1 ||
      spec.channels < 1 || spec.num_classes < 2) {
    throw ConfigError("invalid synthetic dataset spec");
  }
  Dataset ds;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.channels = spec.channels;
  ds.num_classes = spec.num_classes;
  ds.samples.reserve(static_cast<size_t>(spec.count));

  const double cy = (static_cast<double>(spec.height) - 1) / 2.0;
  const double cx = (static_cast<double>(spec.width) - 1) / 2.0;
  const double rmax = std::min(cy, cx);
  const double sigma = std::max(0.5, rmax / 4.0);

  for (std::int64_t s = 0; s < spec.count; ++s) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(s));
    Sample sm;
    sm.label = static_cast<int>(rng.below(
        static_cast<std::uint64_t>(spec.num_classes)));
    sm.values.resize(
        static_cast<size_t>(spec.height * spec.width * spec.channels));
    // per-sample center jitter
    const double jy = cy + 0.5 * (rng.uniform() - 0.5);
    const double jx = cx + 0.5 * (rng.uniform() - 0.5);
    const double radius =
        sm.label == 0 ? 0.0
                      : rmax * static_cast<double>(sm.label) /
                            static_cast<double>(spec.num_classes);
    for (std::int64_t h = 0; h < spec.height; ++h) {
      for (std::int64_t w = 0; w < spec.width; ++w) {
        const double dy = static_cast<double>(h) - jy;
        const double dx = static_cast<double>(w) - jx;
        const double dist = std::sqrt(dy * dy + dx * dx);
        const double signal =
            std::exp(-(dist - radius) * (dist - radius) / (2 * sigma * sigma));
        for (std::int64_t c = 0; c < spec.channels; ++c) {
          const double v = (c == 0 ? signal : 0.0) + spec.noise * rng.normal();
          sm.values[static_cast<size_t>((h * spec.width + w) * spec.channels +
                                        c)] = v;
        }
      }
    }
    ds.samples.push_back(std::move(sm));
  }
  return ds;
}

void save_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << ds.samples.size() << ',' << ds.height << ',' << ds.width << ','
      << ds.channels << ',' << ds.num_classes << '\n';
  char buf[40];
  for (const Sample& s : ds.samples) {
    out << s.label;
    for (double v : s.values) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty file");

  auto parse_fields = [](const std::string& l) {
    std::vector<std::string> f;
    std::string cur;
    std::istringstream ss(l);
    while (std::getline(ss, cur, ',')) f.push_back(cur);
    return f;
  };

  const auto header = parse_fields(line);
  if (header.size() != 5) {
    throw IoError(path + ": header must be count,height,width,channels,classes");
  }
  Dataset ds;
  std::int64_t count = 0;
  try {
    count = std::stoll(header[0]);
    ds.height = std::stoll(header[1]);
    ds.width = std::stoll(header[2]);
    ds.channels = std::stoll(header[3]);
    ds.num_classes = std::stoi(header[4]);
  } catch (const std::exception&) {
    throw IoError(path + ": malformed header");
  }
  if (count < 0 || ds.height < 1 || ds.width < 1 || ds.channels < 1 ||
      ds.num_classes < 2) {
    throw IoError(path + ": invalid header values");
  }
  const std::int64_t want =
      ds.height * ds.width * ds.channels;

  std::int64_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = parse_fields(line);
    if (static_cast<std::int64_t>(f.size()) != want + 1) {
      throw IoError(path + ": row " + std::to_string(row) + ": expected " +
                    std::to_string(want + 1) + " fields, got " +
                    std::to_string(f.size()));
    }
    Sample s;
    try {
      s.label = std::stoi(f[0]);
      s.values.reserve(static_cast<size_t>(want));
      for (std::int64_t i = 0; i < want; ++i) {
        s.values.push_back(std::stod(f[static_cast<size_t>(i + 1)]));
      }
    } catch (const std::exception&) {
      throw IoError(path + ": row " + std::to_string(row) +
                    ": malformed number");
    }
    if (s.label < 0 || s.label >= ds.num_classes) {
      throw IoError(path + ": row " + std::to_string(row) + ": label " +
                    std::to_string(s.label) + " outside [0, " +
                    std::to_string(ds.num_classes) + ")");
    }
    ds.samples.push_back(std::move(s));
  }
  if (static_cast<std::int64_t>(ds.samples.size()) != count) {
    throw IoError(path + ": header promises " + std::to_string(count) +
                  " samples, file has " + std::to_string(ds.samples.size()));
  }
  return ds;
}

Tensor sample_to_input(const Dataset& ds, const Sample& s,
                       std::int64_t target_channels, MemoryLedger& ledger,
                       AllocTag tag) {
  if (target_channels < ds.channels) {
    throw ShapeError("target channels below dataset channels");
  }
  Tensor t = Tensor::alloc(
      ledger, Shape::hwc(ds.height, ds.width, target_channels), tag);
  for (std::int64_t p = 0; p < ds.height * ds.width; ++p) {
    for (std::int64_t c = 0; c < ds.channels; ++c) {
      t.set(p * target_channels + c,
            s.values[static_cast<size_t>(p * ds.channels + c)]);
    }
  }
  return t;
}

}  // namespace invgrad
