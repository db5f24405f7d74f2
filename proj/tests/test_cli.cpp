// Copyright 2026 The invgrad Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "invgrad/trainer.hpp"

using namespace invgrad;
using namespace invgrad::cli;

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path fresh_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

NetOptions tiny_net() {
  NetOptions n;
  n.channels = 2;
  n.layers = {1, 1, 1};
  n.hidden_width = 4;
  return n;
}

}  // namespace

TEST_CASE("gradcheck passes clean and fails with the vijp fault injected") {
  const fs::path dir = fresh_dir("invgrad_cli_gc");
  GradcheckOptions opt;
  opt.common.seed = 3;
  opt.common.out_dir = (dir / "ok").string();
  opt.net = tiny_net();
  CHECK(cmd_gradcheck(opt) == kExitOk);
  CHECK(fs::exists(dir / "ok" / "manifest.ini"));
  CHECK(fs::exists(dir / "ok" / "gradcheck.csv"));

  opt.common.out_dir = (dir / "bad").string();
  opt.inject_vijp_fault = true;
  CHECK(cmd_gradcheck(opt) == kExitToleranceFailure);
  const std::string csv = slurp(dir / "bad" / "gradcheck.csv");
  CHECK(csv.find("Moonwalk") != std::string::npos);
  CHECK(csv.find("fail") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("train with zero epochs checkpoints the initialization") {
  const fs::path dir = fresh_dir("invgrad_cli_tr0");
  TrainOptions opt;
  opt.common.seed = 9;
  opt.common.out_dir = dir.string();
  opt.common.config_echo = "epochs = 0\n";
  opt.net = tiny_net();
  opt.epochs = 0;
  opt.data.samples = 8;
  CHECK(cmd_train(opt) == kExitOk);

  const Checkpoint ck = load_checkpoint((dir / "checkpoint.bin").string());
  CHECK(ck.config_echo == "epochs = 0\n");
  Network fresh(opt.net.to_spec("f64"), 9);
  Network restored(opt.net.to_spec("f64"), 1234);
  apply_checkpoint(restored, ck);
  for (std::int64_t i = 0; i < fresh.total_param_count(); ++i) {
    CHECK(restored.get_param(i) == fresh.get_param(i));
  }
  fs::remove_all(dir);
}

TEST_CASE("dataset gen is byte-deterministic") {
  const fs::path dir = fresh_dir("invgrad_cli_ds");
  DatasetGenOptions opt;
  opt.out_file = (dir / "a.csv").string();
  opt.samples = 30;
  opt.seed = 7;
  CHECK(cmd_dataset_gen(opt) == kExitOk);
  opt.out_file = (dir / "b.csv").string();
  CHECK(cmd_dataset_gen(opt) == kExitOk);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  opt.out_file = (dir / "c.csv").string();
  opt.seed = 8;
  CHECK(cmd_dataset_gen(opt) == kExitOk);
  CHECK(slurp(dir / "a.csv") != slurp(dir / "c.csv"));
  fs::remove_all(dir);
}

TEST_CASE("bench twin runs match each other and the committed golden csv") {
  BenchOptions opt;
  opt.net = tiny_net();
  opt.net.hidden_scale = 8.0;
  opt.net.hidden_width = 0;
  opt.net.activation = "leaky_relu";
  opt.common.seed = 7;
  opt.layers_grid = {1, 2};
  opt.strategies = {"Backprop", "Moonwalk", "ProjForward"};

  const fs::path a = fresh_dir("invgrad_cli_bench_a");
  const fs::path b = fresh_dir("invgrad_cli_bench_b");
  opt.common.out_dir = a.string();
  CHECK(cmd_bench(opt) == kExitOk);
  opt.common.out_dir = b.string();
  CHECK(cmd_bench(opt) == kExitOk);
  CHECK(slurp(a / "sweep.csv") == slurp(b / "sweep.csv"));
  CHECK(fs::exists(a / "peak_bytes.svg"));

#ifdef INVGRAD_GOLDEN_DIR
  const fs::path golden =
      fs::path(INVGRAD_GOLDEN_DIR) / "sweep_golden.csv";
  CHECK(slurp(a / "sweep.csv") == slurp(golden));
#endif
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("compare writes an error curve per arm") {
  const fs::path dir = fresh_dir("invgrad_cli_cmp");
  CompareOptions opt;
  opt.common.seed = 3;
  opt.common.out_dir = dir.string();
  opt.net = tiny_net();
  opt.data.samples = 16;
  opt.steps = 5;
  opt.strategies = {"Moonwalk"};
  CHECK(cmd_compare(opt) == kExitOk);
  const std::string csv = slurp(dir / "gradient_errors.csv");
  CHECK(csv.rfind("step,Moonwalk\n", 0) == 0);
  int lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 6);
  fs::remove_all(dir);
}

TEST_CASE("config validation precedes compute") {
  GradcheckOptions opt;
  opt.net = tiny_net();
  opt.net.channels = 3;  // cannot split oddly
  CHECK_THROWS_AS(opt.net.to_spec("f64"), ConfigError);
  opt.net.channels = 2;
  CHECK_THROWS_AS(opt.net.to_spec("f16"), ConfigError);
  opt.net.height = 6;  // not divisible by 2 three times
  CHECK_THROWS_AS(opt.net.to_spec("f64"), ConfigError);
}
