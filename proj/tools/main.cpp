// Copyright 2026 The privseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// privseg: generate / train / account / attack / bench / report.
// Exit codes: 0 ok, 1 runtime failure, 2 usage or input error.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "harness.hpp"
#include "privseg/serialize.hpp"

namespace fs = std::filesystem;
using namespace privseg;
using namespace privseg::harness;

namespace {

fs::path resolve_out(const std::string& flag, const ExperimentConfig& c) {
  return flag.empty() ? output_root() / c.name : fs::path(flag);
}

int run(int argc, char** argv) {
  CLI::App app{"Differentially private federated segmentation and gradient inversion"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic phantom dataset and its split");
  std::string gen_config, gen_out;
  bool preview = false;
  gen->add_option("-c,--config", gen_config, "Experiment INI ([data] section is used)");
  gen->add_option("-o,--out-dir", gen_out, "Dataset directory");
  gen->add_flag("--preview", preview, "Also write PGM previews");

  // train
  auto* train = app.add_subcommand("train", "Train locally or in a federation");
  std::string train_config, train_out;
  int threads = 1;
  train->add_option("-c,--config", train_config, "Experiment INI")->required();
  train->add_option("-o,--out-dir", train_out, "Run directory (default: <root>/<name>)");
  train->add_option("-t,--threads", threads, "Worker threads (federated)")->check(CLI::Range(1, 256));

  // account
  auto* account = app.add_subcommand("account", "Epsilon of the subsampled Gaussian mechanism");
  double sigma = 1.0, q = 0.01, delta = 1e-5;
  long steps = 1000;
  bool no_header = false;
  account->add_option("--sigma", sigma, "Noise multiplier")->required();
  account->add_option("--q", q, "Sampling rate")->required();
  account->add_option("--steps", steps, "Number of steps")->required();
  account->add_option("--delta", delta, "Target delta");
  account->add_flag("--no-header", no_header, "Omit the CSV header");

  // attack
  auto* attack = app.add_subcommand("attack", "Reconstruct an image from a captured update");
  AttackArgs aa;
  std::string capture, mask, model, config, original, rerun, attack_out;
  attack->add_option("--capture", capture, "Capture file (capture.cap)");
  attack->add_option("--mask", mask, "Label mask (.pten)");
  attack->add_option("--model", model, "Parameter checkpoint (default: the capture's)");
  attack->add_option("--config", config, "Model config (default: config.ini beside the capture)");
  attack->add_option("--original", original, "Ground-truth image for PSNR");
  attack->add_option("--iters", aa.iters, "Iterations");
  attack->add_option("--lr", aa.lr, "Step size");
  attack->add_option("--optimizer", aa.optimizer, "gd or adam");
  attack->add_option("--seed", aa.seed, "Initialization seed");
  attack->add_option("--patience", aa.patience, "Divergence patience");
  attack->add_option("--factor", aa.factor, "Divergence factor");
  attack->add_option("--baselines", aa.baselines, "Random-noise baseline draws");
  attack->add_flag("--random-mask", aa.random_mask, "Replace the mask with a random one");
  attack->add_option("--rerun", rerun, "Repeat an attack from its attack.ini");
  attack->add_option("-o,--out-dir", attack_out, "Output directory")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "Seconds per epoch for each backbone");
  std::string bench_config, bench_out = "bench.csv";
  int warmup = 1, measured = 3, bench_threads = 1;
  bench->add_option("-c,--config", bench_config, "Experiment INI (data, train, federation)");
  bench->add_option("--warmup", warmup, "Warm-up epochs");
  bench->add_option("--epochs", measured, "Measured epochs (>= 3)");
  bench->add_option("-t,--threads", bench_threads, "Worker threads")->check(CLI::Range(1, 256));
  bench->add_option("-o,--out", bench_out, "Output CSV");

  // report
  auto* report = app.add_subcommand("report", "Join the summaries of several runs");
  std::vector<std::string> run_dirs;
  std::string report_out = "report.csv";
  report->add_option("runs", run_dirs, "Run directories")->required();
  report->add_option("-o,--out", report_out, "Output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*gen) {
    const ExperimentConfig c = gen_config.empty() ? ExperimentConfig{} : load_config(gen_config);
    const fs::path out = gen_out.empty() ? output_root() / "data" : fs::path(gen_out);
    const GenerateOutcome g = run_generate(c, out, preview);
    if (!quiet) {
      fmt::print(stderr, "wrote {} ({} train / {} val / {} test patients)\n", out.string(),
                 g.split.train.size(), g.split.val.size(), g.split.test.size());
    }
    for (const auto& f : g.invariant_failures) fmt::print(stderr, "invalid sample: {}\n", f);
    return g.invariant_failures.empty() ? 0 : 1;
  }
  if (*train) {
    const ExperimentConfig c = load_config(train_config);
    run_train(c, resolve_out(train_out, c), threads, quiet);
    return 0;
  }
  if (*account) {
    std::cout << account_csv(sigma, q, steps, delta, !no_header);
    return 0;
  }
  if (*attack) {
    if (!rerun.empty()) {
      aa = load_attack_args(rerun);
    } else {
      if (capture.empty() || mask.empty()) throw UsageError("attack needs --capture and --mask");
      aa.capture = capture;
      aa.mask = mask;
      aa.model = model;
      aa.config = config;
      aa.original = original;
    }
    run_attack(aa, attack_out, quiet);
    return 0;
  }
  if (*bench) {
    const ExperimentConfig c = bench_config.empty() ? ExperimentConfig{} : load_config(bench_config);
    run_bench(c, warmup, measured, bench_threads, bench_out, quiet);
    return 0;
  }
  if (*report) {
    std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
    run_report(dirs, report_out);
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "failed: {}\n", e.what());
    return 1;
  }
}
