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

#ifndef PRIVSEG_TOOLS_HARNESS_HPP_
#define PRIVSEG_TOOLS_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "privseg/data.hpp"
#include "privseg/fed.hpp"
#include "privseg/inversion.hpp"
#include "privseg/nn.hpp"

namespace privseg::harness {

// Bad flags, bad config values, missing input files. Maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { kLocal, kFederated };

// Everything a run needs. Sections of the INI file map onto the groups
// below; see configs/README.md for the schema.
struct ExperimentConfig {
  std::string name = "run";

  ModelSpec model;
  std::uint64_t model_seed = 1;

  std::filesystem::path data_path;  // empty: generate from `dataset`
  DatasetConfig dataset;
  std::uint64_t split_seed = 1;

  Mode mode = Mode::kLocal;
  int epochs = 20;
  TrainSettings train;
  std::string regime = "none";  // none, low, medium, high or custom

  int n_workers = 3;
  int sync_every = 1;
  int rounds = 0;  // 0: as many rounds as `epochs` passes over the largest shard
  bool weighted = true;
  std::uint64_t partition_seed = 1;
  bool round_checkpoints = true;
  int capture_round = -1;  // < 0: no capture
  int capture_worker = 0;
};

ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& ini_text);
// Writes every key, resolved, so the file alone reproduces the run.
std::string config_to_ini(const ExperimentConfig& config);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

std::string_view to_string(Mode mode);

// Default output root: $PRIVSEG_OUTPUT_ROOT, else ./runs.
std::filesystem::path output_root();

// ---------------------------------------------------------------------------

struct GenerateOutcome {
  SplitManifest split;
  std::vector<std::string> invariant_failures;  // empty when every sample is valid
};
GenerateOutcome run_generate(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                             bool preview);

struct TrainOutcome {
  ParamSet params;
  StopReason stop = StopReason::kCompleted;
  std::vector<double> test_dice;
  double test_dice_mean = 0.0;
  std::optional<double> epsilon;  // final released epsilon (max over sites)
  std::vector<double> epsilon_trajectory;  // site 0 (local: the only site)
  std::vector<double> period_seconds;      // per epoch (local) or round (federated)
};
TrainOutcome run_train(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                       int threads = 1, bool quiet = false);

struct AttackArgs {
  std::filesystem::path capture;
  std::filesystem::path mask;
  std::filesystem::path model;     // optional checkpoint; default: capture's global params
  std::filesystem::path config;    // optional; default: config.ini beside the capture
  std::filesystem::path original;  // optional; default: capture_image.pten beside the capture
  int iters = 2000;
  double lr = 10.0;
  std::string optimizer = "gd";
  std::uint64_t seed = 1;
  int patience = 50;
  double factor = 10.0;
  int baselines = 10;
  bool random_mask = false;
};
AttackArgs load_attack_args(const std::filesystem::path& path);
void save_attack_args(const std::filesystem::path& path, const AttackArgs& args);

struct AttackOutcome {
  AttackResult result;
  std::optional<ReconstructionQuality> quality;
  std::optional<double> baseline_psnr;
};
AttackOutcome run_attack(const AttackArgs& args, const std::filesystem::path& out_dir,
                         bool quiet = false);

struct BenchRow {
  BackboneStyle backbone = BackboneStyle::kPlain;
  Mode mode = Mode::kLocal;
  std::vector<double> seconds;  // measured epochs only
  double mean = 0.0;
  double stddev = 0.0;  // population
};
std::vector<BenchRow> run_bench(const ExperimentConfig& config, int warmup, int measured,
                                int threads, const std::filesystem::path& out_csv,
                                bool quiet = false);

// One line: sigma,q,steps,delta,epsilon,order.
std::string account_csv(double sigma, double q, long steps, double delta, bool header);

// Joins summary.csv of each run dir (plus mean epoch time) into one table.
void run_report(const std::vector<std::filesystem::path>& run_dirs,
                const std::filesystem::path& out_csv);

}  // namespace privseg::harness

#endif  // PRIVSEG_TOOLS_HARNESS_HPP_
