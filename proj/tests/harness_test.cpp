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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <gtest/gtest.h>

#include "harness.hpp"
#include "privseg/serialize.hpp"

namespace privseg::harness {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "privseg_harness_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(const std::string& args) {
  const std::string cmd = fmt::format("'{}' -q {} > /dev/null 2>&1", PRIVSEG_CLI, args);
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

constexpr const char* kTiny = R"([run]
name = tiny
[model]
base_channels = 2
depth = 2
[data]
patients = 9
height = 16
width = 16
[train]
epochs = 2
batch_size = 2
)";

TEST(ConfigTest, DefaultsAndRoundTrip) {
  const ExperimentConfig c = parse_config("");
  EXPECT_EQ(c.mode, Mode::kLocal);
  EXPECT_EQ(c.dataset.patients, 120);
  EXPECT_EQ(c.dataset.height, 32);
  EXPECT_FALSE(c.train.regime.has_value());
  const ExperimentConfig again = parse_config(config_to_ini(c));
  EXPECT_EQ(config_to_ini(again), config_to_ini(c));
}

TEST(ConfigTest, PresetsResolveExactly) {
  for (auto [name, sigma, clip, local, fed] :
       {std::tuple{"low", 0.8, 1.0, 5.98, 11.5}, std::tuple{"medium", 1.0, 0.5, 3.58, 7.08},
        std::tuple{"high", 1.5, 0.1, 1.82, 3.54}}) {
    const ExperimentConfig c = parse_config(fmt::format("[privacy]\nregime = {}\n", name));
    ASSERT_TRUE(c.train.regime.has_value());
    EXPECT_EQ(c.train.regime->noise_multiplier, sigma);
    EXPECT_EQ(c.train.regime->clip_norm, clip);
    EXPECT_EQ(c.train.regime->delta, 1e-5);
    EXPECT_EQ(c.train.regime->budget_local, local);
    EXPECT_EQ(c.train.regime->budget_federated, fed);
  }
}

TEST(ConfigTest, CustomRegimeRoundTrips) {
  const ExperimentConfig c = parse_config(
      "[privacy]\nregime = custom\nnoise_multiplier = 2\nclip_norm = 0.5\nbudget = inf\n");
  EXPECT_EQ(c.train.regime->noise_multiplier, 2.0);
  EXPECT_TRUE(std::isinf(c.train.regime->budget_federated));
  const ExperimentConfig again = parse_config(config_to_ini(c));
  EXPECT_EQ(again.train.regime->clip_norm, 0.5);
  EXPECT_TRUE(std::isinf(again.train.regime->budget_local));
}

TEST(ConfigTest, RejectsBadInput) {
  EXPECT_THROW(parse_config("[modle]\nfamily = unet\n"), UsageError);
  EXPECT_THROW(parse_config("[model]\nfamliy = unet\n"), UsageError);
  EXPECT_THROW(parse_config("[model]\nbackbone = vit\n"), UsageError);
  EXPECT_THROW(parse_config("[model]\nbase_channels = many\n"), UsageError);
  EXPECT_THROW(parse_config("[model]\nfamily = single_conv\nkernel_size = 4\n"), UsageError);
  EXPECT_THROW(parse_config("[train]\nmode = centralized\n"), UsageError);
  EXPECT_THROW(parse_config("[privacy]\nregime = high\nclip_norm = 1\n"), UsageError);
  EXPECT_THROW(parse_config("[privacy]\nregime = extreme\n"), UsageError);
  EXPECT_THROW(parse_config("[federation]\nsync_every = 0\n"), UsageError);
  // Capture needs single-image federated updates.
  EXPECT_THROW(parse_config("[federation]\ncapture_round = 0\n"), UsageError);
  EXPECT_THROW(parse_config("[train]\nmode = federated\n[federation]\ncapture_round = 0\n"),
               UsageError);
}

TEST(ConfigTest, ShippedConfigsParseAndCoverTheGrid) {
  std::set<std::string> cells;
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(PRIVSEG_CONFIG_DIR)) {
    if (e.path().extension() != ".ini") continue;
    ++files;
    const ExperimentConfig c = load_config(e.path());
    EXPECT_EQ(c.name, e.path().stem().string().rfind("single_conv", 0) == 0 ||
                              e.path().stem().string().rfind("unet", 0) == 0
                          ? "capture_" + e.path().stem().string()
                          : e.path().stem().string());
    if (e.path().parent_path().filename() == "grid") {
      cells.insert(fmt::format("{}/{}/{}", to_string(c.mode), c.regime,
                               to_string(c.model.backbone)));
    }
  }
  EXPECT_EQ(cells.size(), 32u);
  EXPECT_EQ(files, 32 + 9);
}

TEST(GenerateTest, DefaultSplitAndDeterminism) {
  ExperimentConfig c;
  const fs::path a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
  const GenerateOutcome out = run_generate(c, a, /*preview=*/false);
  EXPECT_TRUE(out.invariant_failures.empty());
  EXPECT_EQ(out.split.train.size(), 76u);
  EXPECT_EQ(out.split.val.size(), 8u);
  EXPECT_EQ(out.split.test.size(), 36u);
  run_generate(c, b, /*preview=*/true);
  EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
  EXPECT_EQ(slurp(a / "images" / "p0042_s00.pten"), slurp(b / "images" / "p0042_s00.pten"));
  int images = 0;
  for (const auto& e : fs::directory_iterator(b / "preview")) {
    images += e.path().filename().string().ends_with("_image.pgm");
  }
  EXPECT_EQ(images, 120);
  EXPECT_FALSE(fs::exists(a / "preview"));
}

TEST(TrainTest, WritesReportFiles) {
  const ExperimentConfig c = parse_config(kTiny);
  const fs::path dir = fresh_dir("train");
  const TrainOutcome out = run_train(c, dir, 1, true);
  for (const char* f : {"config.ini", "seeds.csv", "report.csv", "epsilon.csv",
                        "dice_per_image.csv", "summary.csv", "timing.csv", "final.params"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  // Header plus one row per test image.
  std::ifstream dice(dir / "dice_per_image.csv");
  int lines = 0;
  for (std::string l; std::getline(dice, l);) ++lines;
  EXPECT_EQ(lines, 1 + static_cast<int>(out.test_dice.size()));
  EXPECT_EQ(out.period_seconds.size(), 2u);
  EXPECT_EQ(load_param_set(dir / "final.params").flatten(), out.params.flatten());
  EXPECT_NE(slurp(dir / "seeds.csv").find("partition,1"), std::string::npos);
}

TEST(TrainTest, FederatedRoundsDeriveFromEpochs) {
  ExperimentConfig c = parse_config(kTiny);
  c.mode = Mode::kFederated;
  c.train.batch_size = 1;
  const fs::path dir = fresh_dir("fed");
  run_train(c, dir, 1, true);
  // 9 patients: 6 train, 2 per worker; 2 epochs of batch 1 is 4 rounds.
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "round_0003.params"));
  EXPECT_FALSE(fs::exists(dir / "checkpoints" / "round_0004.params"));
  EXPECT_TRUE(fs::exists(dir / "rounds.csv"));
}

TEST(AttackTest, MissingInputsAreUsageErrors) {
  AttackArgs a;
  a.capture = "/nonexistent/capture.cap";
  a.mask = "/nonexistent/mask.pten";
  try {
    run_attack(a, fresh_dir("atk"), true);
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/capture.cap"), std::string::npos);
  }
}

TEST(AccountTest, CsvLine) {
  const std::string s = account_csv(1.0, 0.05, 500, 1e-5, true);
  EXPECT_EQ(s.substr(0, s.find('\n')), "sigma,q,steps,delta,epsilon,order");
  EXPECT_EQ(s.substr(s.find('\n') + 1, 17), "1,0.05,500,1e-05,");
  EXPECT_THROW(account_csv(0.0, 0.05, 1, 1e-5, false), UsageError);
  EXPECT_THROW(account_csv(1.0, 1.5, 1, 1e-5, false), UsageError);
}

TEST(BenchTest, EightRowsPopulationStd) {
  ExperimentConfig c = parse_config(kTiny);
  c.train.batch_size = 4;
  const fs::path dir = fresh_dir("bench");
  const auto rows = run_bench(c, 1, 3, 1, dir / "bench.csv", true);
  ASSERT_EQ(rows.size(), 8u);
  for (const BenchRow& r : rows) {
    ASSERT_EQ(r.seconds.size(), 3u);
    double m = (r.seconds[0] + r.seconds[1] + r.seconds[2]) / 3.0, ss = 0.0;
    for (double s : r.seconds) ss += (s - m) * (s - m);
    EXPECT_DOUBLE_EQ(r.mean, m);
    EXPECT_NEAR(r.stddev, std::sqrt(ss / 3.0), 1e-15);
  }
  std::ifstream in(dir / "bench.csv");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 9);
  EXPECT_THROW(run_bench(c, 1, 2, 1, dir / "x.csv", true), UsageError);
}

TEST(ReportTest, JoinsSummaries) {
  const fs::path a = fresh_dir("rep_a"), b = fresh_dir("rep_b");
  ExperimentConfig c = parse_config(kTiny);
  c.epochs = 1;
  run_train(c, a, 1, true);
  run_train(c, b, 1, true);
  run_report({a, b}, a.parent_path() / "report.csv");
  std::ifstream in(a.parent_path() / "report.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header.rfind("run_dir,name,mode", 0), 0u);
  EXPECT_EQ(row.rfind("rep_a,tiny,local", 0), 0u);
  EXPECT_THROW(run_report({fresh_dir("empty")}, a / "r.csv"), UsageError);
}

TEST(CliTest, ExitCodes) {
  EXPECT_EQ(cli("account --sigma 1 --q 0.01 --steps 10"), 0);
  EXPECT_EQ(cli("account --sigma 1"), 2);
  EXPECT_EQ(cli("account --sigma 0 --q 0.01 --steps 10"), 2);
  EXPECT_EQ(cli("frobnicate"), 2);
  EXPECT_EQ(cli("train -c /nonexistent.ini"), 2);
  EXPECT_EQ(cli("attack --capture /nonexistent.cap --mask /nonexistent.pten -o /tmp/x"), 2);
  EXPECT_EQ(cli("--help"), 0);
}

}  // namespace
}  // namespace privseg::harness
