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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "privseg/fed.hpp"

namespace privseg {
namespace {

std::vector<int> ids(int n) {
  std::vector<int> v(static_cast<size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<PhantomSample> small_data(int patients, std::uint64_t seed = 1) {
  DatasetConfig c;
  c.patients = patients;
  c.height = c.width = 16;
  c.seed = seed;
  return generate_dataset(c);
}

Model tiny_unet(BackboneStyle style = BackboneStyle::kPlain) {
  ModelSpec spec;
  spec.backbone = style;
  spec.base_channels = 2;
  spec.depth = 2;
  return build_model(spec, 3);
}

UpdateMessage message(int worker, double value, Index n, const ParamSet& layout) {
  UpdateMessage m;
  m.worker_id = worker;
  m.n_samples = n;
  m.payload = layout.unflatten(Eigen::VectorXd::Constant(layout.numel(), value));
  return m;
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  return (a.flatten() - b.flatten()).cwiseAbs().maxCoeff();
}

TEST(PartitionTest, Sizes) {
  auto p = partition_by_patient(ids(9), 3, 1);
  for (const auto& s : p) EXPECT_EQ(s.size(), 3u);
  p = partition_by_patient(ids(10), 3, 1);
  std::vector<size_t> sizes;
  for (const auto& s : p) sizes.push_back(s.size());
  std::sort(sizes.begin(), sizes.end());
  EXPECT_EQ(sizes, (std::vector<size_t>{3, 3, 4}));
}

TEST(PartitionTest, DisjointCoveringDeterministic) {
  const auto a = partition_by_patient(ids(50), 3, 7);
  std::set<int> seen;
  for (const auto& s : a) {
    for (int id : s) EXPECT_TRUE(seen.insert(id).second);
  }
  EXPECT_EQ(seen.size(), 50u);
  EXPECT_EQ(a, partition_by_patient(ids(50), 3, 7));
  EXPECT_NE(a, partition_by_patient(ids(50), 3, 8));
  EXPECT_THROW(partition_by_patient(ids(2), 3, 1), std::invalid_argument);
}

TEST(AggregateTest, Examples) {
  const ParamSet layout = tiny_unet().initial_params();
  // Identical payloads -> that payload.
  ParamSet same = aggregate({message(0, 1.5, 3, layout), message(1, 1.5, 9, layout)}, true);
  EXPECT_EQ(same.flatten(), Eigen::VectorXd::Constant(layout.numel(), 1.5));
  // 0.25 * 2 + 0.75 * 4.
  ParamSet w = aggregate({message(0, 2.0, 1, layout), message(1, 4.0, 3, layout)}, true);
  EXPECT_NEAR((w.flatten().array() - 3.5).abs().maxCoeff(), 0.0, 1e-15);
  ParamSet u = aggregate({message(0, 2.0, 1, layout), message(1, 4.0, 3, layout)}, false);
  EXPECT_NEAR((u.flatten().array() - 3.0).abs().maxCoeff(), 0.0, 1e-15);
  // Equal counts: weighted == unweighted.
  std::vector<UpdateMessage> eq = {message(0, 0.1, 5, layout), message(1, 0.7, 5, layout),
                                   message(2, -0.3, 5, layout)};
  EXPECT_EQ(aggregate(eq, true).flatten(), aggregate(eq, false).flatten());
}

TEST(AggregateTest, OrderIndependentAndValidated) {
  const ParamSet layout = tiny_unet().initial_params();
  std::vector<UpdateMessage> a = {message(0, 0.1, 2, layout), message(1, 0.2, 3, layout),
                                  message(2, 0.3, 4, layout)};
  std::vector<UpdateMessage> b = {a[2], a[0], a[1]};
  EXPECT_EQ(aggregate(a, true).flatten(), aggregate(b, true).flatten());
  EXPECT_THROW(aggregate({}, true), std::invalid_argument);
  UpdateMessage other = message(3, 1.0, 1, tiny_unet(BackboneStyle::kDilated).initial_params());
  a.push_back(other);
  EXPECT_THROW(aggregate(a, true), ShapeError);
}

FederationConfig plain_config(int workers, int rounds, double lr) {
  FederationConfig c;
  c.n_workers = workers;
  c.rounds = rounds;
  c.train.optimizer.lr = lr;
  c.train.batch_size = 0;
  c.record_updates = true;
  return c;
}

TEST(FederationTest, SyncEveryZeroRejected) {
  FederationConfig c = plain_config(3, 1, 0.1);
  c.sync_every = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(FederationTest, ZeroLearningRateGivesZeroDelta) {
  const auto data = small_data(6);
  const auto shards = shard_samples(data, partition_by_patient(ids(6), 3, 1));
  const Model m = tiny_unet();
  const FederationResult r = run_federation(m, shards, {}, plain_config(3, 2, 0.0));
  for (const auto& u : r.recorded) EXPECT_EQ(u.payload.flatten().norm(), 0.0);
  EXPECT_EQ(r.params.flatten(), m.initial_params().flatten());
}

TEST(FederationTest, SingleStepDeltaIsMinusLrTimesBatchGradient) {
  const auto data = small_data(6);
  const auto shards = shard_samples(data, partition_by_patient(ids(6), 3, 1));
  const Model m = tiny_unet();
  const double lr = 0.3;
  const FederationResult r = run_federation(m, shards, {}, plain_config(3, 1, lr));
  ASSERT_EQ(r.recorded.size(), 3u);
  for (const UpdateMessage& u : r.recorded) {
    const Batch b = make_batch(shards[static_cast<size_t>(u.worker_id)]);
    const Eigen::VectorXd g = batch_gradient(m, m.initial_params(), b.images, b.masks).grad;
    EXPECT_LT((u.payload.flatten() + lr * g).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(u.n_samples, static_cast<Index>(shards[static_cast<size_t>(u.worker_id)].size()));
  }
}

TEST(FederationTest, OneWorkerMatchesLocalTraining) {
  const auto data = small_data(8);
  const Model m = tiny_unet();
  TrainSettings s;
  s.optimizer.lr = 0.2;
  s.batch_size = 3;
  s.seed = 5;
  const LocalResult local = train_local(m, data, {}, s, 2);  // 2 epochs x 3 steps
  FederationConfig c;
  c.n_workers = 1;
  c.rounds = 6;
  c.train = s;
  const FederationResult fed = run_federation(m, {data}, {}, c);
  // Local training steps the parameters directly; the federation applies
  // (replica - global) to global, which can differ in the last bit.
  EXPECT_LT(max_abs_diff(local.params, fed.params), 1e-12);
}

TEST(FederationTest, FedAvgEqualsPooledSgdForEveryBackbone) {
  const auto data = small_data(7);
  const auto shards = shard_samples(data, partition_by_patient(ids(7), 3, 2));
  const Batch pooled = make_batch(data);
  const double lr = 0.5;
  for (BackboneStyle style : kAllBackbones) {
    const Model m = tiny_unet(style);
    FederationConfig c = plain_config(3, 20, lr);
    c.record_updates = true;
    const FederationResult fed = run_federation(m, shards, {}, c);
    ASSERT_EQ(fed.global_history.size(), 21u);
    Eigen::VectorXd p = m.initial_params().flatten();
    for (int t = 0; t < 20; ++t) {
      const ParamSet ps = m.initial_params().unflatten(p);
      p -= lr * batch_gradient(m, ps, pooled.images, pooled.masks).grad;
      EXPECT_LT((fed.global_history[static_cast<size_t>(t + 1)].flatten() - p).cwiseAbs().maxCoeff(),
                1e-9)
          << to_string(style) << " step " << t;
    }
  }
}

PrivacyRegime test_regime(double budget) {
  PrivacyRegime r;
  r.name = "test";
  r.noise_multiplier = 1.0;
  r.clip_norm = 1.0;
  r.delta = 1e-5;
  r.budget_local = budget;
  r.budget_federated = budget;
  return r;
}

TEST(FederationTest, EqualShardsGiveIdenticalEpsilonPerSite) {
  const auto data = small_data(9);
  const auto shards = shard_samples(data, partition_by_patient(ids(9), 3, 1));
  const Model m = tiny_unet();
  FederationConfig c = plain_config(3, 4, 0.1);
  c.train.batch_size = 1;
  c.train.regime = test_regime(kInfinity);
  const FederationResult r = run_federation(m, shards, {}, c);
  ASSERT_EQ(r.epsilon_by_site.size(), 3u);
  ASSERT_EQ(r.epsilon_by_site[0].size(), 4u);
  EXPECT_EQ(r.epsilon_by_site[0], r.epsilon_by_site[1]);
  EXPECT_EQ(r.epsilon_by_site[0], r.epsilon_by_site[2]);
  // No hidden accounting: matches a fresh accountant at q = 1/3.
  const Accountant oracle(1.0 / 3.0, 1.0);
  for (int t = 0; t < 4; ++t) {
    EXPECT_EQ(r.epsilon_by_site[0][static_cast<size_t>(t)],
              oracle.epsilon_after(t + 1, 1e-5).epsilon);
  }
}

TEST(FederationTest, BudgetAbortKeepsLastAggregatedModel) {
  const auto data = small_data(9);
  const auto shards = shard_samples(data, partition_by_patient(ids(9), 3, 1));
  const Model m = tiny_unet();
  FederationConfig c = plain_config(3, 50, 0.1);
  c.train.batch_size = 1;
  c.train.regime = test_regime(12.0);
  const FederationResult r = run_federation(m, shards, {}, c);
  EXPECT_EQ(r.stop, StopReason::kBudgetExhausted);
  ASSERT_GT(r.rounds_completed, 0);
  ASSERT_LT(r.rounds_completed, 50);
  const long expected = first_step_over_budget(Accountant(1.0 / 3.0, 1.0), 1e-5, 12.0, 1000);
  EXPECT_EQ(r.rounds_completed, expected - 1);
  for (const auto& eps : r.epsilon_by_site) {
    for (double e : eps) EXPECT_LE(e, 12.0);
  }
  FederationConfig shorter = c;
  shorter.rounds = r.rounds_completed;
  const FederationResult s = run_federation(m, shards, {}, shorter);
  EXPECT_EQ(s.stop, StopReason::kCompleted);
  EXPECT_EQ(s.params.flatten(), r.params.flatten());
}

TEST(FederationTest, ThreadCountDoesNotChangeResults) {
  const auto data = small_data(9);
  const auto shards = shard_samples(data, partition_by_patient(ids(9), 3, 1));
  const Model m = tiny_unet(BackboneStyle::kResidual);
  FederationConfig c = plain_config(3, 3, 0.1);
  c.train.batch_size = 2;
  c.train.regime = test_regime(kInfinity);
  c.train.augment = true;
  const FederationResult a = run_federation(m, shards, shards[0], c);
  c.threads = 3;
  const FederationResult b = run_federation(m, shards, shards[0], c);
  EXPECT_EQ(a.params.flatten(), b.params.flatten());
  ASSERT_EQ(a.rounds.size(), b.rounds.size());
  for (size_t i = 0; i < a.rounds.size(); ++i) {
    EXPECT_EQ(a.rounds[i].loss, b.rounds[i].loss);
    EXPECT_EQ(a.rounds[i].dice_val, b.rounds[i].dice_val);
  }
}

TEST(CaptureTest, MatchesWireMessageAndRecomputedGradient) {
  const auto data = small_data(6);
  const auto shards = shard_samples(data, partition_by_patient(ids(6), 3, 1));
  const Model m = tiny_unet();
  FederationConfig c = plain_config(3, 3, 0.2);
  c.train.batch_size = 1;
  const FederationResult r = run_federation(m, shards, {}, c);
  const GradientUpdate g = capture_update(r, 2, 1);
  const UpdateMessage& wire = r.recorded[2 * 3 + 1];
  EXPECT_EQ(g.message.payload.flatten(), wire.payload.flatten());
  EXPECT_EQ(g.global_params.flatten(), r.global_history[2].flatten());

  Worker replay(1, shards[1], c.train, true);
  const Batch b = replay.batch_for(2);
  const Eigen::VectorXd direct = batch_gradient(m, g.global_params, b.images, b.masks).grad;
  EXPECT_LT((g.gradient.flatten() - direct).norm(), 1e-10 * direct.norm());

  EXPECT_THROW(capture_update(r, 3, 0), std::out_of_range);
  FederationConfig off = c;
  off.record_updates = false;
  EXPECT_THROW(capture_update(run_federation(m, shards, {}, off), 0, 0), std::out_of_range);
}

TEST(CaptureTest, DpNoiseVarianceMatchesMechanism) {
  // Full-batch DP: the clipped sum is fixed, so across noise seeds each
  // gradient coordinate has variance (sigma * C / B)^2.
  const auto data = small_data(6);
  const auto shards = shard_samples(data, partition_by_patient(ids(6), 3, 1));
  const Model m = tiny_unet();
  const double sigma = 1.0, clip = 0.5;
  std::vector<Eigen::VectorXd> grads;
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    FederationConfig c = plain_config(3, 1, 0.1);
    c.train.seed = seed;
    c.train.regime = test_regime(kInfinity);
    c.train.regime->noise_multiplier = sigma;
    c.train.regime->clip_norm = clip;
    grads.push_back(capture_update(run_federation(m, shards, {}, c), 0, 0).gradient.flatten());
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(grads[0].size());
  for (const auto& g : grads) mean += g;
  mean /= static_cast<double>(grads.size());
  double ss = 0.0;
  for (const auto& g : grads) ss += (g - mean).squaredNorm();
  const double var = ss / static_cast<double>((grads.size() - 1) * mean.size());
  const double b = static_cast<double>(shards[0].size());
  EXPECT_NEAR(var / (sigma * sigma * clip * clip / (b * b)), 1.0, 0.05);
}

TEST(CaptureTest, FileRoundTrip) {
  const auto data = small_data(6);
  const auto shards = shard_samples(data, partition_by_patient(ids(6), 3, 1));
  const Model m = tiny_unet();
  const FederationResult r = run_federation(m, shards, {}, plain_config(3, 1, 0.2));
  const GradientUpdate g = capture_update(r, 0, 2);
  const auto path = std::filesystem::temp_directory_path() / "privseg_capture_test.cap";
  save_capture(path, g);
  const GradientUpdate back = load_capture(path);
  EXPECT_EQ(back.message.worker_id, 2);
  EXPECT_EQ(back.message.round, 0);
  EXPECT_EQ(back.message.n_samples, g.message.n_samples);
  EXPECT_EQ(back.gradient.flatten(), g.gradient.flatten());
  EXPECT_EQ(back.global_params.flatten(), g.global_params.flatten());
  EXPECT_EQ(back.message.payload.flatten(), g.message.payload.flatten());
  std::filesystem::remove(path);
}

TEST(TrainLocalTest, StepsPerEpochAndBudgetStop) {
  const auto data = small_data(10);
  const Model m = tiny_unet();
  TrainSettings s;
  s.batch_size = 4;
  s.optimizer.lr = 0.1;
  const LocalResult plain = train_local(m, data, data, s, 2);
  ASSERT_EQ(plain.epochs.size(), 2u);
  EXPECT_EQ(plain.epochs[0].steps, 3);
  EXPECT_EQ(plain.epochs[1].steps, 6);
  EXPECT_EQ(plain.stop, StopReason::kCompleted);

  s.regime = test_regime(12.0);
  const LocalResult dp = train_local(m, data, data, s, 100);
  EXPECT_EQ(dp.stop, StopReason::kBudgetExhausted);
  ASSERT_TRUE(dp.abort_epsilon.has_value());
  EXPECT_GT(*dp.abort_epsilon, 12.0);
  EXPECT_TRUE(std::is_sorted(dp.epsilon_by_step.begin(), dp.epsilon_by_step.end()));
  ASSERT_FALSE(dp.epsilon_by_step.empty());
  EXPECT_LE(dp.epsilon_by_step.back(), 12.0);
  const long over = first_step_over_budget(Accountant(0.4, 1.0), 1e-5, 12.0, 100000);
  EXPECT_EQ(static_cast<long>(dp.epsilon_by_step.size()), over - 1);
}

TEST(RoundMetricsTest, CsvHeaderAndEmptyEpsilon) {
  const auto path = std::filesystem::temp_directory_path() / "privseg_rounds.csv";
  write_round_metrics(path, {RoundMetrics{0, 1, 0.5, 0.25, std::nullopt, false}});
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "round,worker_id,loss,dice_val,epsilon,aborted");
  EXPECT_EQ(row, "0,1,0.5,0.25,,0");
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace privseg
