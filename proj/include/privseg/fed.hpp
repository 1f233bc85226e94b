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

#ifndef PRIVSEG_FED_HPP_
#define PRIVSEG_FED_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "privseg/data.hpp"
#include "privseg/dp.hpp"
#include "privseg/nn.hpp"
#include "privseg/optim.hpp"

namespace privseg {

// Settings shared by local training and every federated worker.
struct TrainSettings {
  OptimizerConfig optimizer;
  // Samples per step, drawn uniformly without replacement from the shard;
  // 0 means the whole shard. Under DP the sampling rate is batch/shard.
  int batch_size = 8;
  std::optional<PrivacyRegime> regime;
  bool augment = false;
  AugmentConfig augmentation;
  std::uint64_t seed = 1;

  void validate() const;
};

// Mean per-image Dice of the thresholded predictions.
double evaluate_dice(const Model& model, const ParamSet& params,
                     const std::vector<PhantomSample>& samples);
std::vector<double> dice_per_image(const Model& model, const ParamSet& params,
                                   const std::vector<PhantomSample>& samples);

// One training participant: a shard, a persistent optimizer and, under DP,
// an accountant. Step t of worker w draws its batch and its noise from
// streams derived from (seed, w, t) only.
class Worker {
 public:
  Worker(int id, std::vector<PhantomSample> shard, const TrainSettings& settings,
         bool federated);

  int id() const { return id_; }
  const std::vector<PhantomSample>& shard() const { return shard_; }
  long steps_taken() const { return steps_; }
  int effective_batch() const;
  double sampling_rate() const;
  const std::optional<Accountant>& accountant() const { return accountant_; }
  // Current epsilon, or nullopt without DP.
  std::optional<double> epsilon() const;

  struct Result {
    ParamSet params;     // replica after the released steps
    double loss = 0.0;   // mean batch loss over the released steps
    int steps_done = 0;
    bool aborted = false;
    double abort_epsilon = 0.0;
  };
  // Runs `steps` optimizer steps from `start`. A budget abort stops early;
  // the over-budget step is accounted but not released.
  Result train(const Model& model, const ParamSet& start, int steps);

  // Batch indices and (possibly augmented) batch for step t; exposed for tests.
  std::vector<Index> batch_indices(long step) const;
  Batch batch_for(long step) const;

 private:
  int id_;
  std::vector<PhantomSample> shard_;
  TrainSettings settings_;
  bool federated_;
  Optimizer optimizer_;
  std::optional<Accountant> accountant_;
  long steps_ = 0;
};

// ---------------------------------------------------------------------------
// Local training

struct EpochMetrics {
  int epoch = 0;
  long steps = 0;
  double train_loss = 0.0;
  double dice_val = 0.0;
  std::optional<double> epsilon;
};

enum class StopReason { kCompleted, kBudgetExhausted };
std::string_view to_string(StopReason reason);

struct LocalResult {
  ParamSet params;
  std::vector<EpochMetrics> epochs;
  std::vector<double> epsilon_by_step;  // after each released step, DP only
  StopReason stop = StopReason::kCompleted;
  std::optional<double> abort_epsilon;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// `epochs` passes of ceil(n / batch) steps each.
LocalResult train_local(const Model& model, const std::vector<PhantomSample>& train,
                        const std::vector<PhantomSample>& val, const TrainSettings& settings,
                        int epochs, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Federation

struct FederationConfig {
  int n_workers = 3;
  int sync_every = 1;  // local steps per round
  int rounds = 10;
  bool weighted_aggregation = true;
  TrainSettings train;
  std::uint64_t partition_seed = 1;
  int threads = 1;
  bool record_updates = false;

  void validate() const;
};

struct UpdateMessage {
  int worker_id = 0;
  int round = 0;
  ParamSet payload;  // replica minus the broadcast global parameters
  Index n_samples = 0;
};

// Patient-disjoint shards with patient counts differing by at most one.
std::vector<std::vector<int>> partition_by_patient(std::vector<int> patient_ids, int n_workers,
                                                   std::uint64_t seed);
std::vector<std::vector<PhantomSample>> shard_samples(
    const std::vector<PhantomSample>& samples, const std::vector<std::vector<int>>& partition);

// Unweighted mean or n_samples-weighted mean of the payloads, accumulated in
// ascending worker_id order.
ParamSet aggregate(std::vector<UpdateMessage> updates, bool weighted);

struct RoundMetrics {
  int round = 0;
  int worker_id = 0;
  double loss = 0.0;
  double dice_val = 0.0;
  std::optional<double> epsilon;
  bool aborted = false;
};

struct FederationResult {
  ParamSet params;
  std::vector<RoundMetrics> rounds;
  std::vector<std::vector<double>> epsilon_by_site;  // per worker, per completed round
  std::vector<ParamSet> global_history;  // when record_updates: each round's start, then final
  std::vector<UpdateMessage> recorded;               // when record_updates
  StopReason stop = StopReason::kCompleted;
  int rounds_completed = 0;
  double lr = 0.0;
  int sync_every = 1;
};

using RoundCallback = std::function<void(int round, const ParamSet& global)>;

FederationResult run_federation(const Model& model,
                                const std::vector<std::vector<PhantomSample>>& shards,
                                const std::vector<PhantomSample>& val,
                                const FederationConfig& config,
                                const RoundCallback& on_round = {});

// A captured transmission plus the parameters it started from, with the
// payload rescaled to an averaged gradient: delta / (-lr * sync_every).
// Exact for plain SGD with sync_every = 1.
struct GradientUpdate {
  ParamSet global_params;
  ParamSet gradient;
  UpdateMessage message;
};
GradientUpdate capture_update(const FederationResult& run, int round, int worker_id);

// Capture file: a PTEN-framed bundle of the three parameter sets.
void save_capture(const std::filesystem::path& path, const GradientUpdate& update);
GradientUpdate load_capture(const std::filesystem::path& path);

void write_round_metrics(const std::filesystem::path& path,
                         const std::vector<RoundMetrics>& rows);

}  // namespace privseg

#endif  // PRIVSEG_FED_HPP_
