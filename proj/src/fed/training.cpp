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
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "privseg/fed.hpp"

namespace privseg {
namespace {

constexpr std::uint64_t kBatchStream = 0xba7c;
constexpr std::uint64_t kAugmentStream = 0xa06;
constexpr std::uint64_t kNoiseStream = 0x4015e;

}  // namespace

void TrainSettings::validate() const {
  optimizer.validate();
  if (batch_size < 0) throw std::invalid_argument("batch size must be >= 0");
  if (regime) regime->validate();
  if (augment) augmentation.validate();
}

std::vector<double> dice_per_image(const Model& model, const ParamSet& params,
                                   const std::vector<PhantomSample>& samples) {
  if (samples.empty()) return {};
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(samples.size());
  constexpr size_t kChunk = 32;
  for (size_t begin = 0; begin < samples.size(); begin += kChunk) {
    std::vector<Index> idx;
    for (size_t i = begin; i < std::min(samples.size(), begin + kChunk); ++i) {
      idx.push_back(static_cast<Index>(i));
    }
    const Batch b = make_batch(samples, idx);
    for (double d : dice_per_sample(model.forward(params, b.images), b.masks)) out.push_back(d);
  }
  return out;
}

double evaluate_dice(const Model& model, const ParamSet& params,
                     const std::vector<PhantomSample>& samples) {
  const std::vector<double> d = dice_per_image(model, params, samples);
  if (d.empty()) return 0.0;
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

Worker::Worker(int id, std::vector<PhantomSample> shard, const TrainSettings& settings,
               bool federated)
    : id_(id),
      shard_(std::move(shard)),
      settings_(settings),
      federated_(federated),
      optimizer_(settings.optimizer) {
  settings_.validate();
  if (shard_.empty()) throw std::invalid_argument(fmt::format("worker {} has no data", id));
  if (settings_.regime) accountant_.emplace(sampling_rate(), settings_.regime->noise_multiplier);
}

int Worker::effective_batch() const {
  const auto n = static_cast<int>(shard_.size());
  return settings_.batch_size == 0 ? n : std::min(settings_.batch_size, n);
}

double Worker::sampling_rate() const {
  return static_cast<double>(effective_batch()) / static_cast<double>(shard_.size());
}

std::optional<double> Worker::epsilon() const {
  if (!accountant_) return std::nullopt;
  return accountant_->epsilon(settings_.regime->delta).epsilon;
}

std::vector<Index> Worker::batch_indices(long step) const {
  const auto n = static_cast<Index>(shard_.size());
  const Index b = effective_batch();
  std::vector<Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (b == n) return idx;
  // Partial Fisher-Yates: the first b entries are a uniform b-subset.
  RandomStream rng(settings_.seed, derive_stream({kBatchStream, static_cast<std::uint64_t>(id_),
                                                  static_cast<std::uint64_t>(step)}));
  for (Index i = 0; i < b; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(b));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Batch Worker::batch_for(long step) const {
  const std::vector<Index> idx = batch_indices(step);
  if (!settings_.augment) return make_batch(shard_, idx);
  RandomStream rng(settings_.seed, derive_stream({kAugmentStream, static_cast<std::uint64_t>(id_),
                                                  static_cast<std::uint64_t>(step)}));
  std::vector<PhantomSample> picked;
  picked.reserve(idx.size());
  for (Index i : idx) {
    picked.push_back(augment(shard_[static_cast<size_t>(i)], settings_.augmentation, rng));
  }
  return make_batch(picked);
}

Worker::Result Worker::train(const Model& model, const ParamSet& start, int steps) {
  Result out;
  out.params = start;
  if (accountant_) {
    try {
      enforce_budget(*accountant_, *settings_.regime, federated_);
    } catch (const BudgetExceeded& e) {
      out.aborted = true;
      out.abort_epsilon = e.epsilon();
      return out;
    }
  }
  double loss_sum = 0.0;
  for (int k = 0; k < steps; ++k) {
    const Batch batch = batch_for(steps_);
    if (accountant_) {
      try {
        DpStep s = dp_sgd_step(
            model, out.params, batch.images, batch.masks, *settings_.regime, federated_,
            optimizer_, *accountant_, settings_.seed,
            derive_stream({kNoiseStream, static_cast<std::uint64_t>(id_),
                           static_cast<std::uint64_t>(steps_)}));
        out.params = std::move(s.params);
        loss_sum += s.loss;
      } catch (const BudgetExceeded& e) {
        ++steps_;
        out.aborted = true;
        out.abort_epsilon = e.epsilon();
        break;
      }
    } else {
      const LossAndGradient g = batch_gradient(model, out.params, batch.images, batch.masks);
      out.params = out.params.unflatten(optimizer_.step(out.params.flatten(), g.grad));
      loss_sum += g.loss;
    }
    ++steps_;
    ++out.steps_done;
  }
  if (out.steps_done > 0) out.loss = loss_sum / out.steps_done;
  return out;
}

std::string_view to_string(StopReason reason) {
  return reason == StopReason::kCompleted ? "completed" : "budget_exhausted";
}

LocalResult train_local(const Model& model, const std::vector<PhantomSample>& train,
                        const std::vector<PhantomSample>& val, const TrainSettings& settings,
                        int epochs, const EpochCallback& on_epoch) {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  Worker worker(0, train, settings, /*federated=*/false);
  const int b = worker.effective_batch();
  const int steps_per_epoch = static_cast<int>((train.size() + b - 1) / static_cast<size_t>(b));
  LocalResult out;
  out.params = model.initial_params();
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch;
    double loss_sum = 0.0;
    int done = 0;
    bool aborted = false;
    for (int k = 0; k < steps_per_epoch; ++k) {
      Worker::Result r = worker.train(model, out.params, 1);
      if (r.steps_done == 1) {
        out.params = std::move(r.params);
        loss_sum += r.loss;
        ++done;
        if (auto eps = worker.epsilon()) out.epsilon_by_step.push_back(*eps);
      }
      if (r.aborted) {
        out.stop = StopReason::kBudgetExhausted;
        out.abort_epsilon = r.abort_epsilon;
        aborted = true;
        break;
      }
    }
    if (done > 0 || !aborted) {
      m.steps = worker.steps_taken();
      m.train_loss = done > 0 ? loss_sum / done : 0.0;
      m.dice_val = evaluate_dice(model, out.params, val);
      if (auto eps = worker.epsilon()) {
        m.epsilon = aborted && !out.epsilon_by_step.empty() ? out.epsilon_by_step.back() : *eps;
      }
      out.epochs.push_back(m);
      if (on_epoch) on_epoch(m);
    }
    if (aborted) break;
  }
  return out;
}

}  // namespace privseg
