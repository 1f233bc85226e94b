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
#include <cinttypes>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

#include "privseg/fed.hpp"
#include "privseg/serialize.hpp"

namespace privseg {

void FederationConfig::validate() const {
  if (n_workers < 1) throw std::invalid_argument("federation needs at least one worker");
  if (sync_every < 1) throw std::invalid_argument("sync_every must be >= 1");
  if (rounds < 0) throw std::invalid_argument("rounds must be >= 0");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  train.validate();
}

std::vector<std::vector<int>> partition_by_patient(std::vector<int> patient_ids, int n_workers,
                                                   std::uint64_t seed) {
  std::sort(patient_ids.begin(), patient_ids.end());
  patient_ids.erase(std::unique(patient_ids.begin(), patient_ids.end()), patient_ids.end());
  if (n_workers < 1 || static_cast<int>(patient_ids.size()) < n_workers) {
    throw std::invalid_argument(fmt::format("cannot split {} patients over {} workers",
                                            patient_ids.size(), n_workers));
  }
  RandomStream rng(seed, hash_name("partition"));
  rng.shuffle(patient_ids.begin(), patient_ids.end());
  std::vector<std::vector<int>> out(static_cast<size_t>(n_workers));
  for (size_t i = 0; i < patient_ids.size(); ++i) {
    out[i % static_cast<size_t>(n_workers)].push_back(patient_ids[i]);
  }
  for (auto& shard : out) std::sort(shard.begin(), shard.end());
  return out;
}

std::vector<std::vector<PhantomSample>> shard_samples(
    const std::vector<PhantomSample>& samples, const std::vector<std::vector<int>>& partition) {
  std::map<int, size_t> owner;
  for (size_t w = 0; w < partition.size(); ++w) {
    for (int p : partition[w]) {
      if (!owner.emplace(p, w).second) {
        throw std::invalid_argument(fmt::format("patient {} appears in two shards", p));
      }
    }
  }
  std::vector<std::vector<PhantomSample>> out(partition.size());
  for (const PhantomSample& s : samples) {
    auto it = owner.find(s.patient_id);
    if (it == owner.end()) {
      throw std::invalid_argument(fmt::format("patient {} is in no shard", s.patient_id));
    }
    out[it->second].push_back(s);
  }
  return out;
}

ParamSet aggregate(std::vector<UpdateMessage> updates, bool weighted) {
  if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
  std::sort(updates.begin(), updates.end(),
            [](const UpdateMessage& a, const UpdateMessage& b) { return a.worker_id < b.worker_id; });
  const ParamSet& layout = updates.front().payload;
  double total = 0.0;
  for (const UpdateMessage& u : updates) {
    if (!u.payload.same_layout(layout)) {
      throw ShapeError(fmt::format("aggregate: update from worker {} does not match worker {}",
                                   u.worker_id, updates.front().worker_id));
    }
    if (weighted && u.n_samples <= 0) {
      throw std::invalid_argument(fmt::format("aggregate: worker {} reports {} samples",
                                              u.worker_id, u.n_samples));
    }
    total += static_cast<double>(u.n_samples);
  }
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(layout.numel());
  for (const UpdateMessage& u : updates) {
    const double w = weighted ? static_cast<double>(u.n_samples) / total
                              : 1.0 / static_cast<double>(updates.size());
    acc += w * u.payload.flatten();
  }
  return layout.unflatten(acc);
}

namespace {

// Runs f(i) for i in [0, n) on up to `threads` threads. Results are written
// by index, so the schedule cannot change them.
template <typename F>
void parallel_for(int n, int threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  std::vector<std::thread> pool;
  const int t = std::min(threads, n);
  for (int k = 0; k < t; ++k) {
    pool.emplace_back([&, k] {
      for (int i = k; i < n; i += t) {
        try {
          f(i);
        } catch (...) {
          errors[static_cast<size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

FederationResult run_federation(const Model& model,
                                const std::vector<std::vector<PhantomSample>>& shards,
                                const std::vector<PhantomSample>& val,
                                const FederationConfig& config, const RoundCallback& on_round) {
  config.validate();
  if (static_cast<int>(shards.size()) != config.n_workers) {
    throw std::invalid_argument(fmt::format("{} shards for {} workers", shards.size(),
                                            config.n_workers));
  }
  std::vector<Worker> workers;
  workers.reserve(shards.size());
  for (int w = 0; w < config.n_workers; ++w) {
    workers.emplace_back(w, shards[static_cast<size_t>(w)], config.train, /*federated=*/true);
  }

  FederationResult out;
  out.params = model.initial_params();
  out.lr = config.train.optimizer.lr;
  out.sync_every = config.sync_every;
  out.epsilon_by_site.resize(shards.size());

  for (int round = 0; round < config.rounds; ++round) {
    if (config.record_updates) out.global_history.push_back(out.params);
    std::vector<Worker::Result> results(workers.size());
    parallel_for(config.n_workers, config.threads, [&](int w) {
      results[static_cast<size_t>(w)] =
          workers[static_cast<size_t>(w)].train(model, out.params, config.sync_every);
    });

    bool aborted = false;
    std::vector<UpdateMessage> updates;
    for (int w = 0; w < config.n_workers; ++w) {
      Worker::Result& r = results[static_cast<size_t>(w)];
      aborted = aborted || r.aborted;
      UpdateMessage m;
      m.worker_id = w;
      m.round = round;
      m.n_samples = static_cast<Index>(workers[static_cast<size_t>(w)].shard().size());
      m.payload = out.params.unflatten(r.params.flatten() - out.params.flatten());
      updates.push_back(std::move(m));
    }

    // Any site over budget ends the federation; this round is not applied.
    if (!aborted) {
      const ParamSet delta = aggregate(updates, config.weighted_aggregation);
      out.params = out.params.unflatten(out.params.flatten() + delta.flatten());
      if (config.record_updates) {
        for (auto& u : updates) out.recorded.push_back(std::move(u));
      }
      ++out.rounds_completed;
    }
    const double dice = evaluate_dice(model, out.params, val);
    for (int w = 0; w < config.n_workers; ++w) {
      const Worker::Result& r = results[static_cast<size_t>(w)];
      RoundMetrics m;
      m.round = round;
      m.worker_id = w;
      m.loss = r.loss;
      m.dice_val = dice;
      m.aborted = r.aborted;
      if (r.aborted) {
        m.epsilon = r.abort_epsilon;
      } else {
        m.epsilon = workers[static_cast<size_t>(w)].epsilon();
        if (!aborted && m.epsilon) {
          out.epsilon_by_site[static_cast<size_t>(w)].push_back(*m.epsilon);
        }
      }
      out.rounds.push_back(m);
    }
    if (on_round) on_round(round, out.params);
    if (aborted) {
      out.stop = StopReason::kBudgetExhausted;
      break;
    }
  }
  if (config.record_updates) out.global_history.push_back(out.params);
  return out;
}

GradientUpdate capture_update(const FederationResult& run, int round, int worker_id) {
  auto it = std::find_if(run.recorded.begin(), run.recorded.end(), [&](const UpdateMessage& m) {
    return m.round == round && m.worker_id == worker_id;
  });
  if (it == run.recorded.end()) {
    throw std::out_of_range(fmt::format(
        "no recorded update for round {} worker {} (recording {})", round, worker_id,
        run.recorded.empty() ? "disabled or empty" : "enabled"));
  }
  if (!(run.lr > 0.0)) throw std::invalid_argument("capture needs a positive learning rate");
  GradientUpdate out;
  out.message = *it;
  out.global_params = run.global_history.at(static_cast<size_t>(round));
  out.gradient = it->payload.unflatten(it->payload.flatten() / (-run.lr * run.sync_every));
  return out;
}

void save_capture(const std::filesystem::path& path, const GradientUpdate& update) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write {}", path.string()));
  out << "privseg-capture 1\nworker_id,round,n_samples\n"
      << update.message.worker_id << ',' << update.message.round << ','
      << update.message.n_samples << '\n';
  write_param_set(out, update.global_params);
  write_param_set(out, update.message.payload);
  write_param_set(out, update.gradient);
  if (!out.flush()) throw FormatError(fmt::format("failed writing {}", path.string()));
}

GradientUpdate load_capture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot read {}", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != "privseg-capture 1" || !std::getline(in, line) ||
      line != "worker_id,round,n_samples" || !std::getline(in, line)) {
    throw FormatError(fmt::format("{} is not a capture file", path.string()));
  }
  GradientUpdate out;
  if (std::sscanf(line.c_str(), "%d,%d,%" SCNd64, &out.message.worker_id, &out.message.round,
                  &out.message.n_samples) != 3) {
    throw FormatError(fmt::format("bad capture header '{}'", line));
  }
  out.global_params = read_param_set(in);
  out.message.payload = read_param_set(in);
  out.gradient = read_param_set(in);
  if (!out.global_params.same_layout(out.gradient) ||
      !out.global_params.same_layout(out.message.payload)) {
    throw FormatError(fmt::format("{}: parameter sets disagree in layout", path.string()));
  }
  return out;
}

void write_round_metrics(const std::filesystem::path& path,
                         const std::vector<RoundMetrics>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write {}", path.string()));
  out << "round,worker_id,loss,dice_val,epsilon,aborted\n";
  for (const RoundMetrics& r : rows) {
    out << fmt::format("{},{},{:.17g},{:.17g},{},{}\n", r.round, r.worker_id, r.loss,
                       r.dice_val, r.epsilon ? fmt::format("{:.17g}", *r.epsilon) : "",
                       r.aborted ? 1 : 0);
  }
}

}  // namespace privseg
