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

#ifndef PRIVSEG_DP_HPP_
#define PRIVSEG_DP_HPP_

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "privseg/nn.hpp"
#include "privseg/optim.hpp"

namespace privseg {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Noise multiplier, clipping norm, delta and the epsilon at which training is
// aborted (separately for local and per-site federated training).
struct PrivacyRegime {
  std::string name = "custom";
  double noise_multiplier = 1.0;
  double clip_norm = 1.0;
  double delta = 1e-5;
  double budget_local = kInfinity;
  double budget_federated = kInfinity;

  double budget(bool federated) const { return federated ? budget_federated : budget_local; }
  void validate() const;

  // "low", "medium" or "high".
  static PrivacyRegime preset(std::string_view name);
};

inline constexpr std::string_view kRegimeNames[] = {"low", "medium", "high"};

// ---------------------------------------------------------------------------
// Mechanism

// Gradient of the mean Dice loss over one batch, flattened in ParamSet order.
struct LossAndGradient {
  double loss = 0.0;
  Eigen::VectorXd grad;
};
LossAndGradient batch_gradient(const Model& model, const ParamSet& params,
                               const Tensor& images, const Tensor& masks);

// One backward pass per sample, in sample order. Element i is the gradient of
// sample i's own loss. `losses`, when given, receives the per-sample losses.
std::vector<Eigen::VectorXd> per_sample_gradients(const Model& model, const ParamSet& params,
                                                  const Tensor& images, const Tensor& masks,
                                                  std::vector<double>* losses = nullptr);

// g * min(1, C / |g|). C may be +infinity (no clipping). Throws
// std::domain_error naming the sample when a gradient has non-finite entries.
std::vector<Eigen::VectorXd> clip_per_sample(std::vector<Eigen::VectorXd> grads,
                                             double clip_norm);

// (sum_i g_i + N(0, sigma^2 C^2 I)) / B. Coordinate j of the noise is
// gaussian_at(seed, stream, j), so the draw is reproducible from its ids.
// sigma == 0 adds nothing even when C is infinite.
Eigen::VectorXd noise_and_average(std::span<const Eigen::VectorXd> clipped, double sigma,
                                  double clip_norm, std::uint64_t seed,
                                  std::uint64_t stream);

// ---------------------------------------------------------------------------
// Accounting

// Integer orders 2..64 plus 128 and 256.
const std::vector<int>& default_orders();

// alpha / (2 sigma^2).
double rdp_gaussian(double sigma, double alpha);
// RDP at integer order alpha of the Gaussian mechanism on a Poisson-style
// subsample with rate q: log of the binomial mixture, evaluated in log space.
double rdp_subsampled_gaussian(double q, double sigma, int alpha);

struct EpsilonResult {
  double epsilon = 0.0;
  int order = 0;
};

// min over orders of rdp[a] + log(1/delta) / (a - 1).
EpsilonResult to_epsilon(const std::vector<int>& orders, const Eigen::VectorXd& rdp,
                         double delta);

// Per-site RDP accountant for a fixed (q, sigma). Accumulated RDP is kept as
// steps * per-step RDP, so composition is exactly additive.
class Accountant {
 public:
  Accountant(double sampling_rate, double sigma,
             std::vector<int> orders = default_orders());

  double sampling_rate() const { return q_; }
  double sigma() const { return sigma_; }
  long steps() const { return steps_; }
  const std::vector<int>& orders() const { return orders_; }
  const Eigen::VectorXd& per_step_rdp() const { return per_step_; }

  void step(long n = 1);
  Eigen::VectorXd rdp() const { return static_cast<double>(steps_) * per_step_; }
  Eigen::VectorXd rdp_after(long steps) const { return static_cast<double>(steps) * per_step_; }
  EpsilonResult epsilon(double delta) const;
  EpsilonResult epsilon_after(long steps, double delta) const;

 private:
  double q_, sigma_;
  std::vector<int> orders_;
  Eigen::VectorXd per_step_;
  long steps_ = 0;
};

// Signals that the step just accounted pushed epsilon over the budget. The
// step's update is not released.
class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(double epsilon, double budget, long step);
  double epsilon() const { return epsilon_; }
  double budget() const { return budget_; }
  // Accountant step count at which the budget was exceeded.
  long step() const { return step_; }

 private:
  double epsilon_, budget_;
  long step_;
};

// Throws BudgetExceeded when the accountant's current epsilon exceeds the
// regime's budget for the topology. Called before the first step (the
// zero-step floor) and after every step.
void enforce_budget(const Accountant& acct, const PrivacyRegime& regime, bool federated);

// Smallest T in [0, max_steps] with epsilon_after(T) > budget, or -1.
long first_step_over_budget(const Accountant& acct, double delta, double budget,
                            long max_steps);

// ---------------------------------------------------------------------------
// Training step

struct DpStep {
  ParamSet params;
  double loss = 0.0;  // mean per-sample loss before the update
  EpsilonResult epsilon;
};

// Per-sample gradients, clipping, noising, averaging, optimizer update and
// one accountant step. Noise stream ids are (noise_seed, noise_stream).
// Throws BudgetExceeded after accounting when the post-step epsilon exceeds
// the budget; the returned parameters are then never produced.
DpStep dp_sgd_step(const Model& model, const ParamSet& params, const Tensor& images,
                   const Tensor& masks, const PrivacyRegime& regime, bool federated,
                   Optimizer& optimizer, Accountant& acct, std::uint64_t noise_seed,
                   std::uint64_t noise_stream);

}  // namespace privseg

#endif  // PRIVSEG_DP_HPP_
