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
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "privseg/dp.hpp"

namespace privseg {

const std::vector<int>& default_orders() {
  static const std::vector<int> orders = [] {
    std::vector<int> v;
    for (int a = 2; a <= 64; ++a) v.push_back(a);
    v.push_back(128);
    v.push_back(256);
    return v;
  }();
  return orders;
}

double rdp_gaussian(double sigma, double alpha) {
  if (!(sigma > 0.0)) throw std::invalid_argument(fmt::format("sigma {} must be > 0", sigma));
  if (!(alpha > 1.0)) throw std::invalid_argument(fmt::format("order {} must be > 1", alpha));
  return alpha / (2.0 * sigma * sigma);
}

double rdp_subsampled_gaussian(double q, double sigma, int alpha) {
  if (!(q > 0.0 && q <= 1.0)) {
    throw std::invalid_argument(fmt::format("sampling rate {} must lie in (0, 1]", q));
  }
  if (!(sigma > 0.0)) throw std::invalid_argument(fmt::format("sigma {} must be > 0", sigma));
  if (alpha < 2) throw std::invalid_argument(fmt::format("order {} must be >= 2", alpha));

  const double a = alpha;
  if (q == 1.0) return rdp_gaussian(sigma, a);
  const double log_q = std::log(q), log_1mq = std::log1p(-q);
  const double lgamma_a1 = std::lgamma(a + 1.0);
  std::vector<double> terms(static_cast<size_t>(alpha) + 1);
  for (int k = 0; k <= alpha; ++k) {
    const double kk = k;
    terms[static_cast<size_t>(k)] = lgamma_a1 - std::lgamma(kk + 1.0) -
                                    std::lgamma(a - kk + 1.0) + (a - kk) * log_1mq +
                                    kk * log_q + kk * (kk - 1.0) / (2.0 * sigma * sigma);
  }
  const double peak = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - peak);
  return (peak + std::log(acc)) / (a - 1.0);
}

EpsilonResult to_epsilon(const std::vector<int>& orders, const Eigen::VectorXd& rdp,
                         double delta) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument(fmt::format("delta {} must lie in (0, 1)", delta));
  }
  if (orders.empty() || static_cast<Index>(orders.size()) != rdp.size()) {
    throw std::invalid_argument("to_epsilon: orders and rdp differ in length");
  }
  const double log_inv_delta = -std::log(delta);
  EpsilonResult best{kInfinity, orders.front()};
  for (size_t i = 0; i < orders.size(); ++i) {
    const double eps = rdp[static_cast<Index>(i)] + log_inv_delta / (orders[i] - 1.0);
    if (eps < best.epsilon) best = {eps, orders[i]};
  }
  return best;
}

Accountant::Accountant(double sampling_rate, double sigma, std::vector<int> orders)
    : q_(sampling_rate), sigma_(sigma), orders_(std::move(orders)) {
  if (orders_.empty()) throw std::invalid_argument("accountant needs at least one order");
  per_step_.resize(static_cast<Index>(orders_.size()));
  for (size_t i = 0; i < orders_.size(); ++i) {
    per_step_[static_cast<Index>(i)] = rdp_subsampled_gaussian(q_, sigma_, orders_[i]);
  }
}

void Accountant::step(long n) {
  if (n < 0) throw std::invalid_argument("accountant cannot step backwards");
  steps_ += n;
}

EpsilonResult Accountant::epsilon(double delta) const {
  return to_epsilon(orders_, rdp(), delta);
}

EpsilonResult Accountant::epsilon_after(long steps, double delta) const {
  return to_epsilon(orders_, rdp_after(steps), delta);
}

BudgetExceeded::BudgetExceeded(double epsilon, double budget, long step)
    : std::runtime_error(fmt::format(
          "privacy budget exceeded: epsilon {:.4f} > {:.4f} at step {}", epsilon, budget,
          step)),
      epsilon_(epsilon),
      budget_(budget),
      step_(step) {}

void enforce_budget(const Accountant& acct, const PrivacyRegime& regime, bool federated) {
  const double budget = regime.budget(federated);
  const double eps = acct.epsilon(regime.delta).epsilon;
  if (eps > budget) throw BudgetExceeded(eps, budget, acct.steps());
}

long first_step_over_budget(const Accountant& acct, double delta, double budget,
                            long max_steps) {
  for (long t = 0; t <= max_steps; ++t) {
    if (acct.epsilon_after(t, delta).epsilon > budget) return t;
  }
  return -1;
}

}  // namespace privseg
