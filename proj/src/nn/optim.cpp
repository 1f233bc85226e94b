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

#include "privseg/optim.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace privseg {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument(fmt::format("unknown optimizer '{}'", name));
}

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw std::invalid_argument(fmt::format("learning rate {} must be finite and >= 0", lr));
  }
  if (kind == OptimizerKind::kAdam &&
      !(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
    throw std::invalid_argument("adam: betas must lie in [0, 1) and eps > 0");
  }
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::reset() {
  m_.resize(0);
  v_.resize(0);
  t_ = 0;
}

Eigen::VectorXd Optimizer::step(const Eigen::VectorXd& params,
                                const Eigen::VectorXd& grad) {
  if (params.size() != grad.size()) {
    throw std::invalid_argument(fmt::format("optimizer: {} params, {} gradient entries",
                                            params.size(), grad.size()));
  }
  if (config_.kind == OptimizerKind::kSgd) return params - config_.lr * grad;

  if (m_.size() != params.size()) {
    m_ = Eigen::VectorXd::Zero(params.size());
    v_ = Eigen::VectorXd::Zero(params.size());
    t_ = 0;
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  m_ = b1 * m_ + (1.0 - b1) * grad;
  v_ = b2 * v_ + (1.0 - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  return params.array() -
         config_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.eps);
}

}  // namespace privseg
