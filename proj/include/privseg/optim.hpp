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

#ifndef PRIVSEG_OPTIM_HPP_
#define PRIVSEG_OPTIM_HPP_

#include <string_view>

#include <Eigen/Core>

namespace privseg {

enum class OptimizerKind { kSgd, kAdam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// Flat-vector optimizer. The DP mechanism only touches the gradient, so any
// optimizer applied after noising keeps the guarantee.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  const OptimizerConfig& config() const { return config_; }
  // Returns params after one update with `grad`. SGD: params - lr * grad.
  Eigen::VectorXd step(const Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  void reset();

 private:
  OptimizerConfig config_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

}  // namespace privseg

#endif  // PRIVSEG_OPTIM_HPP_
