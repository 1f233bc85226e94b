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

#ifndef PRIVSEG_INVERSION_HPP_
#define PRIVSEG_INVERSION_HPP_

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "privseg/nn.hpp"
#include "privseg/param_set.hpp"

namespace privseg {

// 1 - <g_c, g*> / (|g_c| |g*|) over all parameters concatenated. `candidate`
// may be recorded (e.g. gradients from a build_graph backward), in which case
// the result is differentiable through them. Throws std::domain_error when
// the captured gradient is all zero.
Tensor cosine_gradient_loss(const std::vector<Tensor>& candidate, const ParamSet& captured);

enum class AttackOptimizer { kGradientDescent, kAdam };
std::string_view to_string(AttackOptimizer kind);
AttackOptimizer parse_attack_optimizer(std::string_view name);

struct AttackConfig {
  int max_iters = 2000;
  double lr = 0.1;
  AttackOptimizer optimizer = AttackOptimizer::kGradientDescent;
  std::uint64_t init_seed = 1;
  int divergence_patience = 50;
  double divergence_factor = 10.0;
  bool record_curve = true;

  void validate() const;
};

enum class AttackStop { kMaxIters, kDiverged };
std::string_view to_string(AttackStop stop);

struct AttackResult {
  Tensor reconstruction;  // (1, C, H, W), best-loss iterate
  std::vector<double> loss_curve;
  AttackStop stop = AttackStop::kMaxIters;
  double best_loss = 0.0;
  int best_iter = 0;
};

// Descent on the image: each iteration computes the training-loss gradient
// of (image, mask) at `params`, the cosine distance to `captured` and its
// image gradient by double backprop, takes a plain (-lr * g) or Adam step and
// clamps to [0,1]. Starts from uniform noise drawn from init_seed unless `init` is set.
AttackResult invert(const Model& model, const ParamSet& params, const ParamSet& captured,
                    const Tensor& mask, const AttackConfig& config,
                    const std::optional<Tensor>& init = std::nullopt);

// x = row_i(dW) / db_i for the row with the largest |db_i|; exact for the
// first fully connected layer of a single-sample batch. Throws
// std::domain_error when every |db_i| <= 1e-9.
Eigen::VectorXd analytic_fc_reconstruction(const Tensor& weight_grad, const Tensor& bias_grad);

struct ReconstructionQuality {
  double mse = 0.0;
  double psnr = 0.0;  // dB; +infinity when mse == 0
};
ReconstructionQuality evaluate_reconstruction(const Tensor& recon, const Tensor& original);

// Best PSNR among `count` uniform-noise images of the original's shape.
double best_random_baseline_psnr(const Tensor& original, int count, std::uint64_t seed);

}  // namespace privseg

#endif  // PRIVSEG_INVERSION_HPP_
