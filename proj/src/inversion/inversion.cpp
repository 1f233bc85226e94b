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

#include "privseg/inversion.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

#include "privseg/optim.hpp"
#include "privseg/random.hpp"

namespace privseg {

Tensor cosine_gradient_loss(const std::vector<Tensor>& candidate, const ParamSet& captured) {
  if (candidate.size() != captured.size()) {
    throw ShapeError(fmt::format("cosine_gradient_loss: {} candidate tensors, {} captured",
                                 candidate.size(), captured.size()));
  }
  double target_sq = 0.0;
  for (size_t i = 0; i < candidate.size(); ++i) {
    if (candidate[i].shape() != captured[i].value.shape()) {
      throw ShapeError(fmt::format("cosine_gradient_loss: '{}' is {} but candidate is {}",
                                   captured[i].name, shape_string(captured[i].value.shape()),
                                   shape_string(candidate[i].shape())));
    }
    target_sq += captured[i].value.values().squaredNorm();
  }
  if (!(target_sq > 0.0)) {
    throw std::domain_error("cosine_gradient_loss: captured gradient is zero");
  }
  Tensor dot, norm_sq;
  for (size_t i = 0; i < candidate.size(); ++i) {
    Tensor d = sum(mul(candidate[i], captured[i].value));
    Tensor n = sum(mul(candidate[i], candidate[i]));
    dot = i == 0 ? d : add(dot, d);
    norm_sq = i == 0 ? n : add(norm_sq, n);
  }
  const Tensor cosine = scale(mul(dot, pow(norm_sq, -0.5)), 1.0 / std::sqrt(target_sq));
  return add_scalar(neg(cosine), 1.0);
}

void AttackConfig::validate() const {
  if (max_iters < 1 || divergence_patience < 1 || !(divergence_factor > 1.0) || !(lr > 0.0)) {
    throw std::invalid_argument(fmt::format(
        "invalid attack config: iters={} patience={} factor={} lr={}", max_iters,
        divergence_patience, divergence_factor, lr));
  }
}

std::string_view to_string(AttackOptimizer kind) {
  return kind == AttackOptimizer::kGradientDescent ? "gd" : "adam";
}

AttackOptimizer parse_attack_optimizer(std::string_view name) {
  if (name == "gd") return AttackOptimizer::kGradientDescent;
  if (name == "adam") return AttackOptimizer::kAdam;
  throw std::invalid_argument(fmt::format("unknown attack optimizer '{}'", name));
}

std::string_view to_string(AttackStop stop) {
  return stop == AttackStop::kMaxIters ? "max_iters" : "diverged";
}

AttackResult invert(const Model& model, const ParamSet& params, const ParamSet& captured,
                    const Tensor& mask, const AttackConfig& config,
                    const std::optional<Tensor>& init) {
  config.validate();
  if (!params.same_layout(captured)) {
    throw ShapeError("invert: captured gradient does not match the model parameters");
  }
  const Shape& shape = mask.shape();
  if (mask.rank() != 4 || shape[0] != 1 || shape[1] != model.spec().out_channels) {
    throw ShapeError(fmt::format("invert: mask must be (1,{},H,W), got {}",
                                 model.spec().out_channels, shape_string(shape)));
  }
  const Shape image_shape = {1, model.spec().in_channels, shape[2], shape[3]};
  Eigen::VectorXd image;
  if (init) {
    if (init->shape() != image_shape) {
      throw ShapeError(fmt::format("invert: initial image {} must be {}",
                                   shape_string(init->shape()), shape_string(image_shape)));
    }
    image = init->values();
  } else {
    RandomStream rng(config.init_seed, hash_name("attack-init"));
    image.resize(shape_numel(image_shape));
    for (auto& v : image) v = rng.uniform();
  }

  OptimizerConfig oc;
  oc.kind = config.optimizer == AttackOptimizer::kAdam ? OptimizerKind::kAdam : OptimizerKind::kSgd;
  oc.lr = config.lr;
  Optimizer optimizer(oc);
  const ParamSet leaves = params.as_leaves();
  const std::vector<Tensor> wrt = leaves.tensors();
  AttackResult out;
  out.best_loss = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_image = image;
  int above = 0;
  for (int it = 0; it < config.max_iters; ++it) {
    Tensor x(image_shape, image, /*requires_grad=*/true);
    const Tensor train_loss = dice_loss(model.forward(leaves, x), mask);
    const std::vector<Tensor> grads = backward(train_loss, wrt, /*build_graph=*/true);
    const Tensor loss = cosine_gradient_loss(grads, captured);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      out.stop = AttackStop::kDiverged;
      break;
    }
    if (config.record_curve) out.loss_curve.push_back(value);
    if (value < out.best_loss) {
      out.best_loss = value;
      out.best_iter = it;
      best_image = image;
    }
    above = value > config.divergence_factor * out.best_loss ? above + 1 : 0;
    if (above >= config.divergence_patience) {
      out.stop = AttackStop::kDiverged;
      break;
    }
    const Eigen::VectorXd g = backward(loss, x).values();
    image = optimizer.step(image, g).cwiseMax(0.0).cwiseMin(1.0);
  }
  out.reconstruction = Tensor(image_shape, best_image);
  return out;
}

Eigen::VectorXd analytic_fc_reconstruction(const Tensor& weight_grad, const Tensor& bias_grad) {
  if (weight_grad.rank() != 2 || bias_grad.rank() != 1 || weight_grad.dim(0) != bias_grad.dim(0)) {
    throw ShapeError(fmt::format("analytic_fc_reconstruction: weight grad {} and bias grad {}",
                                 shape_string(weight_grad.shape()),
                                 shape_string(bias_grad.shape())));
  }
  Index row = 0;
  bias_grad.values().cwiseAbs().maxCoeff(&row);
  const double b = bias_grad.values()[row];
  if (!(std::abs(b) > 1e-9)) {
    throw std::domain_error("analytic_fc_reconstruction: every bias gradient is ~0");
  }
  const Index in = weight_grad.dim(1);
  return weight_grad.values().segment(row * in, in) / b;
}

ReconstructionQuality evaluate_reconstruction(const Tensor& recon, const Tensor& original) {
  if (recon.numel() != original.numel()) {
    throw ShapeError(fmt::format("evaluate_reconstruction: {} vs {}",
                                 shape_string(recon.shape()), shape_string(original.shape())));
  }
  ReconstructionQuality q;
  q.mse = (recon.values() - original.values()).squaredNorm() / static_cast<double>(recon.numel());
  q.psnr = q.mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / q.mse);
  return q;
}

double best_random_baseline_psnr(const Tensor& original, int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("baseline count must be >= 1");
  double best = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < count; ++k) {
    RandomStream rng(seed, derive_stream({hash_name("baseline"), static_cast<std::uint64_t>(k)}));
    Eigen::VectorXd v(original.numel());
    for (auto& x : v) x = rng.uniform();
    best = std::max(best, evaluate_reconstruction(Tensor(original.shape(), v), original).psnr);
  }
  return best;
}

}  // namespace privseg
