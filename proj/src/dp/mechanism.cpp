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

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "privseg/dp.hpp"
#include "privseg/random.hpp"

namespace privseg {

void PrivacyRegime::validate() const {
  if (!(noise_multiplier >= 0.0) || !(clip_norm > 0.0) || !(delta > 0.0 && delta < 1.0) ||
      !(budget_local > 0.0) || !(budget_federated > 0.0)) {
    throw std::invalid_argument(fmt::format(
        "invalid privacy regime '{}': sigma={} C={} delta={} budgets={}/{}", name,
        noise_multiplier, clip_norm, delta, budget_local, budget_federated));
  }
}

PrivacyRegime PrivacyRegime::preset(std::string_view name) {
  if (name == "low") return {"low", 0.8, 1.0, 1e-5, 5.98, 11.5};
  if (name == "medium") return {"medium", 1.0, 0.5, 1e-5, 3.58, 7.08};
  if (name == "high") return {"high", 1.5, 0.1, 1e-5, 1.82, 3.54};
  throw std::invalid_argument(fmt::format("unknown privacy regime '{}'", name));
}

namespace {

Tensor sample_of(const Tensor& batch, Index s) {
  Shape shape = batch.shape();
  const Index per = batch.numel() / shape[0];
  shape[0] = 1;
  return Tensor(std::move(shape), batch.values().segment(s * per, per));
}

void require_batch(const Tensor& images, const Tensor& masks) {
  if (images.rank() != 4 || images.shape() != masks.shape() || images.dim(0) < 1) {
    throw ShapeError(fmt::format("batch: images {} and masks {} must be equal (N,C,H,W)",
                                 shape_string(images.shape()),
                                 shape_string(masks.shape())));
  }
}

Eigen::VectorXd flat_gradient(const ParamSet& leaves, const Tensor& loss) {
  const std::vector<Tensor> wrt = leaves.tensors();
  const std::vector<Tensor> grads = backward(loss, wrt);
  Eigen::VectorXd flat(leaves.numel());
  Index offset = 0;
  for (const Tensor& g : grads) {
    flat.segment(offset, g.numel()) = g.values();
    offset += g.numel();
  }
  return flat;
}

}  // namespace

LossAndGradient batch_gradient(const Model& model, const ParamSet& params,
                               const Tensor& images, const Tensor& masks) {
  require_batch(images, masks);
  const ParamSet leaves = params.as_leaves();
  const Tensor loss = dice_loss(model.forward(leaves, images), masks);
  return {loss.item(), flat_gradient(leaves, loss)};
}

std::vector<Eigen::VectorXd> per_sample_gradients(const Model& model, const ParamSet& params,
                                                  const Tensor& images, const Tensor& masks,
                                                  std::vector<double>* losses) {
  require_batch(images, masks);
  const ParamSet leaves = params.as_leaves();
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<size_t>(images.dim(0)));
  if (losses) losses->clear();
  for (Index s = 0; s < images.dim(0); ++s) {
    const Tensor loss = dice_loss(model.forward(leaves, sample_of(images, s)),
                                  sample_of(masks, s));
    if (losses) losses->push_back(loss.item());
    out.push_back(flat_gradient(leaves, loss));
  }
  return out;
}

std::vector<Eigen::VectorXd> clip_per_sample(std::vector<Eigen::VectorXd> grads,
                                             double clip_norm) {
  if (!(clip_norm > 0.0)) {
    throw std::invalid_argument(fmt::format("clip norm {} must be > 0", clip_norm));
  }
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].allFinite()) {
      throw std::domain_error(fmt::format("per-sample gradient {} has non-finite entries", i));
    }
    const double norm = grads[i].norm();
    if (norm > clip_norm) grads[i] *= clip_norm / norm;
  }
  return grads;
}

Eigen::VectorXd noise_and_average(std::span<const Eigen::VectorXd> clipped, double sigma,
                                  double clip_norm, std::uint64_t seed,
                                  std::uint64_t stream) {
  if (clipped.empty()) throw std::invalid_argument("noise_and_average: empty batch");
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise multiplier must be >= 0");
  Eigen::VectorXd sum = clipped[0];
  for (size_t i = 1; i < clipped.size(); ++i) {
    if (clipped[i].size() != sum.size()) {
      throw ShapeError(fmt::format("noise_and_average: gradient {} has {} entries, not {}", i,
                                   clipped[i].size(), sum.size()));
    }
    sum += clipped[i];
  }
  if (sigma > 0.0) {
    if (!std::isfinite(clip_norm)) {
      throw std::invalid_argument("noise needs a finite clip norm");
    }
    sum += (sigma * clip_norm) * gaussian_vector(seed, stream, sum.size());
  }
  return sum / static_cast<double>(clipped.size());
}

DpStep dp_sgd_step(const Model& model, const ParamSet& params, const Tensor& images,
                   const Tensor& masks, const PrivacyRegime& regime, bool federated,
                   Optimizer& optimizer, Accountant& acct, std::uint64_t noise_seed,
                   std::uint64_t noise_stream) {
  if (acct.sigma() != regime.noise_multiplier) {
    throw std::invalid_argument(fmt::format(
        "accountant sigma {} does not match regime sigma {}", acct.sigma(),
        regime.noise_multiplier));
  }
  std::vector<double> losses;
  std::vector<Eigen::VectorXd> grads =
      clip_per_sample(per_sample_gradients(model, params, images, masks, &losses),
                      regime.clip_norm);
  const Eigen::VectorXd noisy = noise_and_average(grads, regime.noise_multiplier,
                                                  regime.clip_norm, noise_seed, noise_stream);
  acct.step();
  enforce_budget(acct, regime, federated);

  DpStep out;
  for (double l : losses) out.loss += l;
  out.loss /= static_cast<double>(losses.size());
  out.params = params.unflatten(optimizer.step(params.flatten(), noisy));
  out.epsilon = acct.epsilon(regime.delta);
  return out;
}

}  // namespace privseg
