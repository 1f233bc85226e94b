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

#include <fmt/format.h>

#include "privseg/nn.hpp"

namespace privseg {

Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                     double eps) {
  if (x.rank() != 4) {
    throw ShapeError(fmt::format("instance_norm: expected NCHW, got {}",
                                 shape_string(x.shape())));
  }
  const Index plane = x.dim(2) * x.dim(3);
  if (plane < 2) {
    throw ShapeError(fmt::format(
        "instance_norm: spatial size {}x{} has no variance to normalize",
        x.dim(2), x.dim(3)));
  }
  const double inv_plane = 1.0 / static_cast<double>(plane);
  Tensor mu = scale(sum_inner(x, 2), inv_plane);
  Tensor centered = sub(x, expand_inner(mu, x.shape()));
  Tensor var = scale(sum_inner(mul(centered, centered), 2), inv_plane);
  Tensor inv_std = pow(add_scalar(var, eps), -0.5);
  Tensor y = mul(centered, expand_inner(inv_std, x.shape()));
  return add_channel(mul_channel(y, gain), bias);
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shapes differ, {} vs {}", op,
                                 shape_string(a.shape()), shape_string(b.shape())));
  }
}

void require_binary(const char* op, const Tensor& t) {
  for (double v : t.values()) {
    if (v != 0.0 && v != 1.0) {
      throw std::invalid_argument(fmt::format("{}: mask value {} is not 0 or 1", op, v));
    }
  }
}

}  // namespace

double dice_score(const Tensor& pred_mask, const Tensor& target_mask) {
  require_same_shape("dice_score", pred_mask, target_mask);
  require_binary("dice_score", pred_mask);
  require_binary("dice_score", target_mask);
  const double a = pred_mask.values().sum();
  const double b = target_mask.values().sum();
  if (a + b == 0.0) return 1.0;
  return 2.0 * pred_mask.values().dot(target_mask.values()) / (a + b);
}

std::vector<double> dice_per_sample(const Tensor& logits, const Tensor& target) {
  require_same_shape("dice_per_sample", logits, target);
  const Index n = logits.dim(0);
  const Index per = logits.numel() / n;
  std::vector<double> out;
  out.reserve(static_cast<size_t>(n));
  for (Index s = 0; s < n; ++s) {
    Eigen::VectorXd pred =
        (logits.values().segment(s * per, per).array() > 0.0).cast<double>();
    out.push_back(dice_score(Tensor({per}, std::move(pred)),
                             Tensor({per}, target.values().segment(s * per, per))));
  }
  return out;
}

Tensor dice_loss(const Tensor& logits, const Tensor& target) {
  require_same_shape("dice_loss", logits, target);
  // Rank-4 tensors are (N,C,H,W) batches; anything else is one sample.
  const Index n = logits.rank() == 4 ? logits.dim(0) : 1;
  Tensor p = reshape(sigmoid(logits), {n, logits.numel() / n});
  Tensor t = reshape(target, {n, target.numel() / n});
  Tensor overlap = sum_inner(mul(p, t), 1);
  Tensor total = add(sum_inner(p, 1), sum_inner(t, 1));
  Tensor dice = div(add_scalar(scale(overlap, 2.0), 1.0), add_scalar(total, 1.0));
  return add_scalar(scale(sum(dice), -1.0 / static_cast<double>(n)), 1.0);
}

}  // namespace privseg
