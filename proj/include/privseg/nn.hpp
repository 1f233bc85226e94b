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

#ifndef PRIVSEG_NN_HPP_
#define PRIVSEG_NN_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "privseg/ops.hpp"
#include "privseg/param_set.hpp"
#include "privseg/tensor.hpp"

namespace privseg {

// Encoder block families. Each keeps the defining block of a reference
// backbone at lite scale:
//   plain                conv3x3 + norm + relu              (VGG)
//   residual             two-conv basic block + identity    (ResNet)
//   depthwise_separable  1x1 expand, depthwise 3x3, 1x1 project, identity
//                                                            (MobileNet V2)
//   dilated              conv stack at dilation 1, 2, 4, constant width
//                                                            (atrous nets)
enum class BackboneStyle { kPlain, kResidual, kDepthwiseSeparable, kDilated };

inline constexpr std::array<BackboneStyle, 4> kAllBackbones = {
    BackboneStyle::kPlain, BackboneStyle::kResidual,
    BackboneStyle::kDepthwiseSeparable, BackboneStyle::kDilated};

// kUNet is the segmentation network. kSingleConv is a one-hidden-conv
// network (conv kxk + relu + 1x1 head) used as the small inversion target.
enum class ModelFamily { kUNet, kSingleConv };

std::string_view to_string(BackboneStyle style);
std::string_view to_string(ModelFamily family);
BackboneStyle parse_backbone(std::string_view name);
ModelFamily parse_family(std::string_view name);

struct ModelSpec {
  ModelFamily family = ModelFamily::kUNet;
  BackboneStyle backbone = BackboneStyle::kPlain;
  int base_channels = 8;
  int depth = 3;
  int in_channels = 1;
  int out_channels = 1;
  // Hidden conv kernel of kSingleConv (odd, "same" padding); the U-Net ignores it.
  int kernel_size = 3;

  void validate() const;
  // Spatial extents must be multiples of this.
  Index input_divisor() const;
  bool operator==(const ModelSpec&) const = default;
};

// Architecture plus its initial parameters. The forward function is pure:
// it reads parameters only from the ParamSet it is given, so one Model
// serves any number of replicas.
class Model {
 public:
  const ModelSpec& spec() const { return spec_; }
  const ParamSet& initial_params() const { return params_; }

  // (N, in, H, W) -> (N, out, H, W) logits.
  Tensor forward(const ParamSet& params, const Tensor& x) const;
  Tensor forward(const Tensor& x) const { return forward(params_, x); }

 private:
  friend Model build_model(const ModelSpec& spec, std::uint64_t seed);
  ModelSpec spec_;
  ParamSet params_;
};

// Deterministic in `seed`. Conv/upconv weights ~ U(-b, b), b = sqrt(6 /
// fan_in); biases 0; norm gains 1 and biases 0.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

// Per-(sample, channel) normalization with biased variance, then per-channel
// affine. Holds no state, so it is safe under DP training.
Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                     double eps = 1e-5);

Index count_params(const Model& model);
// Multiply-accumulates of one forward pass at `input_shape`: k*k*Cin*Cout*
// Ho*Wo/groups per convolution (transposed ones counted at their input
// resolution) plus M*K*N per matmul. Normalization and activations excluded.
Index count_macs(const Model& model, const Shape& input_shape);

// 2|A n B| / (|A| + |B|), 1 when both are empty. Inputs must be 0/1.
double dice_score(const Tensor& pred_mask, const Tensor& target_mask);
// Per-sample Dice of thresholded logits (logit > 0), one entry per sample.
std::vector<double> dice_per_sample(const Tensor& logits, const Tensor& target);

// Mean over samples of 1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1) with
// p = sigmoid(logits). Per-sample terms keep the batch loss a plain average,
// so batch gradients are means of per-sample gradients.
Tensor dice_loss(const Tensor& logits, const Tensor& target);

}  // namespace privseg

#endif  // PRIVSEG_NN_HPP_
