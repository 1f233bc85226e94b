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

#ifndef PRIVSEG_OPS_HPP_
#define PRIVSEG_OPS_HPP_

#include <vector>

#include "privseg/tensor.hpp"

// Differentiable primitives. Every backward rule is written in terms of these
// same primitives, so gradients produced under build_graph are differentiable
// to any order.
//
// Broadcasting is limited to a one-element operand against a full tensor in
// the binary elementwise ops, and to the explicit per-channel ops below.

namespace privseg {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor neg(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
// Elementwise x^exponent for a constant exponent.
Tensor pow(const Tensor& x, double exponent);

// Full reductions to a rank-0 tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Sums over all axes >= `axis`, keeping shape[0:axis]. sum_inner(x, 0) is the
// full sum; on NCHW, sum_inner(x, 2) gives per-(sample, channel) sums.
Tensor sum_inner(const Tensor& x, int axis);
// Inverse broadcast of sum_inner: repeats x over trailing axes of `shape`.
Tensor expand_inner(const Tensor& x, const Shape& shape);

// 2-D only.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor reshape(const Tensor& x, Shape shape);

// Channel axis (1) of NCHW tensors.
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, Index begin, Index end);

// Zero padding / cropping of the two spatial axes of NCHW.
Tensor pad2d(const Tensor& x, Index pad);
Tensor crop2d(const Tensor& x, Index pad);

// Per-channel affine pieces: x (N,C,H,W) with a (C) vector.
Tensor add_channel(const Tensor& x, const Tensor& bias);
Tensor mul_channel(const Tensor& x, const Tensor& gain);
Tensor channel_sum(const Tensor& x);
Tensor channel_expand(const Tensor& v, const Shape& shape);

struct ConvParams {
  Index stride = 1;
  Index pad = 0;
  Index dilation = 1;
  Index groups = 1;
};

// x (N,Cin,H,W), weight (Cout,Cin/groups,kh,kw) -> (N,Cout,Ho,Wo).
Tensor conv2d(const Tensor& x, const Tensor& weight, const ConvParams& p);
// Adjoint of conv2d in its input: maps a (N,Cout,Ho,Wo) tensor back to
// x_shape. This is the transposed convolution.
Tensor conv2d_input_grad(const Tensor& grad_y, const Tensor& weight,
                         const ConvParams& p, const Shape& x_shape);
// Adjoint of conv2d in its weight.
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_y,
                          const ConvParams& p, const Shape& weight_shape);
// Learned upsampling: x (N,Cin,H,W), weight (Cin,Cout,k,k), output spatial
// extent (H-1)*stride + k.
Tensor transposed_conv2d(const Tensor& x, const Tensor& weight, Index stride);

Shape conv2d_output_shape(const Shape& x, const Shape& weight,
                          const ConvParams& p);

// Multiply-accumulate tally of conv2d / transposed_conv2d / matmul forward
// evaluations on the current thread while alive.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  Index total() const { return total_; }
  void add(Index macs) { total_ += macs; }

 private:
  Index total_ = 0;
  MacCounter* previous_;
};

namespace detail {
void count_macs(Index macs);
}  // namespace detail

}  // namespace privseg

#endif  // PRIVSEG_OPS_HPP_
