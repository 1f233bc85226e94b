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

#ifndef PRIVSEG_TESTS_PRIMITIVE_CASES_HPP_
#define PRIVSEG_TESTS_PRIMITIVE_CASES_HPP_

#include <functional>
#include <string>
#include <vector>

#include "privseg/ops.hpp"
#include "test_util.hpp"

namespace privseg::testing {

// One entry per primitive: a scalar function of a single tensor argument.
struct PrimitiveCase {
  std::string name;
  Shape shape;
  std::function<Tensor(std::uint64_t)> point;
  std::function<Tensor(const Tensor&, std::uint64_t)> f;
};

inline Tensor weighted(const Tensor& y, std::uint64_t seed) {
  return sum(mul(y, random_tensor(y.shape(), seed ^ 0x5a5a)));
}

inline std::vector<PrimitiveCase> primitive_cases() {
  auto any = [](Shape s) { return [s](std::uint64_t seed) { return random_tensor(s, seed); }; };
  auto positive = [](Shape s) {
    return [s](std::uint64_t seed) { return random_tensor(s, seed, 0.5, 2.0); };
  };
  auto nonzero = [](Shape s) { return [s](std::uint64_t seed) { return away_from_zero(s, seed); }; };
  const Shape v{2, 3, 4, 4};
  return {
      {"add", v, any(v), [](const Tensor& x, auto s) { return weighted(add(x, random_tensor(x.shape(), s + 1)), s); }},
      {"add_rhs_scalar", {}, any({}), [](const Tensor& x, auto s) { return weighted(add(random_tensor({3, 2}, s + 1), x), s); }},
      {"sub", v, any(v), [](const Tensor& x, auto s) { return weighted(sub(random_tensor(x.shape(), s + 1), x), s); }},
      {"mul", v, any(v), [](const Tensor& x, auto s) { return weighted(mul(x, random_tensor(x.shape(), s + 1)), s); }},
      {"div_num", v, any(v), [](const Tensor& x, auto s) { return weighted(div(x, random_tensor(x.shape(), s + 1, 0.5, 2.0)), s); }},
      {"div_den", v, positive(v), [](const Tensor& x, auto s) { return weighted(div(random_tensor(x.shape(), s + 1), x), s); }},
      {"scale", v, any(v), [](const Tensor& x, auto s) { return weighted(scale(x, -1.7), s); }},
      {"add_scalar", v, any(v), [](const Tensor& x, auto s) { return weighted(add_scalar(x, 0.3), s); }},
      {"relu", v, nonzero(v), [](const Tensor& x, auto s) { return weighted(relu(x), s); }},
      {"sigmoid", v, any(v), [](const Tensor& x, auto s) { return weighted(sigmoid(x), s); }},
      {"exp", v, any(v), [](const Tensor& x, auto s) { return weighted(exp(x), s); }},
      {"log", v, positive(v), [](const Tensor& x, auto s) { return weighted(log(x), s); }},
      {"pow", v, positive(v), [](const Tensor& x, auto s) { return weighted(pow(x, -0.5), s); }},
      {"sum", v, any(v), [](const Tensor& x, auto) { return mul(sum(x), sum(x)); }},
      {"mean", v, any(v), [](const Tensor& x, auto) { return exp(mean(x)); }},
      {"sum_inner", v, any(v), [](const Tensor& x, auto s) { return weighted(pow(sum_inner(x, 2), 2.0), s); }},
      {"expand_inner", {2, 3}, any({2, 3}), [](const Tensor& x, auto s) { return weighted(expand_inner(x, {2, 3, 5}), s); }},
      {"matmul_lhs", {3, 4}, any({3, 4}), [](const Tensor& x, auto s) { return weighted(matmul(x, random_tensor({4, 5}, s + 1)), s); }},
      {"matmul_rhs", {4, 5}, any({4, 5}), [](const Tensor& x, auto s) { return weighted(matmul(random_tensor({3, 4}, s + 1), x), s); }},
      {"transpose", {3, 4}, any({3, 4}), [](const Tensor& x, auto s) { return weighted(transpose(x), s); }},
      {"reshape", v, any(v), [](const Tensor& x, auto s) { return weighted(reshape(x, {6, 16}), s); }},
      {"concat", v, any(v), [](const Tensor& x, auto s) { return weighted(concat_channels({random_tensor({2, 1, 4, 4}, s), x, x}), s); }},
      {"slice", v, any(v), [](const Tensor& x, auto s) { return weighted(slice_channels(x, 1, 2), s); }},
      {"pad", v, any(v), [](const Tensor& x, auto s) { return weighted(pad2d(x, 2), s); }},
      {"crop", v, any(v), [](const Tensor& x, auto s) { return weighted(crop2d(x, 1), s); }},
      {"add_channel", {3}, any({3}), [](const Tensor& b, auto s) { return weighted(add_channel(random_tensor({2, 3, 4, 4}, s), b), s); }},
      {"mul_channel_x", v, any(v), [](const Tensor& x, auto s) { return weighted(mul_channel(x, random_tensor({3}, s + 1)), s); }},
      {"mul_channel_gain", {3}, any({3}), [](const Tensor& g, auto s) { return weighted(mul_channel(random_tensor({2, 3, 4, 4}, s), g), s); }},
      {"channel_sum", v, any(v), [](const Tensor& x, auto s) { return weighted(channel_sum(x), s); }},
      {"channel_expand", {3}, any({3}), [](const Tensor& b, auto s) { return weighted(channel_expand(b, {2, 3, 2, 2}), s); }},
      {"conv2d_x", v, any(v), [](const Tensor& x, auto s) {
         return weighted(conv2d(x, random_tensor({4, 3, 3, 3}, s + 1), {.stride = 2, .pad = 1}), s); }},
      {"conv2d_w", {4, 3, 3, 3}, any({4, 3, 3, 3}), [](const Tensor& w, auto s) {
         return weighted(conv2d(random_tensor({2, 3, 6, 6}, s + 1), w, {.pad = 2, .dilation = 2}), s); }},
      {"conv2d_depthwise", {3, 1, 3, 3}, any({3, 1, 3, 3}), [](const Tensor& w, auto s) {
         return weighted(conv2d(random_tensor({2, 3, 6, 6}, s + 1), w, {.pad = 1, .groups = 3}), s); }},
      {"conv2d_pointwise", {5, 3, 1, 1}, any({5, 3, 1, 1}), [](const Tensor& w, auto s) {
         return weighted(conv2d(random_tensor({2, 3, 4, 4}, s + 1), w, {}), s); }},
      {"transposed_conv_x", {1, 3, 3, 3}, any({1, 3, 3, 3}), [](const Tensor& x, auto s) {
         return weighted(transposed_conv2d(x, random_tensor({3, 2, 2, 2}, s + 1), 2), s); }},
      {"transposed_conv_w", {3, 2, 2, 2}, any({3, 2, 2, 2}), [](const Tensor& w, auto s) {
         return weighted(transposed_conv2d(random_tensor({2, 3, 3, 3}, s + 1), w, 2), s); }},
      {"conv2d_weight_grad_x", {1, 2, 5, 5}, any({1, 2, 5, 5}), [](const Tensor& x, auto s) {
         return weighted(conv2d_weight_grad(x, random_tensor({1, 3, 5, 5}, s + 1), {.pad = 1}, {3, 2, 3, 3}), s); }},
  };
}

}  // namespace privseg::testing

#endif  // PRIVSEG_TESTS_PRIMITIVE_CASES_HPP_
