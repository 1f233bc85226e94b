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

#ifndef PRIVSEG_GRAD_CHECK_HPP_
#define PRIVSEG_GRAD_CHECK_HPP_

#include <functional>
#include <vector>

#include "privseg/tensor.hpp"

namespace privseg {

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  Index worst_index = -1;  // element with the largest relative error
  Eigen::VectorXd analytic;
  Eigen::VectorXd numeric;
};

using ScalarFunction = std::function<Tensor(const Tensor&)>;

// Compares backward() of `f` at `point` with central differences
// (f(x + h e_i) - f(x - h e_i)) / 2h over every element.
//
// Relative error per element is |a - n| / max(|a|, |n|, scale_floor). The
// floor keeps round-off on exactly-zero gradients from reading as a 100%
// error.
GradCheckReport grad_check(const ScalarFunction& f, const Tensor& point,
                           double step, double scale_floor = 1e-6);

// Same comparison restricted to the listed coordinates. `analytic` and
// `numeric` hold one entry per listed coordinate; worst_index refers to the
// flat element. Used for models too large to probe element by element.
GradCheckReport grad_check_at(const ScalarFunction& f, const Tensor& point,
                              double step, const std::vector<Index>& coords,
                              double scale_floor = 1e-6);

// Central-difference Jacobian-free derivative of an arbitrary scalar function
// of a flat vector; used by oracles that do not go through Tensor.
Eigen::VectorXd central_difference(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double step);

}  // namespace privseg

#endif  // PRIVSEG_GRAD_CHECK_HPP_
