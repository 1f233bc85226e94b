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

#include "privseg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace privseg {

Eigen::VectorXd central_difference(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite-difference step must be > 0");
  Eigen::VectorXd out(x.size());
  Eigen::VectorXd probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double plus = f(probe);
    probe[i] = x[i] - step;
    const double minus = f(probe);
    probe[i] = x[i];
    out[i] = (plus - minus) / (2.0 * step);
  }
  return out;
}

GradCheckReport grad_check_at(const ScalarFunction& f, const Tensor& point,
                              double step, const std::vector<Index>& coords,
                              double scale_floor) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be > 0");
  for (Index c : coords) {
    if (c < 0 || c >= point.numel()) {
      throw std::out_of_range(fmt::format("grad_check: coordinate {} outside {}", c,
                                          shape_string(point.shape())));
    }
  }

  Tensor x(point.shape(), point.values());
  x.set_requires_grad(true);
  const Tensor y = f(x);
  if (y.numel() != 1) {
    throw AutodiffError(fmt::format("grad_check: function output {} is not scalar",
                                    shape_string(y.shape())));
  }
  const Eigen::VectorXd full = y.requires_grad() ? backward(y, x).values()
                                                 : Eigen::VectorXd::Zero(x.numel());

  const auto n_coords = static_cast<Index>(coords.size());
  GradCheckReport report;
  report.analytic.resize(n_coords);
  report.numeric.resize(n_coords);
  // Probe points are plain constants, so nothing is recorded unless `f`
  // itself differentiates (as Hessian-vector checks do).
  Eigen::VectorXd probe = point.values();
  auto eval = [&] { return f(Tensor(point.shape(), probe)).item(); };
  for (Index k = 0; k < n_coords; ++k) {
    const Index i = coords[static_cast<size_t>(k)];
    probe[i] = point.values()[i] + step;
    const double plus = eval();
    probe[i] = point.values()[i] - step;
    const double minus = eval();
    probe[i] = point.values()[i];
    const double a = full[i], n = (plus - minus) / (2.0 * step);
    report.analytic[k] = a;
    report.numeric[k] = n;
    const double abs_err = std::abs(a - n);
    const double rel_err = abs_err / std::max({std::abs(a), std::abs(n), scale_floor});
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    if (rel_err > report.max_rel_err || report.worst_index < 0) {
      report.max_rel_err = std::max(report.max_rel_err, rel_err);
      report.worst_index = i;
    }
  }
  return report;
}

GradCheckReport grad_check(const ScalarFunction& f, const Tensor& point,
                           double step, double scale_floor) {
  std::vector<Index> all(static_cast<size_t>(point.numel()));
  for (Index i = 0; i < point.numel(); ++i) all[static_cast<size_t>(i)] = i;
  return grad_check_at(f, point, step, all, scale_floor);
}

}  // namespace privseg
