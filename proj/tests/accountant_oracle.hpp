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

#ifndef PRIVSEG_TESTS_ACCOUNTANT_ORACLE_HPP_
#define PRIVSEG_TESTS_ACCOUNTANT_ORACLE_HPP_

#include <cmath>
#include <limits>

// Reference accountant written without the library: plain long-double
// summation of the binomial mixture, binomial coefficients by running
// product, and orders whose sum overflows are skipped.
namespace privseg::oracle {

inline long double rdp_long(double q, double sigma, int alpha) {
  long double total = 0.0L;
  long double binom = 1.0L;
  for (int k = 0; k <= alpha; ++k) {
    if (k > 0) binom = binom * (alpha - k + 1) / k;
    const long double term = binom * std::pow(1.0L - q, static_cast<long double>(alpha - k)) *
                             std::pow(static_cast<long double>(q), static_cast<long double>(k)) *
                             std::exp(static_cast<long double>(k) * (k - 1) /
                                      (2.0L * sigma * sigma));
    total += term;
  }
  return std::log(total) / (alpha - 1);
}

inline double rdp(double q, double sigma, int alpha) {
  return static_cast<double>(rdp_long(q, sigma, alpha));
}

inline double epsilon(double q, double sigma, long steps, double delta) {
  long double best = std::numeric_limits<long double>::infinity();
  auto consider = [&](int alpha) {
    const long double r = rdp_long(q, sigma, alpha);
    if (!std::isfinite(r)) return;
    const long double eps = steps * r + std::log(1.0L / delta) / (alpha - 1);
    if (eps < best) best = eps;
  };
  for (int alpha = 2; alpha <= 64; ++alpha) consider(alpha);
  consider(128);
  consider(256);
  return static_cast<double>(best);
}

}  // namespace privseg::oracle

#endif  // PRIVSEG_TESTS_ACCOUNTANT_ORACLE_HPP_
