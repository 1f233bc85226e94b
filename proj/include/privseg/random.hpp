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

#ifndef PRIVSEG_RANDOM_HPP_
#define PRIVSEG_RANDOM_HPP_

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <utility>

#include <Eigen/Core>

// Counter-based randomness. Every draw in the project is a pure function of
// (seed, stream, counter), so results never depend on thread scheduling or on
// the standard library's distribution implementations.
//
// Not a cryptographic source: DP noise drawn here is reproducible by anyone
// holding the seed and must not be used to protect real data.

namespace privseg {

// Philox4x32 with 10 rounds (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;
  static Counter generate(Counter counter, Key key);
};

// SplitMix64 finalizer; used to fold identifiers into stream ids.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_stream(std::initializer_list<std::uint64_t> ids);
// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t hash_name(std::string_view name);

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller over consecutive Philox blocks.
  double normal();
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  Philox4x32::Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Philox4x32::Counter buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Standard normal for coordinate `index` of the noise vector identified by
// (seed, stream). Coordinates 2k and 2k+1 are the Box-Muller pair of block k.
double gaussian_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);
Eigen::VectorXd gaussian_vector(std::uint64_t seed, std::uint64_t stream,
                                Eigen::Index n);

}  // namespace privseg

#endif  // PRIVSEG_RANDOM_HPP_
