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

#include "privseg/random.hpp"

#include <cmath>
#include <numbers>

namespace privseg {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53;
constexpr std::uint32_t kMul1 = 0xCD9E8D57;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

Philox4x32::Counter block_for(const Philox4x32::Key& key, std::uint64_t stream,
                              std::uint64_t block) {
  return Philox4x32::generate(
      {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
       static_cast<std::uint32_t>(stream),
       static_cast<std::uint32_t>(stream >> 32)},
      key);
}

Philox4x32::Key key_for(std::uint64_t seed) {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

// 53-bit uniform on (0, 1]; keeps log() finite in Box-Muller.
inline double open_unit(std::uint64_t bits) {
  return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

inline std::uint64_t join(std::uint32_t lo, std::uint32_t hi) {
  return static_cast<std::uint64_t>(hi) << 32 | lo;
}

inline std::pair<double, double> box_muller(const Philox4x32::Counter& c) {
  const double u1 = open_unit(join(c[0], c[1]));
  const double u2 = open_unit(join(c[2], c[3]));
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

}  // namespace

Philox4x32::Counter Philox4x32::generate(Counter ctr, Key key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_stream(std::initializer_list<std::uint64_t> ids) {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (std::uint64_t id : ids) h = mix64(h ^ mix64(id));
  return h;
}

std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream)
    : key_(key_for(seed)), stream_(stream) {}

std::uint64_t RandomStream::next_u64() {
  if (used_ > 2) {
    buffer_ = block_for(key_, stream_, block_++);
    used_ = 0;
  }
  const std::uint64_t v = join(buffer_[used_], buffer_[used_ + 1]);
  used_ += 2;
  return v;
}

double RandomStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const std::uint64_t a = next_u64();
  const std::uint64_t b = next_u64();
  const auto [z0, z1] = box_muller(
      {static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
       static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)});
  spare_ = z1;
  has_spare_ = true;
  return z0;
}

std::uint64_t RandomStream::below(std::uint64_t n) {
  // Rejection keeps the result exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double gaussian_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const auto [z0, z1] = box_muller(block_for(key_for(seed), stream, index / 2));
  return index % 2 == 0 ? z0 : z1;
}

Eigen::VectorXd gaussian_vector(std::uint64_t seed, std::uint64_t stream,
                                Eigen::Index n) {
  Eigen::VectorXd out(n);
  const auto key = key_for(seed);
  for (Eigen::Index i = 0; i < n; i += 2) {
    const auto [z0, z1] = box_muller(block_for(key, stream, static_cast<std::uint64_t>(i / 2)));
    out[i] = z0;
    if (i + 1 < n) out[i + 1] = z1;
  }
  return out;
}

}  // namespace privseg
