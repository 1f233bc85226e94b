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

#ifndef PRIVSEG_SERIALIZE_HPP_
#define PRIVSEG_SERIALIZE_HPP_

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "privseg/tensor.hpp"

// PTEN tensor records:
//   "PTEN" | u8 version (1) | u8 rank | rank x u32 LE extents |
//   product(extents) x f64 LE IEEE-754
//
// 8-bit binary PGM (P5) previews: pixel = round(255 * clamp(value, 0, 1)).

namespace privseg {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kPtenMagic[4] = {'P', 'T', 'E', 'N'};
inline constexpr unsigned char kPtenVersion = 0x01;

void write_pten(std::ostream& out, const Tensor& t);
Tensor read_pten(std::istream& in);
std::string encode_pten(const Tensor& t);
Tensor decode_pten(const std::string& bytes);

void save_pten(const std::filesystem::path& path, const Tensor& t);
Tensor load_pten(const std::filesystem::path& path);

// Writes the trailing two axes of `image` (any leading extents must be 1).
void save_pgm(const std::filesystem::path& path, const Tensor& image);

}  // namespace privseg

#endif  // PRIVSEG_SERIALIZE_HPP_
