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

#include "privseg/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

namespace privseg {
namespace {

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw FormatError("PTEN: truncated record");
  }
  U value = 0;
  for (size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(bytes[i]) << (8 * i);
  }
  return value;
}

}  // namespace

void write_pten(std::ostream& out, const Tensor& t) {
  if (t.rank() > 255) throw FormatError("PTEN: rank exceeds 255");
  out.write(kPtenMagic, 4);
  out.put(static_cast<char>(kPtenVersion));
  out.put(static_cast<char>(t.rank()));
  for (Index extent : t.shape()) {
    if (extent > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError("PTEN: extent exceeds u32");
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
  }
  for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

Tensor read_pten(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("PTEN: truncated header");
  if (std::memcmp(magic, kPtenMagic, 4) != 0) {
    throw FormatError("PTEN: bad magic");
  }
  const int version = in.get();
  if (version != kPtenVersion) {
    throw FormatError(fmt::format("PTEN: unsupported version {}", version));
  }
  const int rank = in.get();
  if (rank < 0) throw FormatError("PTEN: truncated header");
  Shape shape(static_cast<size_t>(rank));
  for (Index& extent : shape) {
    extent = get_le<std::uint32_t>(in);
    if (extent == 0) throw FormatError("PTEN: zero extent");
  }
  Eigen::VectorXd values(shape_numel(shape));
  for (Index i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<double>(get_le<std::uint64_t>(in));
  }
  return Tensor(std::move(shape), std::move(values));
}

std::string encode_pten(const Tensor& t) {
  std::ostringstream out(std::ios::binary);
  write_pten(out, t);
  return std::move(out).str();
}

Tensor decode_pten(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_pten(in);
}

void save_pten(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write {}", path.string()));
  write_pten(out, t);
}

Tensor load_pten(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot read {}", path.string()));
  return read_pten(in);
}

void save_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() < 2) throw FormatError("PGM: need at least 2 axes");
  const Index h = image.dim(-2), w = image.dim(-1);
  if (h * w != image.numel()) {
    throw FormatError(fmt::format("PGM: cannot flatten {} into one plane",
                                  shape_string(image.shape())));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write {}", path.string()));
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : image.values()) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * c))));
  }
}

}  // namespace privseg
