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

#include "privseg/param_set.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "privseg/ops.hpp"
#include "privseg/serialize.hpp"

namespace privseg {

void ParamSet::add(std::string name, Tensor value) {
  if (name.empty() || name.find_first_of(",\n\r") != std::string::npos) {
    throw std::invalid_argument(fmt::format("invalid parameter name '{}'", name));
  }
  for (const Entry& e : entries_) {
    if (e.name == name) {
      throw std::invalid_argument(fmt::format("duplicate parameter '{}'", name));
    }
  }
  entries_.push_back({std::move(name), std::move(value)});
}

const Tensor& ParamSet::at(std::string_view name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw std::out_of_range(fmt::format("no parameter '{}'", name));
}

Index ParamSet::numel() const {
  Index n = 0;
  for (const Entry& e : entries_) n += e.value.numel();
  return n;
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(e.value);
  return out;
}

Eigen::VectorXd ParamSet::flatten() const {
  Eigen::VectorXd flat(numel());
  Index offset = 0;
  for (const Entry& e : entries_) {
    flat.segment(offset, e.value.numel()) = e.value.values();
    offset += e.value.numel();
  }
  return flat;
}

ParamSet ParamSet::unflatten(const Eigen::VectorXd& flat) const {
  if (flat.size() != numel()) {
    throw ShapeError(fmt::format("unflatten: {} values for {} parameters",
                                 flat.size(), numel()));
  }
  ParamSet out;
  out.entries_.reserve(entries_.size());
  Index offset = 0;
  for (const Entry& e : entries_) {
    const Index n = e.value.numel();
    out.entries_.push_back({e.name, Tensor(e.value.shape(), flat.segment(offset, n))});
    offset += n;
  }
  return out;
}

ParamSet ParamSet::unflatten(const Tensor& flat) const {
  if (flat.numel() != numel()) {
    throw ShapeError(fmt::format("unflatten: {} values for {} parameters",
                                 flat.numel(), numel()));
  }
  const Tensor column = reshape(flat, {1, flat.numel(), 1, 1});
  ParamSet out;
  out.entries_.reserve(entries_.size());
  Index offset = 0;
  for (const Entry& e : entries_) {
    const Index n = e.value.numel();
    out.entries_.push_back(
        {e.name, reshape(slice_channels(column, offset, offset + n), e.value.shape())});
    offset += n;
  }
  return out;
}

ParamSet ParamSet::as_leaves() const {
  ParamSet out;
  out.entries_.reserve(entries_.size());
  for (const Entry& e : entries_) {
    Tensor t(e.value.shape(), e.value.values());
    t.set_requires_grad(true);
    out.entries_.push_back({e.name, std::move(t)});
  }
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].value.shape() != other.entries_[i].value.shape()) {
      return false;
    }
  }
  return true;
}

void write_param_set(std::ostream& out, const ParamSet& params) {
  std::vector<std::string> records;
  records.reserve(params.size());
  for (const auto& e : params) records.push_back(encode_pten(e.value));
  out << "name,offset,length\n";
  size_t offset = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    out << params[i].name << ',' << offset << ',' << records[i].size() << '\n';
    offset += records[i].size();
  }
  out << '\n';
  for (const std::string& r : records) out.write(r.data(), static_cast<std::streamsize>(r.size()));
}

ParamSet read_param_set(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "name,offset,length") {
    throw FormatError("param set: missing manifest header");
  }
  struct Row {
    std::string name;
    size_t offset, length;
  };
  std::vector<Row> rows;
  while (std::getline(in, line) && !line.empty()) {
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw FormatError(fmt::format("param set: bad manifest row '{}'", line));
    }
    try {
      rows.push_back({line.substr(0, c1), std::stoull(line.substr(c1 + 1, c2 - c1 - 1)),
                      std::stoull(line.substr(c2 + 1))});
    } catch (const std::logic_error&) {
      throw FormatError(fmt::format("param set: bad manifest row '{}'", line));
    }
  }
  ParamSet params;
  size_t expected_offset = 0;
  for (const Row& r : rows) {
    if (r.offset != expected_offset) {
      throw FormatError(fmt::format("param set: '{}' at offset {}, expected {}",
                                    r.name, r.offset, expected_offset));
    }
    std::string bytes(r.length, '\0');
    if (!in.read(bytes.data(), static_cast<std::streamsize>(r.length))) {
      throw FormatError(fmt::format("param set: truncated record '{}'", r.name));
    }
    params.add(r.name, decode_pten(bytes));
    expected_offset += r.length;
  }
  return params;
}

void save_param_set(const std::filesystem::path& path, const ParamSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write {}", path.string()));
  write_param_set(out, params);
}

ParamSet load_param_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot read {}", path.string()));
  return read_param_set(in);
}

}  // namespace privseg
