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

#ifndef PRIVSEG_PARAM_SET_HPP_
#define PRIVSEG_PARAM_SET_HPP_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "privseg/tensor.hpp"

namespace privseg {

// Named, ordered model parameters. Order is insertion order and is the
// flattening order used everywhere (DP-SGD, aggregation, inversion).
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  void add(std::string name, Tensor value);

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Entry& operator[](size_t i) const { return entries_[i]; }
  const Tensor& at(std::string_view name) const;
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  Index numel() const;
  std::vector<Tensor> tensors() const;

  Eigen::VectorXd flatten() const;
  // New set with this set's names and shapes holding `flat`.
  ParamSet unflatten(const Eigen::VectorXd& flat) const;
  // As above but differentiable: each entry is a recorded slice of `flat`.
  ParamSet unflatten(const Tensor& flat) const;
  // Same values as fresh leaves with requires_grad set.
  ParamSet as_leaves() const;

  bool same_layout(const ParamSet& other) const;

 private:
  std::vector<Entry> entries_;
};

// On-disk form: a UTF-8 CSV manifest
//   name,offset,length
//   <name>,<byte offset into blob>,<byte length>
//   ...
// terminated by an empty line, followed by the blob of concatenated PTEN
// records in manifest order.
void write_param_set(std::ostream& out, const ParamSet& params);
ParamSet read_param_set(std::istream& in);
void save_param_set(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_param_set(const std::filesystem::path& path);

}  // namespace privseg

#endif  // PRIVSEG_PARAM_SET_HPP_
