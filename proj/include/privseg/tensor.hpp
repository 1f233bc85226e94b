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

#ifndef PRIVSEG_TENSOR_HPP_
#define PRIVSEG_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace privseg {

using Index = std::int64_t;
using Shape = std::vector<Index>;

// Thrown when operands do not conform. The message names the op and the
// offending extents.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Misuse of the differentiation record (non-scalar seed, tensor not on the
// record, mutation of a recorded tensor).
class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

Index shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;

namespace detail {

// Computes the gradients of a node's inputs given the gradient flowing into
// its output. `needs[i]` is false for inputs whose gradient is not wanted;
// the rule may then return an undefined tensor in that slot.
using BackwardRule = std::function<std::vector<Tensor>(
    const Tensor& grad_out, const Tensor& out, const std::vector<bool>& needs)>;

struct Node {
  Shape shape;
  Eigen::VectorXd values;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Tensor> inputs;
  BackwardRule rule;
};

}  // namespace detail

// Dense row-major array of doubles. Copies share the underlying node, so a
// Tensor behaves like a handle to an immutable value plus its position in the
// differentiation record.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Eigen::VectorXd values, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::initializer_list<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  Index dim(int axis) const;
  Index numel() const { return values().size(); }

  const Eigen::VectorXd& values() const;
  double item() const;
  double operator[](Index i) const { return values()[i]; }

  // Leaves only: flags the tensor as a differentiation variable.
  Tensor& set_requires_grad(bool flag);
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_ && !node_->rule; }
  const char* op() const { return node_ ? node_->op : "undefined"; }

  // Same values, no history, no grad requirement.
  Tensor detached() const;

  // Element access for building values in place. Refused once the tensor
  // participates in a recorded computation.
  Eigen::VectorXd& mutable_values();

  // Identity of the underlying node; two handles of one value compare equal.
  const detail::Node* id() const { return node_.get(); }

 private:
  friend Tensor make_recorded(const char*, Shape, Eigen::VectorXd,
                              std::vector<Tensor>, detail::BackwardRule);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

// Builds the output of a primitive. The result is recorded (keeps its inputs
// and backward rule) only if grad mode is on and some input requires grad.
Tensor make_recorded(const char* op, Shape shape, Eigen::VectorXd values,
                     std::vector<Tensor> inputs, detail::BackwardRule rule);

// Per-thread recording switch.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Reverse-mode differentiation of a one-element tensor. With build_graph the
// returned gradients are recorded themselves and can be differentiated again.
std::vector<Tensor> backward(const Tensor& scalar, std::span<const Tensor> wrt,
                             bool build_graph = false);
Tensor backward(const Tensor& scalar, const Tensor& wrt,
                bool build_graph = false);

}  // namespace privseg

#endif  // PRIVSEG_TENSOR_HPP_
