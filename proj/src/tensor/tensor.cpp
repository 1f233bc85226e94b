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

#include "privseg/tensor.hpp"

#include <unordered_map>
#include <unordered_set>
#include <utility>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "privseg/ops.hpp"

namespace privseg {
namespace {

thread_local bool t_grad_enabled = true;

}  // namespace

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index extent : shape) {
    if (extent <= 0) {
      throw ShapeError(fmt::format("non-positive extent in shape {}",
                                   shape_string(shape)));
    }
    n *= extent;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  return fmt::format("({})", fmt::join(shape, ","));
}

Tensor::Tensor(Shape shape, Eigen::VectorXd values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError(fmt::format("tensor: shape {} holds {} elements, got {}",
                                 shape_string(shape), shape_numel(shape),
                                 values.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const Index n = shape_numel(shape);
  return Tensor(std::move(shape), Eigen::VectorXd::Constant(n, value));
}

Tensor Tensor::scalar(double value) { return full({}, value); }

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v[i++] = x;
  return Tensor(std::move(shape), std::move(v));
}

const Shape& Tensor::shape() const {
  if (!node_) throw AutodiffError("shape() of an undefined tensor");
  return node_->shape;
}

Index Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError(fmt::format("dim: axis {} out of range for shape {}",
                                 axis, shape_string(s)));
  }
  return s[static_cast<size_t>(axis)];
}

const Eigen::VectorXd& Tensor::values() const {
  if (!node_) throw AutodiffError("values() of an undefined tensor");
  return node_->values;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError(fmt::format("item: tensor of shape {} is not scalar",
                                 shape_string(shape())));
  }
  return values()[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) {
    throw AutodiffError("set_requires_grad is only valid on leaf tensors");
  }
  node_->requires_grad = flag;
  return *this;
}

Tensor Tensor::detached() const { return Tensor(shape(), values()); }

Eigen::VectorXd& Tensor::mutable_values() {
  if (!node_) throw AutodiffError("mutable_values() of an undefined tensor");
  if (node_->requires_grad) {
    throw AutodiffError(fmt::format(
        "refusing to mutate a recorded tensor (op {})", node_->op));
  }
  return node_->values;
}

Tensor make_recorded(const char* op, Shape shape, Eigen::VectorXd values,
                     std::vector<Tensor> inputs, detail::BackwardRule rule) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  if (t_grad_enabled) {
    bool any = false;
    for (const Tensor& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs = std::move(inputs);
      node->rule = std::move(rule);
    }
  }
  return Tensor(std::move(node));
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
  t_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace {

// Class granting the engine access to the node behind a handle.
struct NodeAccess {
  static const detail::Node& node(const Tensor& t) { return *t.id(); }
};

class RecordScope {
 public:
  explicit RecordScope(bool on) : previous_(t_grad_enabled) {
    t_grad_enabled = on;
  }
  ~RecordScope() { t_grad_enabled = previous_; }

 private:
  bool previous_;
};

}  // namespace

std::vector<Tensor> backward(const Tensor& scalar, std::span<const Tensor> wrt,
                             bool build_graph) {
  if (!scalar.defined() || scalar.numel() != 1) {
    throw AutodiffError(fmt::format(
        "backward: seed must hold exactly one element, got shape {}",
        scalar.defined() ? shape_string(scalar.shape()) : "undefined"));
  }
  for (const Tensor& w : wrt) {
    if (!w.defined() || !w.requires_grad()) {
      throw AutodiffError("backward: wrt tensor is not on the record");
    }
  }
  if (!scalar.requires_grad()) {
    throw AutodiffError("backward: wrt tensor is not on the record");
  }

  // Topological order over recorded nodes (inputs before consumers).
  std::vector<Tensor> order;
  std::unordered_set<const detail::Node*> visited;
  {
    std::vector<std::pair<Tensor, size_t>> stack;
    stack.emplace_back(scalar, 0);
    visited.insert(scalar.id());
    while (!stack.empty()) {
      auto& [t, next] = stack.back();
      const auto& inputs = NodeAccess::node(t).inputs;
      if (next < inputs.size()) {
        const Tensor& in = inputs[next++];
        if (in.requires_grad() && visited.insert(in.id()).second) {
          stack.emplace_back(in, 0);
        }
      } else {
        order.push_back(t);
        stack.pop_back();
      }
    }
  }

  std::unordered_set<const detail::Node*> targets;
  for (const Tensor& w : wrt) {
    if (!visited.contains(w.id())) {
      throw AutodiffError(fmt::format(
          "backward: wrt tensor of shape {} is not on the record of the seed",
          shape_string(w.shape())));
    }
    targets.insert(w.id());
  }

  // A node needs a gradient if some target is reachable through its inputs.
  std::unordered_set<const detail::Node*> needed;
  for (const Tensor& t : order) {
    bool need = targets.contains(t.id());
    for (const Tensor& in : NodeAccess::node(t).inputs) {
      need = need || needed.contains(in.id());
    }
    if (need) needed.insert(t.id());
  }

  RecordScope scope(build_graph);
  std::unordered_map<const detail::Node*, Tensor> grads;
  grads.emplace(scalar.id(), Tensor::full(scalar.shape(), 1.0));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& t = *it;
    const detail::Node& node = NodeAccess::node(t);
    if (!node.rule || !needed.contains(t.id())) continue;
    auto found = grads.find(t.id());
    if (found == grads.end()) continue;
    const Tensor grad_out = found->second;
    std::vector<bool> needs(node.inputs.size());
    bool any = false;
    for (size_t i = 0; i < node.inputs.size(); ++i) {
      needs[i] = node.inputs[i].requires_grad() &&
                 needed.contains(node.inputs[i].id());
      any = any || needs[i];
    }
    if (!any) continue;
    std::vector<Tensor> in_grads = node.rule(grad_out, t, needs);
    for (size_t i = 0; i < node.inputs.size(); ++i) {
      if (!needs[i] || !in_grads[i].defined()) continue;
      const Tensor& in = node.inputs[i];
      if (in_grads[i].shape() != in.shape()) {
        throw ShapeError(fmt::format(
            "backward rule of {} produced gradient {} for input {}", node.op,
            shape_string(in_grads[i].shape()), shape_string(in.shape())));
      }
      auto slot = grads.find(in.id());
      if (slot == grads.end()) {
        grads.emplace(in.id(), std::move(in_grads[i]));
      } else {
        slot->second = add(slot->second, in_grads[i]);
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    auto found = grads.find(w.id());
    out.push_back(found == grads.end() ? Tensor::zeros(w.shape())
                                       : found->second);
  }
  return out;
}

Tensor backward(const Tensor& scalar, const Tensor& wrt, bool build_graph) {
  return backward(scalar, std::span<const Tensor>(&wrt, 1), build_graph)[0];
}

}  // namespace privseg
