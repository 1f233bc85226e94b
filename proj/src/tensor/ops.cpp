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

#include "privseg/ops.hpp"

#include <cmath>
#include <utility>

#include <fmt/format.h>

namespace privseg {
namespace {

using Eigen::VectorXd;
using Needs = std::vector<bool>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

thread_local MacCounter* t_mac_counter = nullptr;

// Result shape of a binary elementwise op under one-element broadcasting.
Shape broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1 && (a.numel() != 1 || a.rank() >= b.rank())) {
    return a.shape();
  }
  if (a.numel() == 1) return b.shape();
  throw ShapeError(fmt::format("{}: cannot broadcast {} with {}", op,
                               shape_string(a.shape()),
                               shape_string(b.shape())));
}

// Brings a broadcast gradient back to the operand's shape.
Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  return reshape(sum(g), shape);
}

// Elementwise binary kernel with one-element broadcasting.
template <typename F>
VectorXd zip(const Tensor& a, const Tensor& b, Index n, F f) {
  const VectorXd& av = a.values();
  const VectorXd& bv = b.values();
  if (av.size() == n && bv.size() == n) return f(av.array(), bv.array()).matrix();
  if (av.size() == n) {
    return f(av.array(), Eigen::ArrayXd::Constant(n, bv[0])).matrix();
  }
  if (bv.size() == n) {
    return f(Eigen::ArrayXd::Constant(n, av[0]), bv.array()).matrix();
  }
  return f(Eigen::ArrayXd::Constant(n, av[0]),
           Eigen::ArrayXd::Constant(n, bv[0]))
      .matrix();
}

void require_rank(const char* op, const Tensor& x, int rank) {
  if (x.rank() != rank) {
    throw ShapeError(fmt::format("{}: expected rank {}, got shape {}", op, rank,
                                 shape_string(x.shape())));
  }
}

}  // namespace

MacCounter::MacCounter() : previous_(t_mac_counter) { t_mac_counter = this; }
MacCounter::~MacCounter() { t_mac_counter = previous_; }

namespace detail {
void count_macs(Index macs) {
  if (t_mac_counter != nullptr) t_mac_counter->add(macs);
}
}  // namespace detail

Tensor add(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("add", a, b);
  const Index n = shape_numel(shape);
  VectorXd v = zip(a, b, n, [](const auto& x, const auto& y) { return x + y; });
  return make_recorded(
      "add", std::move(shape), std::move(v), {a, b},
      [as = a.shape(), bs = b.shape()](const Tensor& g, const Tensor&,
                                       const Needs& needs) {
        return std::vector<Tensor>{needs[0] ? reduce_to(g, as) : Tensor(),
                                   needs[1] ? reduce_to(g, bs) : Tensor()};
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("sub", a, b);
  const Index n = shape_numel(shape);
  VectorXd v = zip(a, b, n, [](const auto& x, const auto& y) { return x - y; });
  return make_recorded(
      "sub", std::move(shape), std::move(v), {a, b},
      [as = a.shape(), bs = b.shape()](const Tensor& g, const Tensor&,
                                       const Needs& needs) {
        return std::vector<Tensor>{needs[0] ? reduce_to(g, as) : Tensor(),
                                   needs[1] ? reduce_to(neg(g), bs) : Tensor()};
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("mul", a, b);
  const Index n = shape_numel(shape);
  VectorXd v = zip(a, b, n, [](const auto& x, const auto& y) { return x * y; });
  return make_recorded(
      "mul", std::move(shape), std::move(v), {a, b},
      [a, b](const Tensor& g, const Tensor&, const Needs& needs) {
        return std::vector<Tensor>{
            needs[0] ? reduce_to(mul(g, b), a.shape()) : Tensor(),
            needs[1] ? reduce_to(mul(g, a), b.shape()) : Tensor()};
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("div", a, b);
  const Index n = shape_numel(shape);
  VectorXd v = zip(a, b, n, [](const auto& x, const auto& y) { return x / y; });
  return make_recorded(
      "div", std::move(shape), std::move(v), {a, b},
      [as = a.shape(), b](const Tensor& g, const Tensor& out,
                          const Needs& needs) {
        Tensor g_over_b = div(g, b);
        return std::vector<Tensor>{
            needs[0] ? reduce_to(g_over_b, as) : Tensor(),
            needs[1] ? reduce_to(neg(mul(g_over_b, out)), b.shape())
                     : Tensor()};
      });
}

Tensor scale(const Tensor& x, double factor) {
  return make_recorded("scale", x.shape(), x.values() * factor, {x},
                       [factor](const Tensor& g, const Tensor&, const Needs&) {
                         return std::vector<Tensor>{scale(g, factor)};
                       });
}

Tensor add_scalar(const Tensor& x, double offset) {
  VectorXd v = (x.values().array() + offset).matrix();
  return make_recorded("add_scalar", x.shape(), std::move(v), {x},
                       [](const Tensor& g, const Tensor&, const Needs&) {
                         return std::vector<Tensor>{g};
                       });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor relu(const Tensor& x) {
  VectorXd v = x.values().cwiseMax(0.0);
  return make_recorded(
      "relu", x.shape(), std::move(v), {x},
      [](const Tensor& g, const Tensor& out, const Needs&) {
        // The mask is piecewise constant, so it carries no graph.
        Tensor mask(out.shape(),
                    (out.values().array() > 0.0).cast<double>().matrix());
        return std::vector<Tensor>{mul(g, mask)};
      });
}

Tensor sigmoid(const Tensor& x) {
  VectorXd v = (1.0 / (1.0 + (-x.values().array()).exp())).matrix();
  return make_recorded(
      "sigmoid", x.shape(), std::move(v), {x},
      [](const Tensor& g, const Tensor& out, const Needs&) {
        Tensor slope = mul(out, add_scalar(neg(out), 1.0));
        return std::vector<Tensor>{mul(g, slope)};
      });
}

Tensor exp(const Tensor& x) {
  VectorXd v = x.values().array().exp().matrix();
  return make_recorded("exp", x.shape(), std::move(v), {x},
                       [](const Tensor& g, const Tensor& out, const Needs&) {
                         return std::vector<Tensor>{mul(g, out)};
                       });
}

Tensor log(const Tensor& x) {
  VectorXd v = x.values().array().log().matrix();
  return make_recorded("log", x.shape(), std::move(v), {x},
                       [x](const Tensor& g, const Tensor&, const Needs&) {
                         return std::vector<Tensor>{div(g, x)};
                       });
}

Tensor pow(const Tensor& x, double exponent) {
  VectorXd v = x.values().array().pow(exponent).matrix();
  return make_recorded(
      "pow", x.shape(), std::move(v), {x},
      [x, exponent](const Tensor& g, const Tensor&, const Needs&) {
        return std::vector<Tensor>{
            mul(g, scale(pow(x, exponent - 1.0), exponent))};
      });
}

Tensor sum(const Tensor& x) { return sum_inner(x, 0); }

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_inner(const Tensor& x, int axis) {
  if (axis < 0 || axis > x.rank()) {
    throw ShapeError(fmt::format("sum_inner: axis {} invalid for shape {}",
                                 axis, shape_string(x.shape())));
  }
  Shape outer(x.shape().begin(), x.shape().begin() + axis);
  const Index rows = shape_numel(outer);
  const Index inner = x.numel() / rows;
  Eigen::Map<const RowMat> m(x.values().data(), rows, inner);
  VectorXd v = m.rowwise().sum();
  return make_recorded("sum_inner", std::move(outer), std::move(v), {x},
                       [xs = x.shape()](const Tensor& g, const Tensor&,
                                        const Needs&) {
                         return std::vector<Tensor>{expand_inner(g, xs)};
                       });
}

Tensor expand_inner(const Tensor& x, const Shape& shape) {
  const int k = x.rank();
  if (k > static_cast<int>(shape.size()) ||
      !std::equal(x.shape().begin(), x.shape().end(), shape.begin())) {
    throw ShapeError(fmt::format("expand_inner: {} is not a prefix of {}",
                                 shape_string(x.shape()), shape_string(shape)));
  }
  const Index rows = x.numel();
  const Index inner = shape_numel(shape) / rows;
  RowMat m = x.values().replicate(1, inner);
  VectorXd v = Eigen::Map<const VectorXd>(m.data(), m.size());
  return make_recorded("expand_inner", shape, std::move(v), {x},
                       [k](const Tensor& g, const Tensor&, const Needs&) {
                         return std::vector<Tensor>{sum_inner(g, k)};
                       });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError(fmt::format("matmul: inner extents differ, {} vs {}",
                                 shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
  detail::count_macs(m * k * n);
  RowMat out = Eigen::Map<const RowMat>(a.values().data(), m, k) *
               Eigen::Map<const RowMat>(b.values().data(), k, n);
  VectorXd v = Eigen::Map<const VectorXd>(out.data(), out.size());
  return make_recorded("matmul", {m, n}, std::move(v), {a, b},
                       [a, b](const Tensor& g, const Tensor&, const Needs& needs) {
                         return std::vector<Tensor>{
                             needs[0] ? matmul(g, transpose(b)) : Tensor(),
                             needs[1] ? matmul(transpose(a), g) : Tensor()};
                       });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const Index m = a.dim(0), n = a.dim(1);
  RowMat t = Eigen::Map<const RowMat>(a.values().data(), m, n).transpose();
  VectorXd v = Eigen::Map<const VectorXd>(t.data(), t.size());
  return make_recorded("transpose", {n, m}, std::move(v), {a},
                       [](const Tensor& g, const Tensor&, const Needs&) {
                         return std::vector<Tensor>{transpose(g)};
                       });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError(fmt::format("reshape: cannot view {} as {}",
                                 shape_string(x.shape()), shape_string(shape)));
  }
  return make_recorded("reshape", std::move(shape), x.values(), {x},
                       [xs = x.shape()](const Tensor& g, const Tensor&,
                                        const Needs&) {
                         return std::vector<Tensor>{reshape(g, xs)};
                       });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  for (const Tensor& p : parts) require_rank("concat_channels", p, 4);
  const Index n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  Index channels = 0;
  for (const Tensor& p : parts) {
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
      throw ShapeError(fmt::format("concat_channels: {} does not match {}",
                                   shape_string(p.shape()),
                                   shape_string(parts[0].shape())));
    }
    channels += p.dim(1);
  }
  const Index plane = h * w;
  VectorXd v(n * channels * plane);
  std::vector<Index> offsets;
  for (Index s = 0; s < n; ++s) {
    Index c0 = 0;
    for (const Tensor& p : parts) {
      const Index len = p.dim(1) * plane;
      v.segment((s * channels + c0) * plane, len) = p.values().segment(s * len, len);
      c0 += p.dim(1);
    }
  }
  Index c0 = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(c0);
    c0 += p.dim(1);
  }
  return make_recorded(
      "concat_channels", {n, channels, h, w}, std::move(v), parts,
      [offsets, parts](const Tensor& g, const Tensor&, const Needs& needs) {
        std::vector<Tensor> grads(parts.size());
        for (size_t i = 0; i < parts.size(); ++i) {
          if (needs[i]) {
            grads[i] = slice_channels(g, offsets[i], offsets[i] + parts[i].dim(1));
          }
        }
        return grads;
      });
}

Tensor slice_channels(const Tensor& x, Index begin, Index end) {
  require_rank("slice_channels", x, 4);
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (begin < 0 || end > c || begin >= end) {
    throw ShapeError(fmt::format("slice_channels: [{}, {}) invalid for {}",
                                 begin, end, shape_string(x.shape())));
  }
  const Index plane = h * w, len = (end - begin) * plane;
  VectorXd v(n * len);
  for (Index s = 0; s < n; ++s) {
    v.segment(s * len, len) = x.values().segment((s * c + begin) * plane, len);
  }
  return make_recorded(
      "slice_channels", {n, end - begin, h, w}, std::move(v), {x},
      [n, c, h, w, begin, end](const Tensor& g, const Tensor&, const Needs&) {
        std::vector<Tensor> pieces;
        if (begin > 0) pieces.push_back(Tensor::zeros({n, begin, h, w}));
        pieces.push_back(g);
        if (end < c) pieces.push_back(Tensor::zeros({n, c - end, h, w}));
        return std::vector<Tensor>{pieces.size() == 1 ? g
                                                      : concat_channels(pieces)};
      });
}

Tensor pad2d(const Tensor& x, Index pad) {
  require_rank("pad2d", x, 4);
  if (pad < 0) throw ShapeError("pad2d: negative padding");
  const Index nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = h + 2 * pad, wo = w + 2 * pad;
  VectorXd v = VectorXd::Zero(nc * ho * wo);
  for (Index p = 0; p < nc; ++p) {
    for (Index y = 0; y < h; ++y) {
      v.segment(p * ho * wo + (y + pad) * wo + pad, w) =
          x.values().segment(p * h * w + y * w, w);
    }
  }
  return make_recorded("pad2d", {x.dim(0), x.dim(1), ho, wo}, std::move(v), {x},
                       [pad](const Tensor& g, const Tensor&, const Needs&) {
                         return std::vector<Tensor>{crop2d(g, pad)};
                       });
}

Tensor crop2d(const Tensor& x, Index pad) {
  require_rank("crop2d", x, 4);
  const Index nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = h - 2 * pad, wo = w - 2 * pad;
  if (pad < 0 || ho <= 0 || wo <= 0) {
    throw ShapeError(fmt::format("crop2d: cannot crop {} from {}", pad,
                                 shape_string(x.shape())));
  }
  VectorXd v(nc * ho * wo);
  for (Index p = 0; p < nc; ++p) {
    for (Index y = 0; y < ho; ++y) {
      v.segment(p * ho * wo + y * wo, wo) =
          x.values().segment(p * h * w + (y + pad) * w + pad, wo);
    }
  }
  return make_recorded("crop2d", {x.dim(0), x.dim(1), ho, wo}, std::move(v), {x},
                       [pad](const Tensor& g, const Tensor&, const Needs&) {
                         return std::vector<Tensor>{pad2d(g, pad)};
                       });
}

namespace {

void require_channel_vector(const char* op, const Tensor& x, const Tensor& v) {
  require_rank(op, x, 4);
  if (v.rank() != 1 || v.dim(0) != x.dim(1)) {
    throw ShapeError(fmt::format("{}: per-channel vector {} does not match {}",
                                 op, shape_string(v.shape()),
                                 shape_string(x.shape())));
  }
}

}  // namespace

Tensor add_channel(const Tensor& x, const Tensor& bias) {
  require_channel_vector("add_channel", x, bias);
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  VectorXd v = x.values();
  for (Index s = 0; s < n; ++s) {
    for (Index ch = 0; ch < c; ++ch) {
      v.segment((s * c + ch) * plane, plane).array() += bias.values()[ch];
    }
  }
  return make_recorded("add_channel", x.shape(), std::move(v), {x, bias},
                       [](const Tensor& g, const Tensor&, const Needs& needs) {
                         return std::vector<Tensor>{
                             g, needs[1] ? channel_sum(g) : Tensor()};
                       });
}

Tensor mul_channel(const Tensor& x, const Tensor& gain) {
  require_channel_vector("mul_channel", x, gain);
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  VectorXd v = x.values();
  for (Index s = 0; s < n; ++s) {
    for (Index ch = 0; ch < c; ++ch) {
      v.segment((s * c + ch) * plane, plane) *= gain.values()[ch];
    }
  }
  return make_recorded(
      "mul_channel", x.shape(), std::move(v), {x, gain},
      [x, gain](const Tensor& g, const Tensor&, const Needs& needs) {
        return std::vector<Tensor>{
            needs[0] ? mul_channel(g, gain) : Tensor(),
            needs[1] ? channel_sum(mul(g, x)) : Tensor()};
      });
}

Tensor channel_sum(const Tensor& x) {
  require_rank("channel_sum", x, 4);
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  VectorXd v = VectorXd::Zero(c);
  for (Index s = 0; s < n; ++s) {
    for (Index ch = 0; ch < c; ++ch) {
      v[ch] += x.values().segment((s * c + ch) * plane, plane).sum();
    }
  }
  return make_recorded("channel_sum", {c}, std::move(v), {x},
                       [xs = x.shape()](const Tensor& g, const Tensor&,
                                        const Needs&) {
                         return std::vector<Tensor>{channel_expand(g, xs)};
                       });
}

Tensor channel_expand(const Tensor& v, const Shape& shape) {
  if (shape.size() != 4 || v.rank() != 1 || v.dim(0) != shape[1]) {
    throw ShapeError(fmt::format("channel_expand: {} into {}",
                                 shape_string(v.shape()), shape_string(shape)));
  }
  const Index n = shape[0], c = shape[1], plane = shape[2] * shape[3];
  VectorXd out(n * c * plane);
  for (Index s = 0; s < n; ++s) {
    for (Index ch = 0; ch < c; ++ch) {
      out.segment((s * c + ch) * plane, plane).setConstant(v.values()[ch]);
    }
  }
  return make_recorded("channel_expand", shape, std::move(out), {v},
                       [](const Tensor& g, const Tensor&, const Needs&) {
                         return std::vector<Tensor>{channel_sum(g)};
                       });
}

}  // namespace privseg
