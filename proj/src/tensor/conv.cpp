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

// conv2d and its two adjoints share one im2col geometry. Each is the partial
// derivative of the trilinear form <gy, conv(x, w)> in one argument, so the
// backward rule of any of them is expressed with the other two.

#include <utility>

#include <fmt/format.h>

#include "privseg/ops.hpp"

namespace privseg {
namespace {

using Eigen::VectorXd;
using Needs = std::vector<bool>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Geometry {
  Index n, cin, h, w;
  Index cout, kh, kw;
  Index ho, wo;
  Index stride, pad, dilation, groups;
  Index cin_g, cout_g;
  Index k() const { return cin_g * kh * kw; }
  Index p() const { return ho * wo; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && stride == 1 && pad == 0;
  }
};

Geometry make_geometry(const char* op, const Shape& x, const Shape& weight,
                       const ConvParams& p) {
  if (x.size() != 4 || weight.size() != 4) {
    throw ShapeError(fmt::format("{}: expected NCHW input and OIHW weight, got "
                                 "{} and {}",
                                 op, shape_string(x), shape_string(weight)));
  }
  if (p.stride < 1 || p.pad < 0 || p.dilation < 1 || p.groups < 1) {
    throw ShapeError(fmt::format("{}: invalid stride/pad/dilation/groups "
                                 "{}/{}/{}/{}",
                                 op, p.stride, p.pad, p.dilation, p.groups));
  }
  Geometry g{};
  g.n = x[0];
  g.cin = x[1];
  g.h = x[2];
  g.w = x[3];
  g.cout = weight[0];
  g.kh = weight[2];
  g.kw = weight[3];
  g.stride = p.stride;
  g.pad = p.pad;
  g.dilation = p.dilation;
  g.groups = p.groups;
  if (g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw ShapeError(fmt::format("{}: channels {}->{} not divisible by {} groups",
                                 op, g.cin, g.cout, g.groups));
  }
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  if (weight[1] != g.cin_g) {
    throw ShapeError(fmt::format("{}: weight {} expects {} input channels per "
                                 "group, input {} has {}",
                                 op, shape_string(weight), weight[1],
                                 shape_string(x), g.cin_g));
  }
  const Index span_h = g.dilation * (g.kh - 1) + 1;
  const Index span_w = g.dilation * (g.kw - 1) + 1;
  const Index eh = g.h + 2 * g.pad - span_h;
  const Index ew = g.w + 2 * g.pad - span_w;
  if (eh < 0 || ew < 0) {
    throw ShapeError(fmt::format("{}: kernel span {}x{} exceeds padded input {}",
                                 op, span_h, span_w, shape_string(x)));
  }
  g.ho = eh / g.stride + 1;
  g.wo = ew / g.stride + 1;
  return g;
}

// Unfolds one group of one sample into a (k, p) row-major matrix.
void im2col(const double* x, const Geometry& g, double* cols) {
  const Index p = g.p();
  for (Index c = 0; c < g.cin_g; ++c) {
    const double* plane = x + c * g.h * g.w;
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki * g.dilation;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + iy * g.w;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj * g.dilation;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds a (k, p) matrix into one group's planes.
void col2im(const double* cols, const Geometry& g, double* x) {
  const Index p = g.p();
  for (Index c = 0; c < g.cin_g; ++c) {
    double* plane = x + c * g.h * g.w;
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki * g.dilation;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + oy * g.wo;
          double* dst = plane + iy * g.w;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj * g.dilation;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

VectorXd conv_forward(const VectorXd& x, const VectorXd& w, const Geometry& g) {
  VectorXd y(g.n * g.cout * g.p());
  RowMat cols(g.k(), g.p());
  for (Index s = 0; s < g.n; ++s) {
    for (Index grp = 0; grp < g.groups; ++grp) {
      const double* xg = x.data() + (s * g.cin + grp * g.cin_g) * g.h * g.w;
      Eigen::Map<const RowMat> wg(w.data() + grp * g.cout_g * g.k(), g.cout_g,
                                  g.k());
      Eigen::Map<RowMat> yg(y.data() + (s * g.cout + grp * g.cout_g) * g.p(),
                            g.cout_g, g.p());
      if (g.pointwise()) {
        yg.noalias() = wg * Eigen::Map<const RowMat>(xg, g.k(), g.p());
      } else {
        im2col(xg, g, cols.data());
        yg.noalias() = wg * cols;
      }
    }
  }
  return y;
}

VectorXd conv_input_grad(const VectorXd& gy, const VectorXd& w,
                         const Geometry& g) {
  VectorXd gx = VectorXd::Zero(g.n * g.cin * g.h * g.w);
  RowMat cols(g.k(), g.p());
  for (Index s = 0; s < g.n; ++s) {
    for (Index grp = 0; grp < g.groups; ++grp) {
      double* xg = gx.data() + (s * g.cin + grp * g.cin_g) * g.h * g.w;
      Eigen::Map<const RowMat> wg(w.data() + grp * g.cout_g * g.k(), g.cout_g,
                                  g.k());
      Eigen::Map<const RowMat> gyg(
          gy.data() + (s * g.cout + grp * g.cout_g) * g.p(), g.cout_g, g.p());
      if (g.pointwise()) {
        Eigen::Map<RowMat>(xg, g.k(), g.p()).noalias() = wg.transpose() * gyg;
      } else {
        cols.noalias() = wg.transpose() * gyg;
        col2im(cols.data(), g, xg);
      }
    }
  }
  return gx;
}

VectorXd conv_weight_grad(const VectorXd& x, const VectorXd& gy,
                          const Geometry& g) {
  VectorXd gw = VectorXd::Zero(g.cout * g.k());
  RowMat cols(g.k(), g.p());
  for (Index s = 0; s < g.n; ++s) {
    for (Index grp = 0; grp < g.groups; ++grp) {
      const double* xg = x.data() + (s * g.cin + grp * g.cin_g) * g.h * g.w;
      Eigen::Map<RowMat> gwg(gw.data() + grp * g.cout_g * g.k(), g.cout_g,
                             g.k());
      Eigen::Map<const RowMat> gyg(
          gy.data() + (s * g.cout + grp * g.cout_g) * g.p(), g.cout_g, g.p());
      if (g.pointwise()) {
        gwg.noalias() +=
            gyg * Eigen::Map<const RowMat>(xg, g.k(), g.p()).transpose();
      } else {
        im2col(xg, g, cols.data());
        gwg.noalias() += gyg * cols.transpose();
      }
    }
  }
  return gw;
}

Index conv_macs(const Geometry& g) {
  return g.n * g.cout * g.k() * g.p();
}

void require_output_shape(const char* op, const Geometry& g, const Shape& gy) {
  const Shape expected{g.n, g.cout, g.ho, g.wo};
  if (gy != expected) {
    throw ShapeError(fmt::format("{}: output gradient {} does not match {}", op,
                                 shape_string(gy), shape_string(expected)));
  }
}

}  // namespace

Shape conv2d_output_shape(const Shape& x, const Shape& weight,
                          const ConvParams& p) {
  const Geometry g = make_geometry("conv2d", x, weight, p);
  return {g.n, g.cout, g.ho, g.wo};
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const ConvParams& p) {
  const Geometry g = make_geometry("conv2d", x.shape(), weight.shape(), p);
  detail::count_macs(conv_macs(g));
  VectorXd y = conv_forward(x.values(), weight.values(), g);
  return make_recorded(
      "conv2d", {g.n, g.cout, g.ho, g.wo}, std::move(y), {x, weight},
      [x, weight, p](const Tensor& gy, const Tensor&, const Needs& needs) {
        return std::vector<Tensor>{
            needs[0] ? conv2d_input_grad(gy, weight, p, x.shape()) : Tensor(),
            needs[1] ? conv2d_weight_grad(x, gy, p, weight.shape()) : Tensor()};
      });
}

Tensor conv2d_input_grad(const Tensor& grad_y, const Tensor& weight,
                         const ConvParams& p, const Shape& x_shape) {
  const Geometry g =
      make_geometry("conv2d_input_grad", x_shape, weight.shape(), p);
  require_output_shape("conv2d_input_grad", g, grad_y.shape());
  detail::count_macs(conv_macs(g));
  VectorXd gx = conv_input_grad(grad_y.values(), weight.values(), g);
  return make_recorded(
      "conv2d_input_grad", x_shape, std::move(gx), {grad_y, weight},
      [grad_y, weight, p](const Tensor& gx_bar, const Tensor&,
                          const Needs& needs) {
        return std::vector<Tensor>{
            needs[0] ? conv2d(gx_bar, weight, p) : Tensor(),
            needs[1] ? conv2d_weight_grad(gx_bar, grad_y, p, weight.shape())
                     : Tensor()};
      });
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_y,
                          const ConvParams& p, const Shape& weight_shape) {
  const Geometry g =
      make_geometry("conv2d_weight_grad", x.shape(), weight_shape, p);
  require_output_shape("conv2d_weight_grad", g, grad_y.shape());
  VectorXd gw = conv_weight_grad(x.values(), grad_y.values(), g);
  return make_recorded(
      "conv2d_weight_grad", weight_shape, std::move(gw), {x, grad_y},
      [x, grad_y, p](const Tensor& gw_bar, const Tensor&, const Needs& needs) {
        return std::vector<Tensor>{
            needs[0] ? conv2d_input_grad(grad_y, gw_bar, p, x.shape())
                     : Tensor(),
            needs[1] ? conv2d(x, gw_bar, p) : Tensor()};
      });
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& weight, Index stride) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(0) != x.dim(1)) {
    throw ShapeError(fmt::format(
        "transposed_conv2d: weight {} does not map input {}",
        shape_string(weight.shape()), shape_string(x.shape())));
  }
  // Transposed conv with weight (Cin, Cout, k, k) is the input adjoint of a
  // conv with weight of the same layout read as (Cout_conv=Cin, Cin_conv=Cout).
  const Shape out{x.dim(0), weight.dim(1), (x.dim(2) - 1) * stride + weight.dim(2),
                  (x.dim(3) - 1) * stride + weight.dim(3)};
  return conv2d_input_grad(x, weight, ConvParams{.stride = stride}, out);
}

}  // namespace privseg
