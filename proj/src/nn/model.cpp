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

#include <cmath>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "privseg/nn.hpp"
#include "privseg/random.hpp"

namespace privseg {
namespace {

// The architecture is written once and run in two modes: while building,
// every param() call creates and initializes a tensor; in forward mode the
// same calls consume the given ParamSet in order.
class Context {
 public:
  explicit Context(std::uint64_t seed) : building_(true), seed_(seed) {}
  explicit Context(const ParamSet& params) : params_(&params) {}

  enum class Init { kUniformFanIn, kZeros, kOnes };

  Tensor param(const std::string& name, const Shape& shape, Init init,
               Index fan_in = 1) {
    if (building_) {
      Eigen::VectorXd v(shape_numel(shape));
      switch (init) {
        case Init::kZeros:
          v.setZero();
          break;
        case Init::kOnes:
          v.setOnes();
          break;
        case Init::kUniformFanIn: {
          const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
          RandomStream rng(seed_, derive_stream({hash_name(name)}));
          for (auto& x : v) x = rng.uniform(-bound, bound);
          break;
        }
      }
      built_.add(name, Tensor(shape, std::move(v)));
      return built_[built_.size() - 1].value;
    }
    if (cursor_ >= params_->size()) {
      throw std::invalid_argument(fmt::format("parameter set has no '{}'", name));
    }
    const ParamSet::Entry& e = (*params_)[cursor_++];
    if (e.name != name || e.value.shape() != shape) {
      throw ShapeError(fmt::format(
          "parameter mismatch: model expects {} {}, set holds {} {}", name,
          shape_string(shape), e.name, shape_string(e.value.shape())));
    }
    return e.value;
  }

  void finish() const {
    if (!building_ && cursor_ != params_->size()) {
      throw std::invalid_argument(fmt::format(
          "parameter set holds {} tensors, model used {}", params_->size(), cursor_));
    }
  }

  ParamSet take() { return std::move(built_); }

 private:
  bool building_ = false;
  std::uint64_t seed_ = 0;
  ParamSet built_;
  const ParamSet* params_ = nullptr;
  size_t cursor_ = 0;
};

using Init = Context::Init;

Tensor conv(Context& ctx, const std::string& name, const Tensor& x, Index cout,
            Index k, const ConvParams& p, bool bias = false) {
  const Index cin_g = x.dim(1) / p.groups;
  Tensor w = ctx.param(name + ".weight", {cout, cin_g, k, k}, Init::kUniformFanIn,
                       cin_g * k * k);
  Tensor y = conv2d(x, w, p);
  if (bias) y = add_channel(y, ctx.param(name + ".bias", {cout}, Init::kZeros));
  return y;
}

Tensor norm(Context& ctx, const std::string& name, const Tensor& x) {
  const Index c = x.dim(1);
  Tensor gain = ctx.param(name + ".gain", {c}, Init::kOnes);
  Tensor bias = ctx.param(name + ".bias", {c}, Init::kZeros);
  return instance_norm(x, gain, bias);
}

Tensor conv_norm_relu(Context& ctx, const std::string& name, const Tensor& x,
                      Index cout, Index k, const ConvParams& p) {
  return relu(norm(ctx, name + ".norm", conv(ctx, name + ".conv", x, cout, k, p)));
}

Tensor upconv(Context& ctx, const std::string& name, const Tensor& x, Index cout) {
  Tensor w = ctx.param(name + ".weight", {x.dim(1), cout, 2, 2},
                       Init::kUniformFanIn, x.dim(1));
  Tensor b = ctx.param(name + ".bias", {cout}, Init::kZeros);
  return add_channel(transposed_conv2d(x, w, 2), b);
}

Index width(const ModelSpec& spec, int stage) {
  if (spec.backbone == BackboneStyle::kDilated) return spec.base_channels;
  return static_cast<Index>(spec.base_channels) * (std::min(stage, spec.depth - 1) + 1);
}

Tensor block(Context& ctx, const ModelSpec& spec, const std::string& name,
             const Tensor& x) {
  const Index c = x.dim(1);
  switch (spec.backbone) {
    case BackboneStyle::kPlain:
      return conv_norm_relu(ctx, name, x, c, 3, {.pad = 1});
    case BackboneStyle::kResidual: {
      Tensor r = conv_norm_relu(ctx, name + ".branch1", x, c, 3, {.pad = 1});
      r = norm(ctx, name + ".branch2.norm",
               conv(ctx, name + ".branch2.conv", r, c, 3, {.pad = 1}));
      return relu(add(x, r));
    }
    case BackboneStyle::kDepthwiseSeparable: {
      Tensor h = conv_norm_relu(ctx, name + ".expand", x, 2 * c, 1, {});
      h = conv_norm_relu(ctx, name + ".depthwise", h, 2 * c, 3,
                         {.pad = 1, .groups = 2 * c});
      h = norm(ctx, name + ".project.norm", conv(ctx, name + ".project.conv", h, c, 1, {}));
      return add(x, h);
    }
    case BackboneStyle::kDilated: {
      Tensor h = x;
      for (Index d : {1, 2, 4}) {
        h = conv_norm_relu(ctx, fmt::format("{}.d{}", name, d), h, c, 3,
                           {.pad = d, .dilation = d});
      }
      return h;
    }
  }
  throw std::logic_error("unknown backbone");
}

Tensor downsample(Context& ctx, const ModelSpec& spec, const std::string& name,
                  const Tensor& x, Index cout) {
  if (spec.backbone == BackboneStyle::kDepthwiseSeparable) {
    const Index c = x.dim(1);
    Tensor h = conv_norm_relu(ctx, name + ".depthwise", x, c, 3,
                              {.stride = 2, .pad = 1, .groups = c});
    return conv_norm_relu(ctx, name + ".pointwise", h, cout, 1, {});
  }
  return conv_norm_relu(ctx, name, x, cout, 3, {.stride = 2, .pad = 1});
}

Tensor fuse(Context& ctx, const ModelSpec& spec, const std::string& name,
            const Tensor& x, Index cout) {
  if (spec.backbone == BackboneStyle::kDepthwiseSeparable) {
    const Index c = x.dim(1);
    Tensor h = conv_norm_relu(ctx, name + ".depthwise", x, c, 3, {.pad = 1, .groups = c});
    return conv_norm_relu(ctx, name + ".pointwise", h, cout, 1, {});
  }
  return conv_norm_relu(ctx, name, x, cout, 3, {.pad = 1});
}

Tensor run_unet(Context& ctx, const ModelSpec& spec, const Tensor& x) {
  Tensor h = conv_norm_relu(ctx, "stem", x, width(spec, 0), 3, {.pad = 1});
  std::vector<Tensor> skips;
  for (int i = 0; i < spec.depth; ++i) {
    h = block(ctx, spec, fmt::format("enc{}", i), h);
    skips.push_back(h);
    h = downsample(ctx, spec, fmt::format("down{}", i), h, width(spec, i + 1));
  }
  for (int i = spec.depth - 1; i >= 0; --i) {
    const Index c = width(spec, i);
    h = upconv(ctx, fmt::format("dec{}.up", i), h, c);
    h = concat_channels({skips[static_cast<size_t>(i)], h});
    h = fuse(ctx, spec, fmt::format("dec{}.fuse", i), h, c);
  }
  return conv(ctx, "head", h, spec.out_channels, 1, {}, /*bias=*/true);
}

Tensor run_single_conv(Context& ctx, const ModelSpec& spec, const Tensor& x) {
  const Index k = spec.kernel_size;
  Tensor h = relu(conv(ctx, "conv", x, spec.base_channels, k, {.pad = k / 2}, true));
  return conv(ctx, "head", h, spec.out_channels, 1, {}, true);
}

Tensor run(Context& ctx, const ModelSpec& spec, const Tensor& x) {
  Tensor y = spec.family == ModelFamily::kUNet ? run_unet(ctx, spec, x)
                                               : run_single_conv(ctx, spec, x);
  ctx.finish();
  return y;
}

}  // namespace

std::string_view to_string(BackboneStyle style) {
  switch (style) {
    case BackboneStyle::kPlain: return "plain";
    case BackboneStyle::kResidual: return "residual";
    case BackboneStyle::kDepthwiseSeparable: return "depthwise_separable";
    case BackboneStyle::kDilated: return "dilated";
  }
  return "unknown";
}

std::string_view to_string(ModelFamily family) {
  return family == ModelFamily::kUNet ? "unet" : "single_conv";
}

BackboneStyle parse_backbone(std::string_view name) {
  for (BackboneStyle s : kAllBackbones) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument(fmt::format("unknown backbone '{}'", name));
}

ModelFamily parse_family(std::string_view name) {
  if (name == "unet") return ModelFamily::kUNet;
  if (name == "single_conv") return ModelFamily::kSingleConv;
  throw std::invalid_argument(fmt::format("unknown model family '{}'", name));
}

void ModelSpec::validate() const {
  if (base_channels < 1 || depth < 1 || in_channels < 1 || out_channels < 1) {
    throw std::invalid_argument(fmt::format(
        "invalid model spec: base_channels={} depth={} in={} out={}",
        base_channels, depth, in_channels, out_channels));
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw std::invalid_argument(fmt::format("kernel_size must be odd, got {}", kernel_size));
  }
}

Index ModelSpec::input_divisor() const {
  return family == ModelFamily::kUNet ? Index{1} << depth : 1;
}

Tensor Model::forward(const ParamSet& params, const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw ShapeError(fmt::format("model input must be (N,{},H,W), got {}",
                                 spec_.in_channels, shape_string(x.shape())));
  }
  const Index div = spec_.input_divisor();
  if (x.dim(2) % div != 0 || x.dim(3) % div != 0) {
    throw ShapeError(fmt::format(
        "model input spatial size {}x{} is not divisible by 2^depth = {}",
        x.dim(2), x.dim(3), div));
  }
  Context ctx(params);
  return run(ctx, spec_, x);
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model model;
  model.spec_ = spec;
  // The deepest stage must keep at least 2x2 pixels for instance norm.
  const Index side = 2 * spec.input_divisor() * (spec.family == ModelFamily::kUNet ? 1 : 2);
  Context ctx(seed);
  {
    NoGradGuard no_grad;
    run(ctx, spec, Tensor::zeros({1, spec.in_channels, side, side}));
  }
  model.params_ = ctx.take();
  return model;
}

Index count_params(const Model& model) { return model.initial_params().numel(); }

Index count_macs(const Model& model, const Shape& input_shape) {
  NoGradGuard no_grad;
  MacCounter counter;
  model.forward(Tensor::zeros(input_shape));
  return counter.total();
}

}  // namespace privseg
