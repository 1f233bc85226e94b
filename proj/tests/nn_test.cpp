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

#include <algorithm>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "privseg/grad_check.hpp"
#include "privseg/nn.hpp"
#include "privseg/param_set.hpp"
#include "privseg/serialize.hpp"
#include "test_util.hpp"

namespace privseg {
namespace {

using testing::random_tensor;

ModelSpec spec_for(BackboneStyle style, int base = 8) {
  ModelSpec spec;
  spec.backbone = style;
  spec.base_channels = base;
  return spec;
}

TEST(ModelTest, SameSeedSameParams) {
  for (BackboneStyle style : kAllBackbones) {
    Model a = build_model(spec_for(style), 5);
    Model b = build_model(spec_for(style), 5);
    ASSERT_TRUE(a.initial_params().same_layout(b.initial_params()));
    EXPECT_EQ(a.initial_params().flatten(), b.initial_params().flatten());
    Model c = build_model(spec_for(style), 6);
    EXPECT_NE(a.initial_params().flatten(), c.initial_params().flatten());
  }
}

TEST(ModelTest, PlainOutputShape) {
  Model m = build_model(spec_for(BackboneStyle::kPlain), 1);
  EXPECT_EQ(m.forward(random_tensor({2, 1, 32, 32}, 1)).shape(), Shape({2, 1, 32, 32}));
}

TEST(ModelTest, EveryStyleKeepsSpatialShape) {
  for (BackboneStyle style : kAllBackbones) {
    Model m = build_model(spec_for(style), 1);
    EXPECT_EQ(m.forward(random_tensor({1, 1, 16, 24}, 2)).shape(), Shape({1, 1, 16, 24}))
        << to_string(style);
  }
}

TEST(ModelTest, RejectsIndivisibleInput) {
  Model m = build_model(spec_for(BackboneStyle::kPlain), 1);
  EXPECT_THROW(m.forward(Tensor::zeros({1, 1, 20, 32})), ShapeError);
  EXPECT_THROW(m.forward(Tensor::zeros({1, 2, 32, 32})), ShapeError);
}

TEST(ModelTest, RejectsForeignParamSet) {
  Model plain = build_model(spec_for(BackboneStyle::kPlain), 1);
  Model dilated = build_model(spec_for(BackboneStyle::kDilated), 1);
  EXPECT_THROW(plain.forward(dilated.initial_params(), Tensor::zeros({1, 1, 32, 32})),
               ShapeError);
}

TEST(ModelTest, NormalizationLayersAreStateless) {
  for (BackboneStyle style : kAllBackbones) {
    Model m = build_model(spec_for(style), 3);
    Tensor x = random_tensor({1, 1, 16, 16}, 10);
    Tensor first = m.forward(x);
    m.forward(random_tensor({3, 1, 16, 16}, 11, -5.0, 5.0));
    EXPECT_EQ(m.forward(x).values(), first.values()) << to_string(style);
    for (const auto& e : m.initial_params()) {
      EXPECT_EQ(e.name.find("running"), std::string::npos);
    }
  }
}

TEST(ModelTest, BatchRowsAreIndependent) {
  Model m = build_model(spec_for(BackboneStyle::kResidual), 3);
  Tensor a = random_tensor({1, 1, 16, 16}, 1);
  Tensor b = random_tensor({1, 1, 16, 16}, 2);
  Eigen::VectorXd both(512);
  both << a.values(), b.values();
  Tensor y = m.forward(Tensor({2, 1, 16, 16}, both));
  EXPECT_TRUE(y.values().head(256).isApprox(m.forward(a).values(), 1e-13));
  EXPECT_TRUE(y.values().tail(256).isApprox(m.forward(b).values(), 1e-13));
}

// With the second norm of every residual branch zeroed, each block reduces to
// its identity path: the output no longer depends on any branch weight.
TEST(ModelTest, ZeroedResidualBranchLeavesSkipPath) {
  Model m = build_model(spec_for(BackboneStyle::kResidual), 4);
  const ParamSet& init = m.initial_params();
  Eigen::VectorXd zeroed = init.flatten();
  Eigen::VectorXd perturbed_branch = zeroed;
  Index offset = 0;
  RandomStream rng(99);
  for (const auto& e : init) {
    const Index n = e.value.numel();
    if (e.name.find(".branch2.norm") != std::string::npos) {
      zeroed.segment(offset, n).setZero();
      perturbed_branch.segment(offset, n).setZero();
    } else if (e.name.find(".branch") != std::string::npos) {
      for (Index i = 0; i < n; ++i) perturbed_branch[offset + i] = rng.uniform(-3, 3);
    }
    offset += n;
  }
  Tensor x = random_tensor({1, 1, 32, 32}, 8);
  Tensor y1 = m.forward(init.unflatten(zeroed), x);
  Tensor y2 = m.forward(init.unflatten(perturbed_branch), x);
  EXPECT_EQ(y1.values(), y2.values());
  EXPECT_FALSE(y1.values().isApprox(m.forward(x).values()));
}

TEST(InstanceNormTest, ConstantSliceMapsToZero) {
  Tensor y = instance_norm(Tensor::full({1, 2, 3, 3}, 4.0), Tensor::full({2}, 1.0),
                           Tensor::zeros({2}));
  EXPECT_EQ(y.values(), Eigen::VectorXd::Zero(18));
}

TEST(InstanceNormTest, TwoPixelSlice) {
  Tensor y = instance_norm(Tensor::from({1, 1, 1, 2}, {1, 3}), Tensor::full({1}, 1.0),
                           Tensor::zeros({1}), 0.0);
  EXPECT_DOUBLE_EQ(y[0], -1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
}

TEST(InstanceNormTest, RandomSliceStatistics) {
  const double eps = 1e-5;
  Tensor x = random_tensor({3, 4, 5, 7}, 17, -2.0, 3.0);
  Tensor y = instance_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}), eps);
  for (Index slice = 0; slice < 12; ++slice) {
    const Eigen::ArrayXd in = x.values().segment(slice * 35, 35).array();
    const Eigen::ArrayXd out = y.values().segment(slice * 35, 35).array();
    const double raw_var = (in - in.mean()).square().mean();
    EXPECT_LT(std::abs(out.mean()), 1e-10);
    EXPECT_NEAR((out - out.mean()).square().mean(), raw_var / (raw_var + eps), 1e-8);
  }
}

TEST(InstanceNormTest, RejectsSinglePixel) {
  EXPECT_THROW(instance_norm(Tensor::zeros({1, 1, 1, 1}), Tensor::full({1}, 1.0),
                             Tensor::zeros({1})),
               ShapeError);
}

TEST(DiceTest, Score) {
  Tensor a = Tensor::from({8}, {1, 1, 1, 1, 0, 0, 0, 0});
  Tensor b = Tensor::from({8}, {0, 0, 1, 1, 1, 1, 0, 0});
  Tensor c = Tensor::from({8}, {0, 0, 0, 0, 0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(dice_score(a, a), 1.0);
  EXPECT_DOUBLE_EQ(dice_score(a, c), 0.0);
  EXPECT_DOUBLE_EQ(dice_score(a, b), 0.5);
  EXPECT_DOUBLE_EQ(dice_score(Tensor::zeros({4}), Tensor::zeros({4})), 1.0);
  EXPECT_THROW(dice_score(a, Tensor::full({8}, 0.5)), std::invalid_argument);
  EXPECT_THROW(dice_score(a, Tensor::zeros({4})), ShapeError);
}

TEST(DiceTest, ScoreIsSymmetric) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RandomStream rng(seed);
    Eigen::VectorXd va(30), vb(30);
    for (Index i = 0; i < 30; ++i) {
      va[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
      vb[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;
    }
    Tensor a({30}, va), b({30}, vb);
    EXPECT_DOUBLE_EQ(dice_score(a, b), dice_score(b, a));
    if (va.sum() > 0) EXPECT_DOUBLE_EQ(dice_score(a, a), 1.0);
  }
}

TEST(DiceTest, LossLimits) {
  Tensor target = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor perfect = Tensor::from({1, 1, 2, 2}, {50, -50, -50, 50});
  EXPECT_LT(dice_loss(perfect, target).item(), 1e-12);
  EXPECT_LT(dice_loss(Tensor::full({1, 1, 2, 2}, -50), Tensor::zeros({1, 1, 2, 2})).item(),
            1e-12);
  EXPECT_THROW(dice_loss(perfect, Tensor::zeros({1, 1, 4})), ShapeError);
}

TEST(DiceTest, LossGradientMatchesFiniteDifferences) {
  Tensor target = random_tensor({8, 8}, 4, 0.0, 1.0);
  Eigen::VectorXd bin = (target.values().array() > 0.5).cast<double>();
  Tensor mask({8, 8}, bin);
  GradCheckReport r = grad_check([&](const Tensor& x) { return dice_loss(x, mask); },
                                 random_tensor({8, 8}, 5, -2.0, 2.0), 1e-5);
  EXPECT_LT(r.max_rel_err, 1e-5);
}

TEST(DiceTest, BatchLossIsMeanOfSampleLosses) {
  Tensor logits = random_tensor({3, 1, 4, 4}, 1);
  Tensor target = Tensor({3, 1, 4, 4}, (random_tensor({3, 1, 4, 4}, 2).values().array() > 0)
                                           .cast<double>().matrix());
  double mean = 0.0;
  for (Index s = 0; s < 3; ++s) {
    mean += dice_loss(Tensor({1, 1, 4, 4}, logits.values().segment(16 * s, 16)),
                      Tensor({1, 1, 4, 4}, target.values().segment(16 * s, 16)))
                .item() / 3.0;
  }
  EXPECT_NEAR(dice_loss(logits, target).item(), mean, 1e-15);
}

TEST(CountTest, SingleConvLayer) {
  ModelSpec spec;
  spec.family = ModelFamily::kSingleConv;
  Model m = build_model(spec, 1);
  EXPECT_EQ(m.initial_params().at("conv.weight").numel() +
                m.initial_params().at("conv.bias").numel(),
            80);
  // 3*3*1*8*32*32 for the conv plus 1*1*8*1*32*32 for the head.
  EXPECT_EQ(count_macs(m, {1, 1, 32, 32}), 73728 + 8192);
}

TEST(CountTest, SingleConvKernelSize) {
  ModelSpec spec;
  spec.family = ModelFamily::kSingleConv;
  spec.base_channels = 64;
  spec.kernel_size = 11;
  Model m = build_model(spec, 1);
  // 11*11*64 + 64 conv, 64 + 1 head.
  EXPECT_EQ(count_params(m), 7744 + 64 + 64 + 1);
  EXPECT_EQ(m.forward(m.initial_params(), Tensor::zeros({1, 1, 16, 16})).shape(),
            (Shape{1, 1, 16, 16}));
  spec.kernel_size = 4;
  EXPECT_THROW(build_model(spec, 1), std::invalid_argument);
}

TEST(CountTest, ParamCountEqualsFlattenedLength) {
  for (BackboneStyle style : kAllBackbones) {
    Model m = build_model(spec_for(style), 2);
    EXPECT_EQ(count_params(m), m.initial_params().flatten().size());
    EXPECT_GE(count_params(m), 1000);
    EXPECT_LE(count_params(m), 50000);
  }
}

// Layer-by-layer hand count of the default plain U-Net at 32x32:
// widths 8/16/24 with the bottleneck at 24.
TEST(CountTest, PlainUNetHandCount) {
  auto conv = [](Index k, Index cin, Index cout, Index side) {
    return k * k * cin * cout * side * side;
  };
  const Index macs = conv(3, 1, 8, 32)                              // stem
                     + conv(3, 8, 8, 32) + conv(3, 8, 16, 16)       // enc0, down0
                     + conv(3, 16, 16, 16) + conv(3, 16, 24, 8)     // enc1, down1
                     + conv(3, 24, 24, 8) + conv(3, 24, 24, 4)      // enc2, down2
                     + conv(2, 24, 24, 4) + conv(3, 48, 24, 8)      // dec2 up, fuse
                     + conv(2, 24, 16, 8) + conv(3, 32, 16, 16)     // dec1
                     + conv(2, 16, 8, 16) + conv(3, 16, 8, 32)      // dec0
                     + conv(1, 8, 1, 32);                           // head
  const Index params = (9 * 8 + 16) + (9 * 64 + 16) + (9 * 128 + 32) + (9 * 256 + 32) +
                       (9 * 384 + 48) + (9 * 576 + 48) + (9 * 576 + 48) +
                       (4 * 576 + 24) + (9 * 48 * 24 + 48) + (4 * 24 * 16 + 16) +
                       (9 * 32 * 16 + 32) + (4 * 16 * 8 + 8) + (9 * 16 * 8 + 16) + 9;
  Model m = build_model(spec_for(BackboneStyle::kPlain), 1);
  EXPECT_EQ(count_macs(m, {1, 1, 32, 32}), macs);
  EXPECT_EQ(count_params(m), params);
}

TEST(CountTest, DilatedHasFewestParamsButNotFewestMacs) {
  Index min_params = -1, min_macs = -1;
  BackboneStyle argmin_params{}, argmin_macs{};
  for (BackboneStyle style : kAllBackbones) {
    Model m = build_model(spec_for(style), 1);
    const Index p = count_params(m), c = count_macs(m, {1, 1, 32, 32});
    if (min_params < 0 || p < min_params) { min_params = p; argmin_params = style; }
    if (min_macs < 0 || c < min_macs) { min_macs = c; argmin_macs = style; }
  }
  EXPECT_EQ(argmin_params, BackboneStyle::kDilated);
  EXPECT_NE(argmin_macs, BackboneStyle::kDilated);
}

Tensor full_model_loss(const Model& m, const Tensor& flat, const Tensor& x,
                       const Tensor& mask) {
  return dice_loss(m.forward(m.initial_params().unflatten(flat), x), mask);
}

// Every parameter of a narrow (base width 2) model of each backbone. The
// depthwise model has a relu pre-activation within 1e-5 of zero at this point,
// so the step is kept below the distance to that kink.
TEST(ModelGradientTest, EveryParameterOfNarrowModels) {
  Tensor x = random_tensor({1, 1, 16, 16}, 3, 0.0, 1.0);
  Tensor mask({1, 1, 16, 16},
              (random_tensor({1, 1, 16, 16}, 4).values().array() > 0.3).cast<double>().matrix());
  for (BackboneStyle style : kAllBackbones) {
    Model m = build_model(spec_for(style, 2), 7);
    Tensor point({m.initial_params().numel()}, m.initial_params().flatten());
    GradCheckReport r = grad_check(
        [&](const Tensor& flat) { return full_model_loss(m, flat, x, mask); }, point, 1e-6);
    EXPECT_LT(r.max_rel_err, 1e-4) << to_string(style) << " worst " << r.worst_index;
  }
}

// Default-width models, on a random subset of coordinates.
TEST(ModelGradientTest, SampledParametersOfDefaultModels) {
  Tensor x = random_tensor({1, 1, 16, 16}, 5, 0.0, 1.0);
  Tensor mask({1, 1, 16, 16},
              (random_tensor({1, 1, 16, 16}, 6).values().array() > 0.3).cast<double>().matrix());
  for (BackboneStyle style : kAllBackbones) {
    Model m = build_model(spec_for(style), 7);
    const Index n = m.initial_params().numel();
    std::vector<Index> coords;
    RandomStream rng(11);
    for (int k = 0; k < 150; ++k) coords.push_back(static_cast<Index>(rng.below(n)));
    GradCheckReport r = grad_check_at(
        [&](const Tensor& flat) { return full_model_loss(m, flat, x, mask); },
        Tensor({n}, m.initial_params().flatten()), 1e-5, coords);
    EXPECT_LT(r.max_rel_err, 1e-4) << to_string(style) << " worst " << r.worst_index;
  }
}

TEST(ParamSetTest, FlattenUnflattenRoundTrip) {
  Model m = build_model(spec_for(BackboneStyle::kDepthwiseSeparable), 9);
  const ParamSet& p = m.initial_params();
  ParamSet back = p.unflatten(p.flatten());
  ASSERT_TRUE(back.same_layout(p));
  EXPECT_EQ(back.flatten(), p.flatten());
  EXPECT_THROW(p.unflatten(Eigen::VectorXd::Zero(3)), ShapeError);
}

TEST(ParamSetTest, DiskFormatRoundTrip) {
  Model m = build_model(spec_for(BackboneStyle::kResidual), 9);
  std::stringstream buffer;
  write_param_set(buffer, m.initial_params());
  const std::string bytes = buffer.str();
  EXPECT_EQ(bytes.rfind("name,offset,length\nstem.conv.weight,0,", 0), 0u);
  ParamSet back = read_param_set(buffer);
  ASSERT_TRUE(back.same_layout(m.initial_params()));
  EXPECT_EQ(back.flatten(), m.initial_params().flatten());
}

TEST(ParamSetTest, RejectsDuplicatesAndBadNames) {
  ParamSet p;
  p.add("a", Tensor::zeros({1}));
  EXPECT_THROW(p.add("a", Tensor::zeros({1})), std::invalid_argument);
  EXPECT_THROW(p.add("b,c", Tensor::zeros({1})), std::invalid_argument);
}

}  // namespace
}  // namespace privseg
