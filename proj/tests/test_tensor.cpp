#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "forge/tensor/conv.hpp"
#include "forge/tensor/grad_check.hpp"
#include "forge/tensor/ops.hpp"
#include "test_util.hpp"

using namespace forge;
using forge::testing::make_spec;
using forge::testing::random_tensor;

TEST(Tensor, RejectsMismatchedDataLength) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor<double>({2, 0}, {}), DimensionError);
}

TEST(Tensor, BackwardRequiresScalar) {
  auto w = Tensor<double>::full({2, 2}, 1.0, true);
  auto y = mul(w, w);
  EXPECT_THROW(y.backward(), UsageError);
}

TEST(Tensor, SumOfSquaresGradientIsTwiceWeight) {
  auto w = Tensor<double>({3}, {1.0, -2.0, 0.5}, true);
  sum(mul(w, w)).backward();
  ASSERT_TRUE(w.has_grad());
  EXPECT_DOUBLE_EQ(w.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], -4.0);
  EXPECT_DOUBLE_EQ(w.grad()[2], 1.0);
}

TEST(Tensor, FrozenTensorReceivesNoGradient) {
  auto w = Tensor<double>({2}, {1.0, 2.0}, false);
  auto v = Tensor<double>({2}, {3.0, 4.0}, true);
  sum(mul(w, v)).backward();
  EXPECT_FALSE(w.has_grad());
  EXPECT_DOUBLE_EQ(v.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(v.grad()[1], 2.0);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  auto w = Tensor<double>({2}, {1.0, 2.0}, true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    y = sum(mul(w, w));
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Tensor, GradientsAccumulateOverSharedSubgraphs) {
  auto x = Tensor<double>({1}, {3.0}, true);
  auto y = add(mul(x, x), x);  // x^2 + x
  sum(y).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Conv, HandComputedSumOfThree) {
  auto spec = make_spec(1, 1, 1, 3, 1, 0);
  auto x = Tensor<double>({1, 1, 3}, {1, 2, 3});
  auto w = Tensor<double>({1, 1, 3}, {1, 1, 1});
  auto y = conv_nd(x, spec, w);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.values()[0], 6.0);
}

TEST(Conv, IdentityKernelCopiesInput) {
  std::mt19937_64 rng(1);
  auto spec = make_spec(3, 1, 1, 1, 1, 0);
  auto x = random_tensor({2, 1, 3, 4, 5}, rng);
  auto y = conv_nd(x, spec, Tensor<double>({1, 1, 1, 1, 1}, {1.0}));
  EXPECT_EQ(y.values(), x.values());
}

TEST(Conv, ZeroWeightGivesBiasOnly) {
  std::mt19937_64 rng(2);
  auto spec = make_spec(2, 2, 3, 3, 1, 1);
  auto x = random_tensor({1, 2, 4, 4}, rng);
  auto y = conv_nd(x, spec, Tensor<double>::zeros(spec.weight_shape()), Tensor<double>({3}, {0.5, -1.0, 2.0}));
  const double bias[] = {0.5, -1.0, 2.0};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t v = 0; v < 16; ++v) EXPECT_DOUBLE_EQ(y.values()[c * 16 + v], bias[c]);
}

TEST(Conv, MatchesDirectSummationOnRandomGeometries) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> small(1, 3);
  for (int trial = 0; trial < 40; ++trial) {
    const int dims = 1 + trial % 3;
    const std::size_t k = 1 + 2 * (trial % 2), s = small(rng) % 2 + 1, p = trial % 3 == 0 ? k / 2 : 0;
    auto spec = make_spec(dims, small(rng), small(rng), k, s, p);
    Shape xs{small(rng), spec.in_channels};
    for (int a = 0; a < dims; ++a) xs.push_back(k + small(rng) + 2);
    auto x = random_tensor(xs, rng);
    auto w = random_tensor(spec.weight_shape(), rng);
    auto b = random_tensor({spec.out_channels}, rng);
    Shape ys;
    const auto ref = forge::testing::naive_conv(x.values(), xs, w.values(), spec, &b.values(), ys);
    auto y = conv_nd(x, spec, w, b);
    ASSERT_EQ(y.shape(), ys);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.values()[i], ref[i], 1e-12);
  }
}

TEST(Conv, ShapeMismatchNamesAxis) {
  auto spec = make_spec(2, 2, 3, 3, 1, 1);
  auto x = Tensor<double>::zeros({1, 2, 5, 5});
  try {
    conv_nd(x, spec, Tensor<double>::zeros({3, 2, 3, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(conv_nd(Tensor<double>::zeros({1, 4, 5, 5}), spec, Tensor<double>::zeros(spec.weight_shape())),
               DimensionError);
}

TEST(ConvTranspose, StrideTwoDoublesLength) {
  auto spec = make_spec(1, 1, 1, 2, 2, 0, true);
  auto x = Tensor<double>({1, 1, 2}, {1.0, 2.0});
  auto w = Tensor<double>({1, 1, 2}, {3.0, 5.0});
  auto y = conv_transpose_nd(x, spec, w);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4}));
  // Oracle: input-gradient of a stride-2 conv over a length-4 signal, with the
  // upstream gradient set to x.
  auto fwd = make_spec(1, 1, 1, 2, 2, 0);
  auto probe = Tensor<double>::zeros({1, 1, 4}, true);
  sum(mul(conv_nd(probe, fwd, w), x)).backward();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.values()[i], probe.grad()[i]);
  EXPECT_EQ(y.values(), (std::vector<double>{3, 5, 6, 10}));
}

TEST(ConvTranspose, PointwiseKernelMixesChannels) {
  auto spec = make_spec(2, 2, 1, 1, 1, 0, true);
  auto x = Tensor<double>({1, 2, 1, 2}, {1, 2, 10, 20});
  auto y = conv_transpose_nd(x, spec, Tensor<double>({2, 1, 1, 1}, {1.0, 0.5}));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(y.values()[0], 6.0);
  EXPECT_DOUBLE_EQ(y.values()[1], 12.0);
}

TEST(ConvTranspose, ZeroInputGivesBias) {
  auto spec = make_spec(3, 2, 2, 2, 2, 0, true);
  auto y = conv_transpose_nd(Tensor<double>::zeros({1, 2, 2, 2, 2}), spec, Tensor<double>::full(spec.weight_shape(), 1.0),
                             Tensor<double>({2}, {1.5, -0.5}));
  for (std::size_t v = 0; v < 64; ++v) EXPECT_DOUBLE_EQ(y.values()[v], 1.5);
  for (std::size_t v = 64; v < 128; ++v) EXPECT_DOUBLE_EQ(y.values()[v], -0.5);
}

TEST(ConvTranspose, MatchesDirectScatter) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const int dims = 1 + trial % 3;
    const std::size_t k = 1 + trial % 3, s = 1 + trial % 2, p = (trial % 4 == 0 && k > 2) ? 1 : 0;
    auto spec = make_spec(dims, 1 + trial % 2, 1 + trial % 3, k, s, p, true);
    Shape xs{1 + static_cast<std::size_t>(trial % 2), spec.in_channels};
    for (int a = 0; a < dims; ++a) xs.push_back(2 + static_cast<std::size_t>(trial % 3));
    auto x = random_tensor(xs, rng);
    auto w = random_tensor(spec.weight_shape(), rng);
    Shape ys;
    const auto ref = forge::testing::naive_conv_transpose(x.values(), xs, w.values(), spec, ys);
    auto y = conv_transpose_nd(x, spec, w);
    ASSERT_EQ(y.shape(), ys);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.values()[i], ref[i], 1e-12);
  }
}

// conv_transpose(g, W) == d/dx <conv(x, W), g> for every geometry.
TEST(ConvTranspose, IsAdjointOfConvolution) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int dims = 1 + trial % 3;
    const std::size_t k = 1 + 2 * (trial % 2), s = 1 + trial % 2, p = k / 2;
    auto fwd = make_spec(dims, 2, 3, k, s, p);
    auto tr = fwd;
    tr.transposed = true;
    tr.in_channels = fwd.out_channels;
    tr.out_channels = fwd.in_channels;
    // Extents of the form s*m + 1 make the transposed output size exact.
    Shape xs{2, 2};
    for (int a = 0; a < dims; ++a) xs.push_back(s * (2 + static_cast<std::size_t>(trial % 3)) + 1);
    auto w = random_tensor(fwd.weight_shape(), rng);
    auto probe = Tensor<double>::zeros(xs, true);
    auto y = conv_nd(probe, fwd, w);
    auto g = random_tensor(y.shape(), rng);
    sum(mul(y, g)).backward();
    auto adj = conv_transpose_nd(g, tr, w);
    ASSERT_EQ(adj.shape(), xs);
    for (std::size_t i = 0; i < adj.numel(); ++i) EXPECT_NEAR(adj.values()[i], probe.grad()[i], 1e-6);
  }
}

TEST(InstanceNorm, ConstantChannelMapsToBeta) {
  auto x = Tensor<double>::full({1, 1, 4}, 7.0);
  auto y = instance_norm(x, Tensor<double>({1}, {3.0}), Tensor<double>({1}, {0.0}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(InstanceNorm, TwoValueChannel) {
  auto x = Tensor<double>({1, 1, 2}, {1.0, 3.0});
  auto y = instance_norm(x, Tensor<double>({1}, {1.0}), Tensor<double>({1}, {0.0}));
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);  // mean 2, biased var 1
  EXPECT_NEAR(y.values()[0], -expect, 1e-15);
  EXPECT_NEAR(y.values()[1], expect, 1e-15);
}

TEST(InstanceNorm, BetaShiftsEverything) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({2, 3, 5}, rng);
  auto g = Tensor<double>::full({3}, 1.0);
  auto y0 = instance_norm(x, g, Tensor<double>::zeros({3}));
  auto y5 = instance_norm(x, g, Tensor<double>::full({3}, 5.0));
  for (std::size_t i = 0; i < y0.numel(); ++i) EXPECT_NEAR(y5.values()[i] - y0.values()[i], 5.0, 1e-12);
}

TEST(InstanceNorm, RejectsBadAffineShape) {
  EXPECT_THROW(instance_norm(Tensor<double>::zeros({1, 2, 3}), Tensor<double>::zeros({3}), Tensor<double>::zeros({2})),
               DimensionError);
}

TEST(Activation, ReluLeakySoftmax) {
  auto r = relu(Tensor<double>({2}, {-1.0, 2.0}));
  EXPECT_EQ(r.values(), (std::vector<double>{0.0, 2.0}));
  auto l = leaky_relu(Tensor<double>({1}, {-10.0}), 0.1);
  EXPECT_DOUBLE_EQ(l.values()[0], -1.0);
  auto s = softmax_channels(Tensor<double>::full({1, 4, 1}, 0.3));
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Activation, SoftmaxIsAProbabilityOverChannels) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({2, 5, 3, 4}, rng, -30.0, 30.0);
    auto p = softmax_channels(x);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t v = 0; v < 12; ++v) {
        double total = 0.0;
        for (std::size_t c = 0; c < 5; ++c) {
          const double q = p.values()[(n * 5 + c) * 12 + v];
          EXPECT_GE(q, 0.0);
          EXPECT_LE(q, 1.0);
          total += q;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
  }
}

TEST(Determinism, ConvForwardIsBitReproducible) {
  std::mt19937_64 rng(8);
  auto spec = make_spec(3, 3, 4, 3, 2, 1);
  auto x = random_tensor<float>({2, 3, 6, 7, 8}, rng);
  auto w = random_tensor<float>(spec.weight_shape(), rng);
  EXPECT_EQ(conv_nd(x, spec, w).values(), conv_nd(x, spec, w).values());
}

TEST(GradCheck, LinearFunctionIsExact) {
  std::mt19937_64 rng(9);
  auto w = random_tensor({6}, rng);
  auto c = random_tensor({6}, rng);
  auto res = grad_check<double>([&] { return sum(mul(w, c)); }, {w});
  EXPECT_LT(res.max_rel_error, 1e-8);
}

TEST(GradCheck, ConvolutionWithRandom3x3Kernel) {
  std::mt19937_64 rng(10);
  auto spec = make_spec(2, 2, 3, 3, 1, 1);
  auto x = random_tensor({2, 2, 5, 4}, rng);
  auto w = random_tensor(spec.weight_shape(), rng);
  auto b = random_tensor({3}, rng);
  auto g = random_tensor({2, 3, 5, 4}, rng);
  auto res = grad_check<double>([&] { return sum(mul(conv_nd(x, spec, w, b), g)); }, {x, w, b});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, StridedConvolution3D) {
  std::mt19937_64 rng(11);
  auto spec = make_spec(3, 2, 2, 3, 2, 1);
  auto x = random_tensor({1, 2, 4, 5, 4}, rng);
  auto w = random_tensor(spec.weight_shape(), rng);
  auto g = random_tensor({1, 2, 2, 3, 2}, rng);
  auto res = grad_check<double>([&] { return sum(mul(conv_nd(x, spec, w), g)); }, {x, w});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, TransposedConvolution) {
  std::mt19937_64 rng(12);
  auto spec = make_spec(2, 3, 2, 2, 2, 0, true);
  auto x = random_tensor({2, 3, 2, 3}, rng);
  auto w = random_tensor(spec.weight_shape(), rng);
  auto b = random_tensor({2}, rng);
  auto g = random_tensor({2, 2, 4, 6}, rng);
  auto res = grad_check<double>([&] { return sum(mul(conv_transpose_nd(x, spec, w, b), g)); }, {x, w, b});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, InstanceNorm) {
  std::mt19937_64 rng(13);
  auto x = random_tensor({2, 3, 6}, rng);
  auto gamma = random_tensor({3}, rng, 0.5, 1.5);
  auto beta = random_tensor({3}, rng);
  auto g = random_tensor({2, 3, 6}, rng);
  auto res = grad_check<double>([&] { return sum(mul(instance_norm(x, gamma, beta), g)); }, {x, gamma, beta});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, BatchNormTraining) {
  std::mt19937_64 rng(14);
  auto x = random_tensor({3, 2, 5}, rng);
  auto gamma = random_tensor({2}, rng, 0.5, 1.5);
  auto beta = random_tensor({2}, rng);
  auto g = random_tensor({3, 2, 5}, rng);
  auto res = grad_check<double>(
      [&] {
        BatchNormStats<double> stats{{0, 0}, {1, 1}};
        return sum(mul(batch_norm(x, gamma, beta, stats, true), g));
      },
      {x, gamma, beta});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, Softmax) {
  std::mt19937_64 rng(15);
  auto x = random_tensor({2, 4, 3}, rng, -2.0, 2.0);
  auto g = random_tensor({2, 4, 3}, rng);
  auto res = grad_check<double>([&] { return sum(mul(softmax_channels(x), g)); }, {x});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, CompositeConvNormReluGraph) {
  std::mt19937_64 rng(16);
  auto spec = make_spec(3, 2, 3, 3, 1, 1);
  auto x = random_tensor({1, 2, 3, 4, 3}, rng);
  auto w = random_tensor(spec.weight_shape(), rng);
  auto gamma = random_tensor({3}, rng, 0.5, 1.5);
  auto beta = random_tensor({3}, rng);
  auto g = random_tensor({1, 3, 3, 4, 3}, rng);
  auto res = grad_check<double>(
      [&] { return sum(mul(leaky_relu(instance_norm(conv_nd(x, spec, w), gamma, beta), 0.01), g)); },
      {x, w, gamma, beta});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, ConcatChannels) {
  std::mt19937_64 rng(17);
  auto a = random_tensor({2, 2, 3}, rng);
  auto b = random_tensor({2, 1, 3}, rng);
  auto g = random_tensor({2, 3, 3}, rng);
  auto res = grad_check<double>([&] { return sum(mul(concat_channels(a, b), g)); }, {a, b});
  EXPECT_LT(res.max_rel_error, 1e-6);
}
