#include <gtest/gtest.h>

#include <random>
#include <string>

#include "forge/net/network.hpp"
#include "forge/tensor/grad_check.hpp"
#include "test_util.hpp"

using namespace forge;
using forge::testing::random_tensor;

namespace {

NetworkPlan plan3d_default(std::vector<std::size_t> channels) {
  NetworkPlan p;
  p.dims = 3;
  p.kernels = {{1, 3, 3}, {3, 3, 3}, {3, 3, 3}, {3, 3, 3}};
  p.strides = {{1, 1, 1}, {1, 2, 2}, {2, 2, 2}, {2, 2, 2}};
  p.channels = std::move(channels);
  p.in_channels = 1;
  p.num_classes = 3;
  p.patch_size = {16, 96, 96};
  return p;
}

NetworkPlan plan2d(std::size_t levels) {
  NetworkPlan p;
  p.dims = 2;
  p.norm = NormKind::Batch;
  for (std::size_t l = 0; l < levels; ++l) {
    p.kernels.push_back({3, 3});
    p.strides.push_back(l == 0 ? Extents{1, 1} : Extents{2, 2});
    p.channels.push_back(2 << l);
  }
  p.in_channels = 2;
  p.num_classes = 4;
  return p;
}

DatasetFingerprint fingerprint(std::vector<double> spacing, std::vector<std::size_t> shape) {
  DatasetFingerprint fp;
  fp.median_spacing = spacing;
  fp.target_spacing = spacing;
  fp.median_shape = std::move(shape);
  fp.n_volumes = 3;
  return fp;
}

}  // namespace

TEST(NetworkPlan, DefaultAnisotropicPatchIsValid) {
  const auto p = plan3d_default({4, 8, 16, 32});
  EXPECT_NO_THROW(p.validate());
  EXPECT_EQ(p.total_stride(), (Extents{4, 8, 8}));
  EXPECT_EQ(p.group_count(), 7u);
}

TEST(NetworkPlan, IndivisiblePatchNamesTheAxis) {
  auto p = plan3d_default({4, 8, 16, 32});
  p.patch_size = {16, 90, 96};
  try {
    p.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos) << e.what();
  }
}

TEST(NetworkPlan, RejectsDecreasingChannelsAndEvenKernels) {
  auto p = plan3d_default({8, 4, 16, 32});
  EXPECT_THROW(p.validate(), ConfigError);
  p = plan3d_default({4, 8, 16, 32});
  p.kernels[2] = {3, 2, 3};
  EXPECT_THROW(p.validate(), ConfigError);
  p = plan3d_default({4, 8, 16, 32});
  p.num_classes = 1;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Network, Default3DPatchRoundTripsShape) {
  auto net = build_unet<float>(plan3d_default({2, 2, 4, 4}));
  std::mt19937_64 rng(1);
  net.init_random(rng);
  const auto x = random_tensor<float>({1, 1, 16, 96, 96}, rng);
  NoGradGuard ng;
  const auto y = net.forward(x);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 16, 96, 96}));
}

TEST(Network, RandomPlansRoundTripShape) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 12; ++trial) {
    NetworkPlan p;
    p.dims = 2 + trial % 2;
    const std::size_t nd = static_cast<std::size_t>(p.dims);
    const std::size_t L = 1 + static_cast<std::size_t>(trial % 3);
    for (std::size_t l = 0; l < L; ++l) {
      Extents k(nd), s(nd, 1);
      for (std::size_t a = 0; a < nd; ++a) {
        k[a] = coin(rng) ? 3 : 1;
        if (l > 0) s[a] = coin(rng) ? 2 : 1;
      }
      p.kernels.push_back(k);
      p.strides.push_back(s);
      p.channels.push_back(1 + l);
    }
    p.in_channels = 1 + static_cast<std::size_t>(trial % 2);
    p.num_classes = 2 + static_cast<std::size_t>(trial % 3);
    p.norm = trial % 2 ? NormKind::Instance : NormKind::Batch;
    const auto total = p.total_stride();
    for (std::size_t a = 0; a < nd; ++a) p.patch_size.push_back(total[a] * (1 + (a + trial) % 3));
    auto net = build_unet<double>(p);
    net.init_random(rng);
    Shape xs{2, p.in_channels};
    xs.insert(xs.end(), p.patch_size.begin(), p.patch_size.end());
    const auto y = net.forward(random_tensor(xs, rng));
    Shape expect{2, p.num_classes};
    expect.insert(expect.end(), p.patch_size.begin(), p.patch_size.end());
    EXPECT_EQ(y.shape(), expect);
  }
}

TEST(Network, FullSlice2DAcceptsAnyExtent) {
  auto net = build_unet<double>(plan2d(3));
  std::mt19937_64 rng(3);
  net.init_random(rng);
  const auto x = random_tensor({1, 2, 13, 17}, rng);
  EXPECT_THROW(net.forward(x), DimensionError);
  const auto y = net.forward_padded(x);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 13, 17}));
}

TEST(Network, SingleLevelIsShapePreservingConvStack) {
  auto p = plan2d(1);
  auto net = build_unet<double>(p);
  EXPECT_EQ(net.group_count(), 1u);
  EXPECT_EQ(net.convs().size(), 3u);  // conv_a, conv_b, head
  std::mt19937_64 rng(4);
  net.init_random(rng);
  EXPECT_EQ(net.forward(random_tensor({1, 2, 5, 7}, rng)).shape(), (Shape{1, 4, 5, 7}));
}

TEST(Network, WrongInputChannelsRejected) {
  auto net = build_unet<double>(plan2d(2));
  std::mt19937_64 rng(5);
  EXPECT_THROW(net.forward(random_tensor({1, 3, 8, 8}, rng)), DimensionError);
  EXPECT_THROW(net.forward(random_tensor({2, 8, 8}, rng)), DimensionError);
}

TEST(Network, LayerOrderAndDepthIndex) {
  auto net = build_unet<double>(plan3d_default({2, 2, 4, 4}));
  const auto& layers = net.layers();
  ASSERT_FALSE(layers.empty());
  EXPECT_EQ(layers.front().name, "enc0.conv_a");
  EXPECT_EQ(layers.back().name, "head");
  for (std::size_t i = 1; i < layers.size(); ++i) EXPECT_LE(layers[i - 1].depth_index, layers[i].depth_index);
  EXPECT_EQ(layers.back().depth_index, net.group_count() - 1);
  std::size_t transposed = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::TransposedConv) EXPECT_NO_THROW(net.conv(l.name));
    if (l.kind == LayerKind::TransposedConv) ++transposed;
  }
  EXPECT_EQ(transposed, 3u);
  // Each up-sampling layer mirrors the stride it undoes.
  EXPECT_EQ(net.conv("dec0.up").spec.stride, (Extents{1, 2, 2}));
  EXPECT_EQ(net.conv("dec2.up").spec.stride, (Extents{2, 2, 2}));
  EXPECT_EQ(net.conv("enc3.conv_a").spec.stride, (Extents{2, 2, 2}));
}

TEST(Network, BiasOnlyWhereNoNormFollows) {
  auto net = build_unet<double>(plan2d(2));
  for (const auto& c : net.convs()) {
    const bool expect_bias = c.spec.transposed || c.is_head;
    EXPECT_EQ(c.bias.has_value(), expect_bias) << c.name;
  }
}

TEST(Network, EndToEndGradientsMatchFiniteDifferences) {
  auto p = plan2d(2);
  p.norm = NormKind::Instance;
  auto net = build_unet<double>(p);
  std::mt19937_64 rng(6);
  net.init_random(rng);
  const auto x = random_tensor({1, 2, 4, 4}, rng);
  const auto g = random_tensor({1, 4, 4, 4}, rng);
  std::vector<Tensor<double>> params;
  for (const auto& r : net.parameters())
    if (r.name == "enc0.conv_a.weight" || r.name == "dec0.up.weight" || r.name == "head.bias" ||
        r.name == "enc1.norm_b.gamma")
      params.push_back(r.tensor);
  ASSERT_EQ(params.size(), 4u);
  const auto res = grad_check<double>([&] { return sum(mul(net.forward(x), g)); }, params);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Network, CloneIsDeep) {
  auto net = build_unet<double>(plan2d(2));
  std::mt19937_64 rng(7);
  net.init_random(rng);
  auto copy = net.clone();
  copy.conv("head").weight.mutable_data()[0] += 1.0;
  EXPECT_NE(copy.conv("head").weight.values()[0], net.conv("head").weight.values()[0]);
}

TEST(Network, LoraInjectionCoversEveryConvAndIsTransparent) {
  auto net = build_unet<double>(plan2d(3));
  std::mt19937_64 rng(8);
  net.init_random(rng);
  net.set_training(false);
  const auto x = random_tensor({1, 2, 8, 8}, rng);
  const auto before = net.forward(x);
  LoraConfig cfg;
  cfg.rank = 1;
  const auto names = net.inject_lora(cfg, rng);
  EXPECT_EQ(names.size(), net.convs().size());
  EXPECT_EQ(net.forward(x).values(), before.values());
  std::size_t trainable = 0, expected = 0;
  for (const auto& r : net.parameters())
    if (r.role == ParamRole::LoraA || r.role == ParamRole::LoraB) trainable += r.tensor.numel();
  for (const auto& c : net.convs()) expected += lora_param_count(cfg, c.spec);
  EXPECT_EQ(trainable, expected);

  LoraConfig no_head = cfg;
  no_head.adapt_head = false;
  auto other = build_unet<double>(plan2d(3));
  const auto n2 = other.inject_lora(no_head, rng);
  EXPECT_EQ(n2.size(), other.convs().size() - 1);
}

TEST(ReflectPad, MirrorsWithoutRepeatingEdge) {
  const Tensor<double> x({1, 1, 3}, {0.0, 1.0, 2.0});
  const auto y = reflect_pad(x, {7});
  EXPECT_EQ(y.values(), (std::vector<double>{0, 1, 2, 1, 0, 1, 2}));
  const auto c = crop(y, {2});
  EXPECT_EQ(c.values(), (std::vector<double>{0, 1}));
}

TEST(ReflectPad, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({1, 2, 3, 2}, rng, -1, 1, true);
  const auto g = random_tensor({1, 2, 3, 3}, rng);
  const auto res =
      grad_check<double>([&] { return sum(mul(crop(reflect_pad(x, {5, 4}), {3, 3}), g)); }, {x});
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(EstimateMemory, HandComputedTinyPlan) {
  auto p = plan2d(2);  // channels {2, 4}, strides {1,1},{2,2}
  p.patch_size = {8, 8};
  p.batch_size = 1;
  // level 0: 8*8 * 2 * 8 = 1024; level 1: 4*4 * 4 * 8 = 512
  EXPECT_DOUBLE_EQ(estimate_memory(p), 1536.0);
  p.batch_size = 3;
  EXPECT_DOUBLE_EQ(estimate_memory(p), 4608.0);
}

TEST(EstimateMemory, LinearInBatchAndMonotoneInPatch) {
  auto p = plan3d_default({4, 8, 16, 32});
  p.batch_size = 1;
  const double one = estimate_memory(p);
  p.batch_size = 2;
  EXPECT_DOUBLE_EQ(estimate_memory(p), 2.0 * one);
  const double two = estimate_memory(p);
  p.patch_size = {32, 96, 96};
  EXPECT_GT(estimate_memory(p), two);
  p.patch_size = {16, 96, 96};
  for (std::size_t a = 0; a < 3; ++a) {
    auto q = p;
    q.patch_size[a] += q.total_stride()[a];
    EXPECT_GT(estimate_memory(q), estimate_memory(p));
  }
}

TEST(PlanDynUNet, IsotropicVolume) {
  const auto plan = plan_dynunet(fingerprint({1, 1, 1}, {128, 128, 128}), {1e12, 8});
  ASSERT_EQ(plan.levels(), 5u);
  for (const auto& k : plan.kernels) EXPECT_EQ(k, (Extents{3, 3, 3}));
  EXPECT_EQ(plan.strides[0], (Extents{1, 1, 1}));
  for (std::size_t l = 1; l < 5; ++l) EXPECT_EQ(plan.strides[l], (Extents{2, 2, 2}));
  EXPECT_EQ(plan.channels, (std::vector<std::size_t>{32, 64, 128, 256, 320}));
  EXPECT_EQ(plan.patch_size, (Extents{128, 128, 128}));
  EXPECT_EQ(plan.batch_size, 8u);
  EXPECT_EQ(plan.norm, NormKind::Instance);
}

TEST(PlanDynUNet, AnisotropicVolume) {
  const auto plan = plan_dynunet(fingerprint({5, 1, 1}, {32, 128, 128}), {1e12, 8});
  ASSERT_GE(plan.levels(), 2u);
  EXPECT_EQ(plan.kernels[0], (Extents{1, 3, 3}));
  EXPECT_EQ(plan.strides[1], (Extents{1, 2, 2}));
  // Spacing (5, 2, 2) after one step is still anisotropic; (5, 4, 4) is not.
  EXPECT_EQ(plan.kernels[1], (Extents{1, 3, 3}));
  EXPECT_EQ(plan.strides[2], (Extents{1, 2, 2}));
  EXPECT_EQ(plan.kernels[2], (Extents{3, 3, 3}));
  EXPECT_NO_THROW(plan.validate());
}

TEST(PlanDynUNet, TwoDimensionalUsesBatchNorm) {
  const auto plan = plan_dynunet(fingerprint({1, 1}, {64, 64}), {1e9, 8});
  EXPECT_EQ(plan.dims, 2);
  EXPECT_EQ(plan.norm, NormKind::Batch);
  EXPECT_EQ(plan.levels(), 4u);  // 64 -> 32 -> 16 -> 8, then 4 is not > 4
}

TEST(PlanDynUNet, BudgetBelowMinimumIsConfigError) {
  try {
    plan_dynunet(fingerprint({1, 1, 1}, {128, 128, 128}), {100.0, 8});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("minimal"), std::string::npos) << e.what();
  }
}

TEST(PlanDynUNet, DeterministicAndBudgetMonotone) {
  const auto fp = fingerprint({3, 1, 1.2}, {40, 160, 150});
  EXPECT_EQ(plan_dynunet(fp, {3e7, 8}), plan_dynunet(fp, {3e7, 8}));
  double prev_volume = 0.0;
  for (double budget = 4e5; budget < 1e10; budget *= 1.7) {
    NetworkPlan plan;
    try {
      plan = plan_dynunet(fp, {budget, 8});
    } catch (const ConfigError&) {
      continue;
    }
    EXPECT_LE(estimate_memory(plan), budget);
    double vol = 1.0;
    for (auto e : plan.patch_size) vol *= static_cast<double>(e);
    EXPECT_GE(vol, prev_volume) << "budget " << budget;
    prev_volume = vol;
  }
  EXPECT_GT(prev_volume, 0.0);
}
