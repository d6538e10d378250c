#include <gtest/gtest.h>

#include <map>
#include <numeric>

#include "gradchecks.hpp"
#include "sdpoint/error.hpp"
#include "sdpoint/sdpoint.hpp"

using namespace sdpoint;
using namespace sdpoint::testing;

TEST(Catalog, SizesAndOrder) {
  EXPECT_EQ(enumerate_instances(12, {0.5, 0.75}).size(), 25u);
  EXPECT_EQ(enumerate_instances(6, {0.5, 0.75}).size(), 13u);
  EXPECT_EQ(enumerate_instances(18, {0.75, 0.5}).size(), 37u);
  EXPECT_EQ(enumerate_instances(0, {0.5}).size(), 1u);
  const InstanceCatalog c = enumerate_instances(2, {0.75, 0.5});
  EXPECT_EQ(c.ids(), (std::vector<std::string>{"p0", "p1_r50", "p1_r75", "p2_r50", "p2_r75"}));
  EXPECT_EQ(c.find("p2_r50").point, 2u);
  EXPECT_THROW(c.find("p3_r50"), UsageError);
  EXPECT_THROW(enumerate_instances(2, {}), UsageError);
  EXPECT_THROW(enumerate_instances(2, {0.5, 0.5}), UsageError);
  EXPECT_THROW(enumerate_instances(2, {1.5}), UsageError);
}

TEST(Catalog, UnknownIdMessageListsValidIds) {
  const InstanceCatalog c = enumerate_instances(1, {0.5});
  try {
    c.find("p9");
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("p1_r50"), std::string::npos);
  }
}

TEST(Sampler, PointsAndRatiosAreUniform) {
  const InstanceCatalog c = enumerate_instances(6, {0.5, 0.75});
  Rng rng(17);
  std::map<std::size_t, int> points;
  std::map<double, int> ratios;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const Instance inst = sample_instance(c, rng);
    ++points[inst.point];
    if (!inst.is_identity()) ++ratios[inst.ratio];
  }
  for (const auto& [p, n] : points) EXPECT_NEAR(static_cast<double>(n) / draws, 1.0 / 7.0, 0.005) << p;
  const int non_identity = draws - points[0];
  for (const auto& [r, n] : ratios) EXPECT_NEAR(static_cast<double>(n) / non_identity, 0.5, 0.005) << r;
}

TEST(Sampler, IdentityStillConsumesTheRatioDraw) {
  const InstanceCatalog c = enumerate_instances(0, {0.5, 0.75});
  Rng rng(1);
  sample_instance(c, rng);
  EXPECT_EQ(rng.counter(), 2u);
}

TEST(TargetSize, RoundsHalfUpAndNeverVanishes) {
  EXPECT_EQ(target_size(28, 0.75), 21u);
  EXPECT_EQ(target_size(32, 0.5), 16u);
  EXPECT_EQ(target_size(8, 0.75), 6u);
  EXPECT_EQ(target_size(7, 0.5), 4u);  // 3.5 rounds up
  EXPECT_EQ(target_size(1, 0.5), 1u);
}

TEST(PoolWindows, CoverEveryInput) {
  for (std::size_t in = 1; in <= 40; ++in) {
    for (std::size_t out = 1; out <= in; ++out) {
      const auto w = pool_windows(in, out);
      ASSERT_EQ(w.size(), out);
      EXPECT_EQ(w.front().start, 0u);
      EXPECT_EQ(w.back().end, in);
      for (std::size_t j = 0; j < out; ++j) {
        EXPECT_GT(w[j].length(), 0u);
        if (j) EXPECT_LE(w[j].start, w[j - 1].end);  // contiguous or overlapping
      }
    }
  }
  EXPECT_THROW(pool_windows(4, 5), UsageError);
  EXPECT_THROW(pool_windows(4, 0), UsageError);
}

TEST(PoolWindows, TwentyEightToTwentyOne) {
  const auto w = pool_windows(28, 21);
  EXPECT_EQ(w[0], (PoolWindow{0, 2}));
  EXPECT_EQ(w[1], (PoolWindow{1, 3}));
  EXPECT_EQ(w[20], (PoolWindow{26, 28}));
}

TEST(AdaptivePool, FourByFourToTwoByTwo) {
  Tensor4 x({1, 1, 4, 4});
  std::iota(x.data().begin(), x.data().end(), 0.0f);
  const Tensor4 y = adaptive_avg_pool_forward(x, 2, 2);
  EXPECT_EQ(y, Tensor4({1, 1, 2, 2}, {2.5f, 4.5f, 10.5f, 12.5f}));
}

TEST(AdaptivePool, ConstantsPreservedExactly) {
  Tensor4 x({2, 3, 28, 28}, 0.3f);
  const Tensor4 y = adaptive_avg_pool_forward(x, 21, 21);
  for (float v : y.data()) EXPECT_EQ(v, 0.3f);
}

TEST(AdaptivePool, GradientMassConserved) {
  // Every window here has a power-of-two area, so all partial sums are exact.
  for (auto [in, out] : {std::pair{28, 21}, std::pair{8, 6}, std::pair{16, 12}, std::pair{32, 16}}) {
    AdaptivePoolCache cache;
    Tensor4d x({1, 1, static_cast<std::size_t>(in), static_cast<std::size_t>(in)}, 1.0);
    const Tensor4d y = adaptive_avg_pool_forward(x, out, out, &cache);
    Tensor4d g(y.shape(), 1.0);
    const Tensor4d gx = adaptive_avg_pool_backward(g, cache);
    double mass = 0.0;
    for (double v : gx.data()) mass += v;
    EXPECT_DOUBLE_EQ(mass, static_cast<double>(out * out)) << in << "->" << out;
  }
}

TEST(Gradients, AdaptivePool) {
  EXPECT_LT(check_adaptive_pool(31, 7, 7, 5, 5), 1e-5);
  EXPECT_LT(check_adaptive_pool(32, 8, 6, 6, 3), 1e-5);
  EXPECT_LT(check_adaptive_pool(33, 5, 5, 1, 1), 1e-5);
}

TEST(Gradients, NetworkUnderEveryInstanceKind) {
  EXPECT_LT(check_network(41, Instance{}), 1e-5);
  EXPECT_LT(check_network(42, Instance{1, 0.5}), 1e-5);
  EXPECT_LT(check_network(43, Instance{2, 0.75}), 1e-5);
  EXPECT_LT(check_network(44, Instance{3, 0.5}), 1e-5);
}

TEST(PaddedRatio, SmallMaps) {
  EXPECT_NEAR(padded_pixel_ratio(8, 8, 3, 1), 0.4375, 1e-12);
  EXPECT_NEAR(padded_pixel_ratio(6, 6, 3, 1), 20.0 / 36.0, 1e-12);
  EXPECT_EQ(padded_pixel_ratio(8, 8, 3, 0), 0.0);
  EXPECT_EQ(padded_pixel_ratio(1, 1, 3, 1), 1.0);
}

TEST(SDPointForward, IdentityMatchesPlainForwardBitForBit) {
  Network<float> net(tiny_residual_spec(), 5);
  Rng rng(6);
  // Running statistics from one training step so eval mode works.
  ForwardContext train_ctx;
  train_ctx.bn_mode = BnMode::kTrain;
  net.forward(random_tensor<float>({4, 3, 8, 8}, rng), train_ctx);
  for (int i = 0; i < 10; ++i) {
    const Tensor4 x = random_tensor<float>({2, 3, 8, 8}, rng);
    ForwardContext a, b;
    EXPECT_EQ(sdpoint_forward(net, x, Instance{}, a), net.forward(x, b));
  }
}

TEST(SDPointForward, PoolChangesDownstreamShapes) {
  const NetworkSpec spec = wide_resnet_spec(16, 2, 10);
  EXPECT_EQ(spatial_trace(spec, Instance{}, 32), (std::vector<std::size_t>{0, 32, 32, 32, 16, 16, 8, 8}));
  EXPECT_EQ(spatial_trace(spec, Instance{2, 0.5}, 32), (std::vector<std::size_t>{0, 32, 32, 16, 8, 8, 4, 4}));
  EXPECT_EQ(spatial_trace(spec, Instance{6, 0.75}, 32), (std::vector<std::size_t>{0, 32, 32, 32, 16, 16, 8, 6}));
  EXPECT_EQ(spatial_trace(spec, Instance{1, 0.75}, 32), (std::vector<std::size_t>{0, 32, 24, 24, 12, 12, 6, 6}));
}
