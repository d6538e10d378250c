#include <gtest/gtest.h>

#include <array>
#include <limits>

#include "sdpoint/error.hpp"
#include "sdpoint/rng.hpp"
#include "sdpoint/tensor.hpp"

using namespace sdpoint;

TEST(Tensor, IndexingIsRowMajor) {
  Tensor4 t({2, 3, 4, 5});
  t(1, 2, 3, 4) = 7.0f;
  EXPECT_EQ(t.index(1, 2, 3, 4), t.size() - 1);
  EXPECT_EQ(t[t.size() - 1], 7.0f);
  EXPECT_EQ(t.plane(1, 2) + 19, &t(1, 2, 3, 4));
}

TEST(Tensor, RejectsZeroDimensionAndWrongDataLength) {
  EXPECT_THROW(Tensor4({0, 1, 1, 1}), UsageError);
  EXPECT_THROW(Tensor4({1, 1, 2, 2}, std::vector<float>(3)), UsageError);
  const std::size_t huge = std::numeric_limits<std::size_t>::max() / 2;
  EXPECT_THROW(checked_volume({huge, huge, 1, 1}), UsageError);
}

TEST(Tensor, ElementwiseOpsAndShapeMismatch) {
  Tensor4 a({1, 1, 1, 3}, {1, 2, 3});
  Tensor4 b({1, 1, 1, 3}, {4, 5, 6});
  EXPECT_EQ(elementwise(ElementwiseOp::kAdd, a, b), Tensor4({1, 1, 1, 3}, {5, 7, 9}));
  EXPECT_EQ(elementwise(ElementwiseOp::kSub, a, b), Tensor4({1, 1, 1, 3}, {-3, -3, -3}));
  EXPECT_EQ(elementwise(ElementwiseOp::kMul, a, b), Tensor4({1, 1, 1, 3}, {4, 10, 18}));
  EXPECT_THROW(elementwise(ElementwiseOp::kAdd, a, Tensor4({1, 1, 3, 1})), UsageError);
  add_inplace(a, b);
  EXPECT_EQ(a, Tensor4({1, 1, 1, 3}, {5, 7, 9}));
}

TEST(Tensor, SpatialMeanIsCompensated) {
  // One large value followed by many tiny ones: naive float summation loses the tail.
  Tensor4 t({1, 1, 1, 10001}, 1e-4f);
  t[0] = 1e4f;
  const float mean = reduce_spatial_mean(t)[0];
  const double exact = (1e4 + 10000 * static_cast<double>(1e-4f)) / 10001.0;
  EXPECT_NEAR(mean, exact, 1e-6 * exact);
}

TEST(Tensor, SampleAndCast) {
  Tensor4 t({2, 1, 1, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.sample(1), Tensor4({1, 1, 1, 2}, {3, 4}));
  Tensor4d d = t.cast<double>();
  EXPECT_EQ(d[3], 4.0);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
  EXPECT_EQ(a.counter(), 100u);
}

TEST(Rng, DeriveDoesNotAdvanceParent) {
  Rng root(5);
  Rng child = root.derive(1);
  EXPECT_EQ(root.counter(), 0u);
  EXPECT_NE(child.seed(), root.derive(2).seed());
  EXPECT_EQ(child.seed(), Rng(5).derive(1).seed());
}

TEST(Rng, UniformChoiceFrequencies) {
  Rng rng(9);
  std::array<int, 7> counts{};
  const int draws = 70000;
  for (int i = 0; i < draws; ++i) ++counts[rng.uniform_choice(7)];
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / draws, 1.0 / 7.0, 0.006);
  EXPECT_THROW(rng.uniform_choice(0), UsageError);
}

TEST(Rng, SingleOutcomeStillConsumesADraw) {
  Rng rng(3);
  EXPECT_EQ(rng.uniform_choice(1), 0u);
  EXPECT_EQ(rng.counter(), 1u);
}

TEST(Rng, UniformAndNormalMoments) {
  Rng rng(11);
  double sum = 0.0, sq = 0.0, usum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    usum += u;
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(usum / n, 0.5, 0.01);
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}
