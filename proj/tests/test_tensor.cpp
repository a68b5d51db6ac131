#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace ternforge;

TEST(Shape, ZeroDimIsEmptyTensor) {
  EXPECT_ERRC(Shape({2, 0}), Errc::kEmptyTensor);
  EXPECT_EQ(Shape({2, 3, 4}).numel(), 24u);
  EXPECT_EQ(to_string(Shape({2, 3})), "[2, 3]");
}

TEST(Tensor, BufferSizeMustMatchShape) {
  EXPECT_ERRC(F32Tensor(Shape{2, 2}, std::vector<float>(3)), Errc::kShapeMismatch);
  F32Tensor t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.row(1)[0], 4.0f);
}

TEST(ReduceAbsMean, Examples) {
  EXPECT_FLOAT_EQ(reduce_abs_mean(F32Tensor(Shape{2, 2}, {1, -1, 1, -1})), 1.0f);
  EXPECT_FLOAT_EQ(reduce_abs_mean(F32Tensor(Shape{2, 2}, {0, 0, 0, 0})), 0.0f);
  const std::vector<float> v{3, -1, 0, 0};
  double hand = 0;
  for (float x : v) hand += std::abs(x);
  hand /= static_cast<double>(v.size());
  EXPECT_FLOAT_EQ(reduce_abs_mean(F32Tensor(Shape{2, 2}, v)), static_cast<float>(hand));
  EXPECT_ERRC(reduce_abs_mean(std::span<const float>{}), Errc::kEmptyTensor);
}

TEST(ReduceAbsMax, FeatureAxis) {
  const auto m = reduce_abs_max(F32Tensor(Shape{2, 2}, {0.5f, -1.0f, 2.0f, 0.25f}));
  EXPECT_EQ(m.shape(), Shape({2}));
  EXPECT_FLOAT_EQ(m[0], 1.0f);
  EXPECT_FLOAT_EQ(m[1], 2.0f);
  EXPECT_FLOAT_EQ(reduce_abs_max(F32Tensor(Shape{1, 2}, {0, 0}))[0], 0.0f);
  const auto col = reduce_abs_max(F32Tensor(Shape{3, 1}, {-7, 3, 0.5f}));
  EXPECT_EQ(col.data()[0], 7.0f);
  EXPECT_EQ(col.data()[1], 3.0f);
  EXPECT_EQ(col.data()[2], 0.5f);
}

TEST(ReduceAbsMax, SpatialAxes) {
  F32Tensor x(Shape{2, 2, 2}, {1, -4, 2, 0, 0, 0, 0, -0.5f});
  const auto m = reduce_abs_max(x, TrailingAxes{2});
  EXPECT_EQ(m.shape(), Shape({2}));
  EXPECT_EQ(m[0], 4.0f);
  EXPECT_EQ(m[1], 0.5f);
  EXPECT_EQ(reduce_abs_max(x, TrailingAxes{3}).shape(), Shape({1}));
  EXPECT_ERRC(reduce_abs_max(x, TrailingAxes{4}), Errc::kShapeMismatch);
}

TEST(I32Accumulator, ReductionCap) {
  EXPECT_NO_THROW(I32Accumulator(Shape{1, 1}, kMaxReductionLength));
  EXPECT_ERRC(I32Accumulator(Shape{1, 1}, kMaxReductionLength + 1), Errc::kAccumOverflowRisk);
}

TEST(AllFinite, DetectsNanAndInf) {
  std::vector<float> v{1, 2, 3};
  EXPECT_TRUE(all_finite(v));
  v[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(all_finite(v));
  v[1] = std::numeric_limits<float>::infinity();
  EXPECT_FALSE(all_finite(v));
}

TEST(Error, MessageCarriesName) {
  const Error e(Errc::kCorruptTrit, "byte 3");
  EXPECT_EQ(std::string(e.what()), "CORRUPT_TRIT: byte 3");
  EXPECT_EQ(e.detail(), "byte 3");
}
