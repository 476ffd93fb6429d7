#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "acr/error.hpp"
#include "acr/tensor.hpp"

using namespace acr;

TEST(Tensor, ShapeAndFill) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dim(0), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_EQ(t.numel(), 6u);
  for (double v : t.values()) EXPECT_EQ(v, 1.5);
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::matrix(2, 2, {1, 2, 3}), DimensionError);
}

TEST(Tensor, RowMajorAccess) {
  const Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at(0, 2), 3.0);
  EXPECT_EQ(t.at(1, 0), 4.0);
  EXPECT_EQ(t[4], 5.0);
}

TEST(Tensor, DimOutOfRangeThrows) {
  const Tensor t({2, 3});
  EXPECT_THROW(t.dim(2), DimensionError);
}

TEST(Tensor, Identity) {
  const Tensor i = Tensor::identity(3);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(i.at(r, c), r == c ? 1.0 : 0.0);
}

TEST(Tensor, ScalarItem) {
  EXPECT_EQ(Tensor::scalar(4.25).item(), 4.25);
  EXPECT_THROW(Tensor({2}).item(), ContractError);
}

TEST(Tensor, ReshapeKeepsData) {
  const Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.at(2, 1), 6.0);
  EXPECT_EQ(r.values(), t.values());
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, GradLifecycle) {
  Tensor t({2, 2});
  EXPECT_FALSE(t.has_grad());
  t.grad()[1] = 3.0;
  EXPECT_TRUE(t.has_grad());
  t.zero_grad();
  EXPECT_EQ(t.grad()[1], 0.0);
  t.clear_grad();
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, Finiteness) {
  Tensor t({3}, 0.0);
  EXPECT_TRUE(t.all_finite());
  t[2] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  t[2] = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(t.all_finite());
}

TEST(Tensor, MaxAbsDiffAndEquality) {
  const Tensor a = Tensor::matrix(1, 3, {1, 2, 3});
  const Tensor b = Tensor::matrix(1, 3, {1, 2.5, 2});
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 1.0);
  EXPECT_FALSE(a == b);
  EXPECT_TRUE(a == Tensor::matrix(1, 3, {1, 2, 3}));
  EXPECT_THROW(max_abs_diff(a, Tensor({3, 1})), DimensionError);
}

TEST(Tensor, ShapeHelpers) {
  EXPECT_EQ(shape_numel({2, 3, 4}), 24u);
  EXPECT_EQ(shape_str({2, 3}), "[2x3]");
}

TEST(Tensor, ZeroExtentRejected) {
  EXPECT_THROW(Tensor({0, 3}), DimensionError);
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
}

TEST(Tensor, ConstGradWithoutBufferThrows) {
  const Tensor t({2});
  EXPECT_THROW(t.grad(), StateError);
}
