#include <gtest/gtest.h>

#include <cmath>

#include "cral/errors.hpp"
#include "cral/tensor.hpp"

using namespace cral;

TEST(Tensor, ShapesAndFill) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  for (double v : t.data()) EXPECT_EQ(v, 1.5);
  EXPECT_EQ(to_string(t.shape()), "[2x3]");

  Tensor v = Tensor::vector({1, 2, 3});
  EXPECT_EQ(v.rows(), 1u);
  EXPECT_EQ(v.cols(), 3u);
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError);
  EXPECT_THROW(Tensor::vector({1, 2}).item(), DimensionError);
}

TEST(Tensor, MatrixLiteralAndAccess) {
  auto m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(m.at(1, 0), 3);
  EXPECT_EQ(m.row(1)[1], 4);
  EXPECT_EQ(Tensor::identity(3).at(2, 2), 1);
  EXPECT_EQ(Tensor::identity(3).at(0, 2), 0);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
}

TEST(Tensor, ArgmaxTiesGoLow) {
  auto t = Tensor::matrix({{0.5, 0.5}, {0.2, 0.8}, {3, 1}});
  EXPECT_EQ(argmax_rows(t), (std::vector<std::size_t>{0, 1, 0}));
}

TEST(Tensor, Finiteness) {
  auto t = Tensor::vector({1, 2});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}
