#include <gtest/gtest.h>

#include <cmath>

#include "mpc/autograd.hpp"
#include "test_util.hpp"

namespace mpc {
namespace {

using testing::random_tensor;

Tensor eval_matmul(const Tensor& a, const Tensor& b) {
  Graph g;
  return matmul(g.constant(a), g.constant(b)).value();
}

TEST(Tensor, ShapeAndLiterals) {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.at(1, 2), 6.0);
  EXPECT_EQ(Tensor::vector({1, 2}).rows(), 1u);
  EXPECT_EQ(Tensor::scalar(3.5).item(), 3.5);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), Error);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), Error);
  EXPECT_THROW(m.reshaped(Shape{4}), Error);
  EXPECT_EQ(m.reshaped(Shape{3, 2}).at(2, 1), 6.0);
}

TEST(Tensor, AllFinite) {
  Tensor t = Tensor::vector({1, 2});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Matmul, IdentityAndProjector) {
  const Tensor x = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(eval_matmul(Tensor::matrix({{1, 0}, {0, 1}}), x), x);
  EXPECT_EQ(eval_matmul(Tensor::matrix({{1, 0}, {0, 0}}), Tensor::matrix({{5}, {7}})), Tensor::matrix({{5}, {0}}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor(3, 4, rng);
    const Tensor b = random_tensor(4, 2, rng);
    const Tensor c = eval_matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
        EXPECT_NEAR(c.at(i, j), s, 1e-12);
      }
    }
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    eval_matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Softmax, Examples) {
  Graph g;
  const Tensor half = softmax(g.constant(Tensor::vector({0, 0}))).value();
  EXPECT_DOUBLE_EQ(half[0], 0.5);
  EXPECT_DOUBLE_EQ(half[1], 0.5);

  const Tensor y = softmax(g.constant(Tensor::vector({1, 2, 3}))).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], std::exp(i + 1.0) / z, 1e-12);
}

TEST(Softmax, ShiftInvarianceAndRowSums) {
  Rng rng(5);
  Graph g;
  const Tensor x = random_tensor(4, 6, rng, -5, 5);
  Tensor shifted = x;
  for (double& v : shifted.data()) v += 123.25;
  const Tensor a = softmax(g.constant(x), 1).value();
  const Tensor b = softmax(g.constant(shifted), 1).value();
  EXPECT_LE(testing::max_abs_diff(a, b), 1e-12);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (double v : a.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  const Tensor cols = softmax(g.constant(x), 0).value();
  for (std::size_t j = 0; j < 6; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += cols.at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, EmptyAxisRejected) {
  Graph g;
  EXPECT_THROW(softmax(g.constant(Tensor::zeros(2, 0)), 1), Error);
}

TEST(LayerNorm, Examples) {
  Graph g;
  const Var one = g.constant(Tensor::vector({1, 1}));
  const Var zero = g.constant(Tensor::vector({0, 0}));
  const Tensor c = layer_norm(g.constant(Tensor::matrix({{2, 2}})), one, zero).value();
  EXPECT_EQ(c.at(0, 0), 0.0);
  EXPECT_EQ(c.at(0, 1), 0.0);
  const Tensor y = layer_norm(g.constant(Tensor::matrix({{1, 3}})), one, zero, 1e-300).value();
  EXPECT_NEAR(y.at(0, 0), -1.0, 1e-12);
  EXPECT_NEAR(y.at(0, 1), 1.0, 1e-12);
}

TEST(LayerNorm, MeanIsBeta) {
  Rng rng(9);
  Graph g;
  const Tensor x = random_tensor(5, 8, rng, -3, 3);
  const Var gamma = g.constant(Tensor(Shape{8}, 1.0));
  const Tensor y0 = layer_norm(g.constant(x), gamma, g.constant(Tensor(Shape{8}, 0.0))).value();
  const Tensor y1 = layer_norm(g.constant(x), gamma, g.constant(Tensor(Shape{8}, 0.75))).value();
  for (std::size_t i = 0; i < 5; ++i) {
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      m0 += y0.at(i, j) / 8.0;
      m1 += y1.at(i, j) / 8.0;
    }
    EXPECT_LE(std::abs(m0), 1e-10);
    EXPECT_NEAR(m1, 0.75, 1e-10);
  }
}

}  // namespace
}  // namespace mpc
