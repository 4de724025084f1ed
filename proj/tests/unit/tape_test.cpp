#include <gtest/gtest.h>

#include "cral/errors.hpp"
#include "cral/tape.hpp"
#include "fd.hpp"

using namespace cral;

namespace {

void expect_tensor_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(Tape, MatmulExamples) {
  Tape tape;
  auto v = tape.constant(Tensor::matrix({{2}, {-3}}));
  expect_tensor_near(matmul(tape.constant(Tensor::identity(2)), v).value(), v.value(), 0);
  auto r = matmul(tape.constant(Tensor::matrix({{1, 2}, {3, 4}})), tape.constant(Tensor::matrix({{1}, {1}})));
  expect_tensor_near(r.value(), Tensor::matrix({{3}, {7}}), 0);
  EXPECT_THROW(matmul(v, v), DimensionError);
}

TEST(Tape, MatmulGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto a = fd::random_tensor({3, 4}, rng);
  auto b = fd::random_tensor({4, 2}, rng);
  const double err = fd::max_gradient_error([](auto& v) { return sum(matmul(v[0], v[1])); }, {a, b});
  EXPECT_LT(err, 1e-6);
}

TEST(Tape, ElementwiseExamples) {
  Tape tape;
  auto x = tape.variable(Tensor::vector({-1, 0, 2}));
  expect_tensor_near(relu(x).value(), Tensor::vector({0, 0, 2}), 0);

  Tape t2;
  auto y = t2.variable(Tensor::scalar(-5));
  EXPECT_EQ(t2.backward(sum(relu(y)))[y][0], 0.0);

  Tape t3;
  auto z = t3.variable(Tensor::scalar(0.5));
  EXPECT_DOUBLE_EQ(t3.backward(sum(log(z)))[z][0], 2.0);

  Tape t4;
  EXPECT_THROW(log(t4.constant(Tensor::vector({1, 0}))), ContractError);
}

TEST(Tape, ReductionExamples) {
  Tape tape;
  EXPECT_NEAR(l1_norm(tape.constant(Tensor::vector({0.2, -0.2}))).value().item(), 0.4, 1e-15);
  EXPECT_EQ(l2_norm_sq(tape.constant(Tensor::vector({3, 4}))).value().item(), 25.0);

  Tape t2;
  auto x = t2.variable(Tensor::vector({0.5, -0.5}));
  expect_tensor_near(t2.backward(l1_norm(x))[x], Tensor::vector({1, -1}), 0);

  Tape t3;
  auto m = t3.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
  expect_tensor_near(sum(m, 0).value(), Tensor::vector({5, 7, 9}), 0);
  expect_tensor_near(sum(m, 1).value(), Tensor::vector({6, 15}), 0);
  expect_tensor_near(mean(m, 0).value(), Tensor::vector({2.5, 3.5, 4.5}), 1e-15);
  EXPECT_NEAR(mean(m).value().item(), 3.5, 1e-15);
}

TEST(Tape, SoftmaxExamples) {
  Tape tape;
  expect_tensor_near(softmax_rows(tape.constant(Tensor::matrix({{0, 0}}))).value(), Tensor::matrix({{0.5, 0.5}}), 1e-15);
  auto big = softmax_rows(tape.constant(Tensor::matrix({{1000, 0}}))).value();
  EXPECT_TRUE(big.all_finite());
  EXPECT_NEAR(big[0], 1.0, 1e-15);
  EXPECT_NEAR(big[1], 0.0, 1e-15);
}

TEST(Tape, SoftmaxJacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto logits = fd::random_tensor({3, 4}, rng, -3, 3);
    auto weights = fd::random_tensor({3, 4}, rng);
    const double err = fd::max_gradient_error(
        [&](auto& v) { return sum(softmax_rows(v[0]) * v[0].tape()->constant(weights)); }, {logits});
    EXPECT_LT(err, 1e-5);
  }
}

TEST(Tape, BackwardBasics) {
  Tape tape;
  auto x = tape.variable(Tensor({2, 3}, 0.7));
  auto c = tape.constant(Tensor::scalar(4));
  auto g = tape.backward(sum(x) + c);
  expect_tensor_near(g[x], Tensor({2, 3}, 1.0), 0);
  expect_tensor_near(g[c], Tensor::scalar(0), 0);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(sum(x)), ContractError);

  Tape t2;
  auto k = t2.variable(Tensor::vector({1, 2}));
  auto unused = t2.variable(Tensor::vector({3, 4}));
  auto g2 = t2.backward(sum(t2.constant(Tensor::vector({5, 6}))) + sum(k) * 0.0);
  expect_tensor_near(g2[unused], Tensor::vector({0, 0}), 0);

  Tape t3;
  EXPECT_THROW(t3.backward(t3.variable(Tensor::vector({1, 2}))), ContractError);
}

TEST(Tape, StopGradient) {
  Tape tape;
  auto x = tape.variable(Tensor::vector({1, -2, 3}));
  auto s = stop_gradient(x);
  EXPECT_EQ(s.value(), x.value());
  auto g = tape.backward(sum(s * s) + sum(x));
  expect_tensor_near(g[x], Tensor::vector({1, 1, 1}), 0);
}

TEST(Tape, OperandsFromDifferentTapesRejected) {
  Tape a, b;
  EXPECT_THROW(add(a.constant(Tensor::scalar(1)), b.constant(Tensor::scalar(1))), ContractError);
  EXPECT_THROW(sum(Var{}), ContractError);
}

// Every differentiable op against central differences on random inputs.
TEST(Tape, OpGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const std::vector<std::pair<const char*, fd::Builder>> cases = {
      {"add", [](auto& v) { return sum((v[0] + v[1]) * v[0]); }},
      {"sub", [](auto& v) { return sum((v[0] - v[1]) * v[1]); }},
      {"mul", [](auto& v) { return sum(v[0] * v[1]); }},
      {"scale", [](auto& v) { return sum(scale(v[0], -2.5) * v[1]); }},
      {"add_scalar", [](auto& v) { return sum(add_scalar(v[0], 3.0) * v[1]); }},
      {"exp", [](auto& v) { return sum(exp(v[0]) * v[1]); }},
      {"log", [](auto& v) { return sum(log(add_scalar(v[0] * v[0], 0.5)) * v[1]); }},
      {"relu", [](auto& v) { return sum(relu(v[0]) * v[1]); }},
      {"abs", [](auto& v) { return sum(abs(v[0]) * v[1]); }},
      {"clamp_min", [](auto& v) { return sum(clamp_min(v[0], 0.1) * v[1]); }},
      {"min_scalar", [](auto& v) { return sum(min_scalar(v[0], 0.1) * v[1]); }},
      {"sum_axis0", [](auto& v) { return l2_norm_sq(sum(v[0] * v[1], 0)); }},
      {"sum_axis1", [](auto& v) { return l2_norm_sq(sum(v[0] * v[1], 1)); }},
      {"mean_axis0", [](auto& v) { return l2_norm_sq(mean(v[0] * v[1], 0)); }},
      {"l1_axis1", [](auto& v) { return sum(l1_norm(v[0] - v[1], 1) * sum(v[1], 1)); }},
      {"l2_axis0", [](auto& v) { return sum(l2_norm_sq(v[0], 0) * sum(v[1], 0)); }},
      {"matmul_tb", [](auto& v) { return l2_norm_sq(matmul_transposed_b(v[0], v[1])); }},
      {"concat", [](auto& v) { return l2_norm_sq(softmax_rows(concat_cols(v[0], v[1]))); }},
      {"row_vector", [](auto& v) { return l2_norm_sq(add_row_vector(v[0], sum(v[1], 0))); }},
      {"scalar_broadcast", [](auto& v) { return sum(v[0] * sum(v[1])); }},
  };
  for (const auto& [name, build] : cases) {
    for (int trial = 0; trial < 5; ++trial) {
      auto a = fd::random_tensor({3, 4}, rng);
      auto b = fd::random_tensor({3, 4}, rng);
      // Keep kinked ops away from their kinks.
      for (double& x : a.data()) {
        if (std::abs(x) < 1e-3 || std::abs(x - 0.1) < 1e-3) x += 0.01;
      }
      EXPECT_LT(fd::max_gradient_error(build, {a, b}), 1e-6) << name;
    }
  }
}

TEST(Tape, KinkSignatureTracksSides) {
  auto sig = [](double x) {
    Tape tape;
    relu(tape.constant(Tensor::scalar(x)));
    return tape.kink_signature();
  };
  EXPECT_EQ(sig(0.5), sig(0.7));
  EXPECT_NE(sig(0.5), sig(-0.5));
}
