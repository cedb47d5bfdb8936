#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "iex/diffcore.hpp"
#include "iex/hypergen.hpp"
#include "test_util.hpp"

using namespace iex;

namespace {

// Straight-line forward pass for a 2-3-1 tanh net, written without Eigen.
double manual_2_3_1(const std::vector<double>& p, double x0, double x1) {
  // layout per layer: weights row-major (out x in), then bias
  double out = p[9 + 3];
  for (int j = 0; j < 3; ++j) {
    double z = p[6 + j] + p[2 * j] * x0 + p[2 * j + 1] * x1;
    out += p[9 + j] * std::tanh(z);
  }
  return out;
}

MlpGradients batch_backward(const MlpSpec& s, const std::vector<double>& p, const Matrix& x, const Matrix& g) {
  MlpGradients out;
  out.params.assign(p.size(), 0.0);
  Matrix gin = backward_batch(s, p, forward_trace(s, p, x), g, out.params);
  out.input.assign(gin.data(), gin.data() + gin.size());
  return out;
}

}  // namespace

TEST(Forward, IdentityOneLayer) {
  MlpSpec s{{1, 1}, Activation::identity};
  std::vector<double> p = {1.0, 0.0};
  EXPECT_DOUBLE_EQ(forward(s, p, std::vector<double>{3.0})[0], 3.0);
}

TEST(Forward, ZeroParamsGiveZero) {
  MlpSpec s{{3, 4, 2}, Activation::tanh};
  std::vector<double> p(s.param_count(), 0.0);
  auto y = forward(s, p, std::vector<double>{1.0, -2.0, 5.0});
  EXPECT_EQ(y, std::vector<double>(2, 0.0));
}

TEST(Forward, MatchesManualTwoThreeOne) {
  MlpSpec s{{2, 3, 1}, Activation::tanh};
  Rng rng(3);
  auto p = init_params(s, rng);
  ASSERT_EQ(p.size(), 13u);
  EXPECT_NEAR(forward(s, p, std::vector<double>{0.3, -0.7})[0], manual_2_3_1(p, 0.3, -0.7), 1e-12);
}

TEST(Forward, Deterministic) {
  MlpSpec s{{4, 8, 2}, Activation::relu};
  Rng rng(1);
  auto p = init_params(s, rng);
  std::vector<double> x = {0.1, 0.2, -0.3, 0.4};
  EXPECT_EQ(forward(s, p, x), forward(s, p, x));
}

TEST(Forward, RejectsWrongParamCount) {
  MlpSpec s{{2, 2}, Activation::tanh};
  std::vector<double> p(3, 0.0);
  EXPECT_THROW(forward(s, p, std::vector<double>{1.0, 1.0}), rejected_input);
}

TEST(Backward, LinearCase) {
  MlpSpec s{{1, 1}, Activation::identity};
  std::vector<double> p = {2.0, 0.0};
  auto grads = backward(s, p, std::vector<double>{3.0}, std::vector<double>{1.0});
  EXPECT_DOUBLE_EQ(grads.params[0], 3.0);
  EXPECT_DOUBLE_EQ(grads.params[1], 1.0);
  EXPECT_DOUBLE_EQ(grads.input[0], 2.0);
}

TEST(Backward, ZeroOutputGradient) {
  MlpSpec s{{3, 5, 2}, Activation::tanh};
  Rng rng(2);
  auto p = init_params(s, rng);
  Matrix x = Matrix::Random(2, 3);
  auto grads = batch_backward(s, p, x, Matrix::Zero(2, 2));
  for (double v : grads.params) EXPECT_EQ(v, 0.0);
  for (double v : grads.input) EXPECT_EQ(v, 0.0);
}

TEST(Backward, FiniteDifferencesFourEightEightTwo) {
  MlpSpec s{{4, 8, 8, 2}, Activation::tanh};
  Rng rng(5);
  auto p = init_params(s, rng);
  Matrix x = test::random_matrix(3, 4, rng);
  Matrix g = test::random_matrix(3, 2, rng);
  auto J = [&](const std::vector<double>& q, const Matrix& in) { return forward_batch(s, q, in).cwiseProduct(g).sum(); };
  auto grads = batch_backward(s, p, x, g);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto q = p;
    q[k] += h;
    double up = J(q, x);
    q[k] -= 2 * h;
    double fd = (up - J(q, x)) / (2 * h);
    worst = std::max(worst, test::rel_err(grads.params[k], fd));
  }
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Matrix y = x;
    y.data()[k] += h;
    double up = J(p, y);
    y.data()[k] -= 2 * h;
    double fd = (up - J(p, y)) / (2 * h);
    worst = std::max(worst, test::rel_err(grads.input[static_cast<std::size_t>(k)], fd));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Backward, ReluAndIdentityFiniteDifferences) {
  for (Activation a : {Activation::relu, Activation::identity}) {
    MlpSpec s{{3, 6, 2}, a};
    Rng rng(9);
    auto p = init_params(s, rng);
    Matrix x = test::random_matrix(4, 3, rng);
    Matrix g = test::random_matrix(4, 2, rng);
    auto grads = batch_backward(s, p, x, g);
    const double h = 1e-6;
    for (std::size_t k = 0; k < p.size(); ++k) {
      auto q = p;
      q[k] += h;
      double up = forward_batch(s, q, x).cwiseProduct(g).sum();
      q[k] -= 2 * h;
      double down = forward_batch(s, q, x).cwiseProduct(g).sum();
      EXPECT_LT(test::rel_err(grads.params[k], (up - down) / (2 * h)), 1e-4) << to_string(a) << " k=" << k;
    }
  }
}

TEST(Adam, ZeroGradientNoDecayLeavesParams) {
  AdamConfig c;
  c.learning_rate = 0.1;
  AdamState st(c, 3);
  std::vector<double> p = {1.0, -2.0, 0.5}, g(3, 0.0);
  auto before = p;
  adam_step(st, p, g);
  EXPECT_EQ(p, before);
}

TEST(Adam, TwoStepHandComputation) {
  AdamConfig c;
  c.learning_rate = 0.1;
  AdamState st(c, 1);
  std::vector<double> p = {1.0}, g = {1.0};
  // Step 1: m=0.1, v=0.001, mhat=1, vhat=1 -> 1 - 0.1/(1+1e-8)
  // Step 2: m=0.19, v=0.001999, mhat=1, vhat=1 -> same decrement again
  const double step = 0.1 * 1.0 / (1.0 + 1e-8);
  adam_step(st, p, g);
  EXPECT_NEAR(p[0], 1.0 - step, 1e-14);
  adam_step(st, p, g);
  const double m2 = 0.9 * 0.1 + 0.1, v2 = 0.999 * 0.001 + 0.001;
  const double mh = m2 / (1 - 0.81), vh = v2 / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p[0], 1.0 - step - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-14);
}

TEST(Adam, WeightDecayShrinksMagnitude) {
  AdamConfig c;
  c.learning_rate = 0.01;
  c.weight_decay = 0.1;
  AdamState st(c, 2);
  std::vector<double> p = {2.0, -3.0}, g(2, 0.0);
  for (int i = 0; i < 5; ++i) {
    auto before = p;
    adam_step(st, p, g);
    EXPECT_LT(std::abs(p[0]), std::abs(before[0]));
    EXPECT_LT(std::abs(p[1]), std::abs(before[1]));
  }
}

TEST(Adam, RejectsBadConfig) {
  AdamConfig c;
  c.learning_rate = -1.0;
  EXPECT_THROW(c.validate(), rejected_input);
  c.learning_rate = 0.1;
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), rejected_input);
}

TEST(Init, FanInBounds) {
  MlpSpec s{{16, 4, 3}, Activation::tanh};
  Rng rng(0);
  auto p = init_params(s, rng);
  for (std::size_t j = 0; j < s.layer_count(); ++j) {
    const double b = 1.0 / std::sqrt(double(s.fan_in(j)));
    for (std::size_t k = 0; k < s.layer_param_count(j); ++k) EXPECT_LE(std::abs(p[s.layer_offset(j) + k]), b);
  }
}
