#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "hrac/nn.hpp"

using namespace hrac::nn;
using MatD = Matrix<double>;

namespace {

MatD random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// loss = sum(weights .* net(x)); its output gradient is `weights`.
double weighted_sum(const Mlp<double>& net, const MatD& x, const MatD& weights) {
  return net.forward(x).cwiseProduct(weights).sum();
}

void expect_gradients_match(std::vector<std::size_t> sizes, Activation out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Mlp<double> net(sizes, out, rng);
  const MatD x = random_matrix(static_cast<Eigen::Index>(sizes.front()), 3, seed + 1);
  const MatD w = random_matrix(static_cast<Eigen::Index>(sizes.back()), 3, seed + 2);
  auto tape = net.forward_tape(x);
  MatD dx;
  auto grads = net.backward(tape, w, &dx);
  auto res = hrac_test::check_parameter_gradients(
      net, [&](const Mlp<double>& n) { return weighted_sum(n, x, w); }, grads, 400, seed);
  EXPECT_LT(res.max_rel_error, 1e-4);
  auto in = hrac_test::check_input_gradient([&](const MatD& xi) { return weighted_sum(net, xi, w); }, x, dx);
  EXPECT_LT(in.max_rel_error, 1e-4);
}

}  // namespace

TEST(Forward, ZeroParametersGiveZero) {
  std::mt19937_64 rng(0);
  Mlp<double> net({3, 5, 2}, Activation::identity, rng);
  net.for_each_parameter([](double& p) { p = 0.0; });
  EXPECT_TRUE(net.forward(random_matrix(3, 4, 1)).isZero());
}

TEST(Forward, IdentityLayerEchoes) {
  std::mt19937_64 rng(0);
  Mlp<double> net({4, 4}, Activation::identity, rng);
  net.layers()[0].w.setIdentity();
  net.layers()[0].b.setZero();
  const MatD x = random_matrix(4, 2, 3);
  EXPECT_EQ(net.forward(x), x);
}

TEST(Forward, SeededDeterminism) {
  std::mt19937_64 a(42), b(42);
  Mlp<float> n1({2, 16, 16, 3}, Activation::tanh, a), n2({2, 16, 16, 3}, Activation::tanh, b);
  Matrix<float> x(2, 1);
  x << 0.3f, -0.7f;
  EXPECT_EQ(n1.forward(x), n2.forward(x));
}

TEST(Forward, DimensionMismatchThrows) {
  std::mt19937_64 rng(0);
  Mlp<double> net({3, 2}, Activation::identity, rng);
  EXPECT_THROW(net.forward(MatD::Zero(2, 1)), std::invalid_argument);
}

TEST(Forward, InitWithinFanInBound) {
  std::mt19937_64 rng(1);
  Mlp<double> net({16, 8, 4}, Activation::identity, rng);
  EXPECT_EQ(net.parameter_count(), 16u * 8 + 8 + 8 * 4 + 4);
  EXPECT_LE(net.layers()[0].w.cwiseAbs().maxCoeff(), 0.25);
  EXPECT_LE(net.layers()[1].b.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(8.0));
}

TEST(Backward, LinearSquaredLossClosedForm) {
  std::mt19937_64 rng(3);
  Mlp<double> net({3, 2}, Activation::identity, rng);
  MatD x(3, 1), y(2, 1);
  x << 1.0, -2.0, 0.5;
  y << 0.3, 0.1;
  auto tape = net.forward_tape(x);
  const MatD residual = tape.output - y;  // d/dout of 0.5 * |out - y|^2
  auto g = net.backward(tape, residual);
  EXPECT_TRUE(g.w[0].isApprox(residual * x.transpose(), 1e-14));
  EXPECT_TRUE(g.b[0].isApprox(residual.col(0), 1e-14));
}

TEST(Backward, ConstantLossHasZeroGradient) {
  std::mt19937_64 rng(4);
  Mlp<double> net({3, 7, 2}, Activation::tanh, rng);
  auto tape = net.forward_tape(random_matrix(3, 5, 2));
  MatD dx;
  auto g = net.backward(tape, MatD::Zero(2, 5), &dx);
  for (std::size_t l = 0; l < g.w.size(); ++l) {
    EXPECT_TRUE(g.w[l].isZero());
    EXPECT_TRUE(g.b[l].isZero());
  }
  EXPECT_TRUE(dx.isZero());
}

TEST(Backward, RequiresCachedForward) {
  std::mt19937_64 rng(5);
  Mlp<double> net({2, 2}, Activation::identity, rng);
  EXPECT_THROW(net.backward(Tape<double>{}, MatD::Zero(2, 1)), std::logic_error);
}

TEST(GradientCheck, SmallNets) {
  expect_gradients_match({4, 6, 5, 3}, Activation::identity, 10);
  expect_gradients_match({3, 8, 2}, Activation::tanh, 11);
  expect_gradients_match({2, 3}, Activation::relu, 12);
}

TEST(GradientCheck, RepoArchitectures) {
  expect_gradients_match({2, 128, 128, 128, 32}, Activation::identity, 20);  // adjacency embedding
  expect_gradients_match({3, 300, 300, 2}, Activation::tanh, 21);            // high-level actor
  expect_gradients_match({5, 300, 300, 1}, Activation::identity, 22);        // critics
  expect_gradients_match({5, 300, 300, 4}, Activation::identity, 23);        // low-level actor logits
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::mt19937_64 rng(6);
  Mlp<double> net({3, 4, 2}, Activation::identity, rng);
  const auto before = net.flat();
  Adam<double> opt(net, 1e-3);
  for (int i = 0; i < 10; ++i) opt.step(net, net.zero_gradients());
  EXPECT_EQ(net.flat(), before);
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  std::mt19937_64 rng(7);
  Mlp<double> net({2, 2}, Activation::identity, rng);
  Adam<double> opt(net, 1e-3);
  auto g = net.zero_gradients();
  g.w[0].setConstant(0.37);
  g.b[0].setConstant(-2.5);
  std::vector<double> prev = net.flat(), step;
  for (int i = 0; i < 2000; ++i) {
    opt.step(net, g);
    auto now = net.flat();
    step.clear();
    for (std::size_t j = 0; j < now.size(); ++j) step.push_back(std::abs(now[j] - prev[j]));
    prev = now;
  }
  for (double s : step) EXPECT_NEAR(s, 1e-3, 1e-7);
}

TEST(Adam, IdenticalRunsIdenticalTrajectories) {
  auto run = [] {
    std::mt19937_64 rng(8);
    Mlp<float> net({2, 8, 1}, Activation::identity, rng);
    Adam<float> opt(net, 1e-2);
    Matrix<float> x = random_matrix(2, 16, 11).cast<float>();
    for (int i = 0; i < 50; ++i) {
      auto tape = net.forward_tape(x);
      opt.step(net, net.backward(tape, tape.output));
    }
    return net.flat();
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTrip) {
  std::mt19937_64 rng(9);
  Mlp<float> net({3, 5, 2}, Activation::tanh, rng);
  auto back = mlp_from_json<float>(to_json(net));
  EXPECT_EQ(back.sizes(), net.sizes());
  EXPECT_EQ(back.output_activation(), Activation::tanh);
  EXPECT_EQ(back.flat(), net.flat());
  EXPECT_THROW(mlp_from_json<float>(nlohmann::json{{"format", "other"}}), std::invalid_argument);
}

TEST(SoftUpdate, Interpolates) {
  std::mt19937_64 rng(10);
  Mlp<double> a({2, 2}, Activation::identity, rng), b({2, 2}, Activation::identity, rng);
  auto fa = a.flat(), fb = b.flat();
  a.soft_update_from(b, 0.25);
  auto fr = a.flat();
  for (std::size_t i = 0; i < fr.size(); ++i) EXPECT_NEAR(fr[i], 0.25 * fb[i] + 0.75 * fa[i], 1e-15);
}
