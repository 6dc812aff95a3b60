#include <gtest/gtest.h>

#include <cmath>

#include "fluxop/conv1d.hpp"
#include "fluxop/gradcheck.hpp"
#include "fluxop/loss.hpp"
#include "fluxop/nn.hpp"

using namespace fluxop;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, RngStream& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Central-difference check of sum(output .* weights) for one network.
GradCheckReport check_mlp(MLPParams& p, const Matrix& x, const Matrix& w, RngStream& rng) {
  const auto loss = [&] { return (predict(p, x).array() * w.array()).sum(); };
  const GradientBundle g = backward(p, forward(p, x), w);
  GradCheckOptions opt;
  opt.probes_per_target = 60;
  return probe_gradients("mlp", p.tensors(), g.tensors(), loss, opt, rng);
}

}  // namespace

TEST(InitParams, TrunkShapes) {
  RngStream rng(1);
  const MLPParams p = init_params({2, 80, 80}, Activation::tanh, rng);
  ASSERT_EQ(p.layers.size(), 2u);
  EXPECT_EQ(p.layers[0].weight.rows(), 2);
  EXPECT_EQ(p.layers[0].weight.cols(), 80);
  EXPECT_EQ(p.layers[1].weight.rows(), 80);
  EXPECT_EQ(p.layers[1].weight.cols(), 80);
  EXPECT_EQ(p.layers[0].activation, Activation::tanh);
  EXPECT_EQ(p.layers[1].activation, Activation::identity);
  EXPECT_EQ(p.layer_sizes(), (std::vector<std::size_t>{2, 80, 80}));
}

TEST(InitParams, GlorotBoundAndZeroBias) {
  RngStream rng(2);
  const MLPParams p = init_params({190, 80, 80}, Activation::tanh, rng);
  const double bound = std::sqrt(6.0 / 270.0);
  EXPECT_NEAR(bound, 0.1491, 1e-4);
  EXPECT_LE(p.layers[0].weight.cwiseAbs().maxCoeff(), bound);
  EXPECT_GT(p.layers[0].weight.cwiseAbs().maxCoeff(), 0.9 * bound);
  EXPECT_TRUE(p.layers[0].bias.isZero());
  for (const auto& l : p.layers) EXPECT_TRUE(l.weight.allFinite());
}

TEST(InitParams, DeterministicAndValidated) {
  RngStream a(3), b(3);
  EXPECT_EQ(init_params({4, 5, 3}, Activation::tanh, a), init_params({4, 5, 3}, Activation::tanh, b));
  RngStream c(3);
  EXPECT_THROW(init_params({4}, Activation::tanh, c), ConfigError);
  EXPECT_THROW(init_params({4, 0, 2}, Activation::tanh, c), ConfigError);
}

TEST(Forward, ZeroParamsGiveZero) {
  RngStream rng(4);
  MLPParams p = init_params({3, 6, 2}, Activation::tanh, rng);
  for (auto t : p.tensors()) std::fill(t.begin(), t.end(), 0.0);
  EXPECT_TRUE(predict(p, random_matrix(5, 3, rng)).isZero());
}

TEST(Forward, HandAffineMap) {
  MLPParams p;
  DenseLayer l;
  l.weight.resize(2, 2);
  l.weight << 1.0, 2.0, 3.0, 4.0;
  l.bias.resize(2);
  l.bias << 0.5, -1.0;
  l.activation = Activation::identity;
  p.layers.push_back(l);
  Matrix x(1, 2);
  x << 1.0, -2.0;
  const Matrix y = predict(p, x);
  // [1, -2] * [[1, 2], [3, 4]] + [0.5, -1] = [-5 + 0.5, -6 - 1]
  EXPECT_DOUBLE_EQ(y(0, 0), -4.5);
  EXPECT_DOUBLE_EQ(y(0, 1), -7.0);
}

TEST(Forward, BatchRowsIndependentAndPure) {
  RngStream rng(5);
  const MLPParams p = init_params({3, 7, 7, 2}, Activation::tanh, rng);
  const Matrix x = random_matrix(6, 3, rng);
  const Matrix all = predict(p, x);
  EXPECT_EQ(all, predict(p, x));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Matrix row = predict(p, x.row(i));
    EXPECT_LE((row - all.row(i)).cwiseAbs().maxCoeff(), 1e-14);
  }
  EXPECT_THROW(predict(p, random_matrix(2, 4, rng)), ShapeError);
}

TEST(Forward, ActivationRanges) {
  RngStream rng(6);
  Matrix z = 10.0 * random_matrix(50, 50, rng);
  Matrix t = z, r = z;
  apply_activation(Activation::tanh, t);
  apply_activation(Activation::relu, r);
  EXPECT_LE(t.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_GE(r.minCoeff(), 0.0);
  for (Eigen::Index i = 0; i < z.size(); ++i) EXPECT_NEAR(t.data()[i], std::tanh(z.data()[i]), 1e-15);
}

TEST(Backward, MatchesFiniteDifferences) {
  RngStream rng(7);
  for (Activation a : {Activation::tanh, Activation::relu}) {
    MLPParams p = init_params({3, 8, 6, 2}, a, rng);
    for (auto t : p.tensors())
      for (double& v : t) v += 0.05 * rng.normal();
    const Matrix x = random_matrix(5, 3, rng);
    const Matrix w = random_matrix(5, 2, rng);
    const auto r = check_mlp(p, x, w, rng);
    EXPECT_TRUE(r.passed()) << to_string(a) << " max rel " << r.max_rel_error;
  }
}

TEST(Backward, ZeroOutputGradient) {
  RngStream rng(8);
  const MLPParams p = init_params({3, 4, 2}, Activation::tanh, rng);
  const Matrix x = random_matrix(4, 3, rng);
  const GradientBundle g = backward(p, forward(p, x), Matrix::Zero(4, 2));
  for (auto t : g.tensors())
    for (double v : t) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(g.input_grad.isZero());
}

TEST(Backward, LinearInputGradientIsWeightChain) {
  MLPParams p;
  DenseLayer a, b;
  a.weight.resize(2, 2);
  a.weight << 1.0, 2.0, 3.0, 4.0;
  b.weight.resize(2, 2);
  b.weight << 0.5, -1.0, 2.0, 0.0;
  a.bias = RowVector::Zero(2);
  b.bias = RowVector::Zero(2);
  a.activation = b.activation = Activation::identity;
  p.layers = {a, b};
  Matrix x(1, 2);
  x << 0.3, 0.7;
  Matrix og(1, 2);
  og << 1.0, 0.0;
  const GradientBundle g = backward(p, forward(p, x), og);
  // d(y0)/dx = (A B)[:, 0] = [1*0.5 + 2*2, 3*0.5 + 4*2]
  EXPECT_DOUBLE_EQ(g.input_grad(0, 0), 4.5);
  EXPECT_DOUBLE_EQ(g.input_grad(0, 1), 9.5);
}

TEST(Backward, RejectsStaleCache) {
  RngStream rng(9);
  MLPParams p = init_params({2, 3, 1}, Activation::tanh, rng);
  const Matrix x = random_matrix(2, 2, rng);
  const ForwardCache c = forward(p, x);
  ++p.revision;
  EXPECT_THROW(backward(p, c, Matrix::Ones(2, 1)), ShapeError);
}

TEST(Adam, FirstStepClosedForm) {
  double theta = 0.3;
  const double grad = 1.0;
  std::vector<std::span<double>> params{std::span<double>(&theta, 1)};
  std::vector<std::span<const double>> grads{std::span<const double>(&grad, 1)};
  AdamState s = make_adam_state(params);
  adam_update(params, grads, s);
  EXPECT_NEAR(theta - 0.3, -1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(theta - 0.3, -0.001, 1e-10);
}

TEST(Adam, ZeroGradientLeavesParams) {
  RngStream rng(10);
  MLPParams p = init_params({3, 4, 2}, Activation::tanh, rng);
  const MLPParams before = p;
  GradientBundle g = backward(p, forward(p, random_matrix(2, 3, rng)), Matrix::Zero(2, 2));
  AdamState s = make_adam_state(p.tensors());
  for (int i = 0; i < 5; ++i) adam_step(p, g, s);
  EXPECT_EQ(p, before);
}

TEST(Adam, DisjointLayersIndependent) {
  RngStream rng(11);
  MLPParams p = init_params({3, 4, 2}, Activation::tanh, rng);
  const MLPParams before = p;
  GradientBundle g = backward(p, forward(p, random_matrix(2, 3, rng)), Matrix::Ones(2, 2));
  g.layers[0].weight.setZero();
  g.layers[0].bias.setZero();
  AdamState s = make_adam_state(p.tensors());
  adam_step(p, g, s);
  EXPECT_EQ(p.layers[0].weight, before.layers[0].weight);
  EXPECT_EQ(p.layers[0].bias, before.layers[0].bias);
  EXPECT_NE(p.layers[1].weight, before.layers[1].weight);
  EXPECT_EQ(p.layers[1].weight.rows(), before.layers[1].weight.rows());
}

TEST(Adam, DeterministicRuns) {
  auto run = [] {
    RngStream rng(12);
    MLPParams p = init_params({3, 5, 1}, Activation::tanh, rng);
    const Matrix x = random_matrix(8, 3, rng);
    AdamState s = make_adam_state(p.tensors());
    for (int k = 0; k < 20; ++k) {
      const ForwardCache c = forward(p, x);
      adam_step(p, backward(p, c, c.output()), s);
      ++p.revision;
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, NonFiniteGradientRejected) {
  double theta = 1.0, grad = NAN;
  std::vector<std::span<double>> params{std::span<double>(&theta, 1)};
  std::vector<std::span<const double>> grads{std::span<const double>(&grad, 1)};
  AdamState s = make_adam_state(params);
  EXPECT_THROW(adam_update(params, grads, s), TrainingError);
  EXPECT_EQ(theta, 1.0);
}

TEST(RelativeL2, Examples) {
  const std::vector<std::vector<double>> truth{{1.0, 2.0, -3.0}, {0.5, 4.0}};
  EXPECT_EQ(mean_l2_relative_error(truth, truth), 0.0);
  EXPECT_DOUBLE_EQ(mean_l2_relative_error({{0.0, 0.0, 0.0}}, {truth[0]}), 1.0);
  std::vector<std::vector<double>> scaled = truth;
  for (auto& g : scaled)
    for (double& v : g) v *= 1.1;
  EXPECT_NEAR(mean_l2_relative_error(scaled, truth), 0.1, 1e-15);
}

TEST(RelativeL2, GradientMatchesFiniteDifferences) {
  RngStream rng(13);
  std::vector<double> pred(12), truth(12), grad(12);
  for (std::size_t i = 0; i < 12; ++i) {
    pred[i] = rng.normal();
    truth[i] = rng.normal();
  }
  const std::vector<std::size_t> off{0, 5, 12};
  mean_l2_relative_error(pred, truth, off, grad);
  for (std::size_t i = 0; i < 12; ++i) {
    auto p = pred;
    p[i] += 1e-6;
    const double up = mean_l2_relative_error(p, truth, off);
    p[i] -= 2e-6;
    const double dn = mean_l2_relative_error(p, truth, off);
    EXPECT_NEAR(grad[i], (up - dn) / 2e-6, 1e-7);
  }
}

TEST(RelativeL2, ZeroTruthGroupThrows) {
  EXPECT_THROW(mean_l2_relative_error({{1.0}}, {{0.0}}), MetricError);
}

TEST(Conv1d, OutputLengthsHalveWithPadding) {
  RngStream rng(14);
  const Conv1dLayer c1 = make_conv1d(1, 8, 5, 2, 2, 190, Activation::tanh, rng);
  EXPECT_EQ(c1.output_length(), 95u);
  const Conv1dLayer c2 = make_conv1d(8, 16, 5, 2, 2, c1.output_length(), Activation::tanh, rng);
  EXPECT_EQ(c2.output_length(), 48u);
}

TEST(Conv1d, MatchesDirectSum) {
  RngStream rng(15);
  const Conv1dLayer c = make_conv1d(2, 3, 3, 2, 1, 7, Activation::identity, rng);
  const Matrix x = random_matrix(1, 14, rng);
  const Matrix y = conv1d_forward(c, x);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t j = 0; j < c.output_length(); ++j) {
      double s = c.bias(o);
      for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t k = 0; k < 3; ++k) {
          const long pos = static_cast<long>(2 * j + k) - 1;
          if (pos >= 0 && pos < 7) s += c.weight(o, ch * 3 + k) * x(0, ch * 7 + pos);
        }
      EXPECT_NEAR(y(0, o * c.output_length() + j), s, 1e-14);
    }
}

TEST(Conv1d, GradientMatchesFiniteDifferences) {
  RngStream rng(16);
  Conv1dLayer c = make_conv1d(2, 3, 5, 2, 2, 11, Activation::tanh, rng);
  for (Eigen::Index i = 0; i < c.bias.size(); ++i) c.bias(i) = 0.1 * rng.normal();
  const Matrix x = random_matrix(3, 22, rng);
  const Matrix w = random_matrix(3, static_cast<Eigen::Index>(c.output_width()), rng);
  const Conv1dGradient g = conv1d_backward(c, x, conv1d_forward(c, x), w);
  const auto loss = [&] { return (conv1d_forward(c, x).array() * w.array()).sum(); };
  std::vector<std::span<double>> params{{c.weight.data(), static_cast<std::size_t>(c.weight.size())},
                                        {c.bias.data(), static_cast<std::size_t>(c.bias.size())}};
  std::vector<std::span<const double>> grads{{g.weight.data(), static_cast<std::size_t>(g.weight.size())},
                                             {g.bias.data(), static_cast<std::size_t>(g.bias.size())}};
  const auto r = probe_gradients("conv", params, grads, loss, GradCheckOptions{}, rng);
  EXPECT_TRUE(r.passed()) << r.max_rel_error;
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(gradcheck_rel_error(1e-9, 0.0, 1e-6), 1e-3);
  EXPECT_DOUBLE_EQ(gradcheck_rel_error(2.0, 1.0, 1e-6), 0.5);
}
