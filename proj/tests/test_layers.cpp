#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "dfop/errors.hpp"
#include "dfop/layers.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace dfop;

TEST(Tensor, ConstructionAndShapeChecks) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_DOUBLE_EQ(t.sum(), 9.0);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  EXPECT_THROW(t.reshaped({4}), ShapeError);
  Tensor u = t.reshaped({3, 2});
  EXPECT_EQ(u.dim(0), 3u);
  Tensor v({3, 2});
  EXPECT_THROW(t += v, ShapeError);
  EXPECT_TRUE(Tensor().empty());
}

TEST(Tensor, BitwiseEqualityDistinguishesSignedZero) {
  Tensor a({1}, 0.0), b({1}, -0.0);
  EXPECT_FALSE(bitwise_equal(a, b));
  EXPECT_TRUE(bitwise_equal(a, Tensor({1}, 0.0)));
}

TEST(Conv2d, ScalarMultiply) {
  const Tensor out = conv2d_forward(Tensor({1, 1, 1}, 5.0), Tensor({1, 1, 1, 1}, 2.0), Tensor({1}), 0, 1);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(out[0], 10.0);
}

TEST(Conv2d, SumOfWindow) {
  const Tensor out = conv2d_forward(Tensor({1, 3, 3}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor({1}), 0, 1);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(out[0], 9.0);
}

TEST(Conv2d, MatchesNaiveLoopOnRandomInstances) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> extent(1, 8), chans(1, 4), kern(0, 2), pad(0, 2), stride(1, 3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t c = chans(rng), o = chans(rng), h = extent(rng), w = extent(rng);
    const std::size_t k = 2 * kern(rng) + 1, p = pad(rng), s = stride(rng);
    if (k > h + 2 * p || k > w + 2 * p) continue;
    const Tensor in = oracle::random_tensor({c, h, w}, rng);
    const Tensor kernel = oracle::random_tensor({o, c, k, k}, rng);
    const Tensor bias = oracle::random_tensor({o}, rng);
    const Tensor got = conv2d_forward(in, kernel, bias, p, s);
    const Tensor want = oracle::conv2d(in, kernel, bias, p, s);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, SpecExampleFourByFour) {
  std::mt19937_64 rng(3);
  const Tensor in = oracle::random_tensor({1, 4, 4}, rng);
  const Tensor kernel = oracle::random_tensor({2, 1, 3, 3}, rng);
  const Tensor bias({2});
  const Tensor got = conv2d_forward(in, kernel, bias, 0, 1);
  const Tensor want = oracle::conv2d(in, kernel, bias, 0, 1);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Conv2d, RejectsMismatchedShapes) {
  EXPECT_THROW(conv2d_forward(Tensor({2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1}), 0, 1), ShapeError);
  EXPECT_THROW(conv2d_forward(Tensor({1, 4, 4}), Tensor({1, 1, 3, 3}), Tensor({2}), 0, 1), ShapeError);
  EXPECT_THROW(conv2d_forward(Tensor({1, 2, 2}), Tensor({1, 1, 5, 5}), Tensor({1}), 0, 1), ShapeError);
  EXPECT_THROW(conv2d_forward(Tensor({4, 4}), Tensor({1, 1, 3, 3}), Tensor({1}), 0, 1), ShapeError);
}

TEST(Conv2d, BackwardWithoutCacheIsALogicError) {
  EXPECT_THROW(conv2d_backward(Tensor({1, 1, 1}), Conv2dCache{}, Tensor({1, 1, 1, 1})), std::logic_error);
}

TEST(Conv2d, ZeroUpstreamGradientGivesZeroGradients) {
  std::mt19937_64 rng(5);
  Conv2dCache cache;
  const Tensor kernel = oracle::random_tensor({3, 2, 3, 3}, rng);
  const Tensor out = conv2d_forward(oracle::random_tensor({2, 5, 5}, rng), kernel, Tensor({3}), 1, 1, &cache);
  const Conv2dGrads g = conv2d_backward(Tensor(out.shape()), cache, kernel);
  for (const Tensor* t : {&g.input, &g.kernel, &g.bias}) {
    for (double v : t->values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Conv2d, OneByOneKernelGradientIsInputDotUpstream) {
  std::mt19937_64 rng(6);
  const Tensor in = oracle::random_tensor({1, 4, 3}, rng);
  const Tensor kernel({1, 1, 1, 1}, 0.7);
  Conv2dCache cache;
  conv2d_forward(in, kernel, Tensor({1}), 0, 1, &cache);
  const Tensor up = oracle::random_tensor({1, 4, 3}, rng);
  const Conv2dGrads g = conv2d_backward(up, cache, kernel);
  double dot = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) dot += in[i] * up[i];
  EXPECT_NEAR(g.kernel[0], dot, 1e-14);
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_NEAR(g.input[i], 0.7 * up[i], 1e-15);
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    gradcheck::ConvCase cc = gradcheck::random_conv_case(rng);
    EXPECT_LT(gradcheck::conv_error(cc), 1e-6) << "trial " << trial;
  }
}

TEST(AvgPool, MeanOfWindow) {
  const Tensor out = avgpool2d_forward(Tensor({1, 2, 2}, {1, 2, 3, 4}), 2);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(out[0], 2.5);
}

TEST(AvgPool, ConstantInputStaysConstant) {
  const Tensor out = avgpool2d_forward(Tensor({2, 6, 4}, 0.375), 2);
  for (double v : out.values()) EXPECT_EQ(v, 0.375);
}

TEST(AvgPool, MatchesOracleAndRejectsNonDividingWindow) {
  std::mt19937_64 rng(8);
  const Tensor in = oracle::random_tensor({3, 6, 6}, rng);
  const Tensor got = avgpool2d_forward(in, 3), want = oracle::avgpool(in, 3);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-15);
  EXPECT_THROW(avgpool2d_forward(in, 4), ShapeError);
}

TEST(AvgPool, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) EXPECT_LT(gradcheck::pool_error(rng), 1e-6);
}

TEST(Dense, IdentityAndBiasOnly) {
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const Tensor x({3}, {0.5, -2.0, 4.0});
  const Tensor y = dense_forward(x, eye, Tensor({3}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y[i], x[i]);
  const Tensor b({2}, {1.25, -3.0});
  const Tensor z = dense_forward(x, Tensor({2, 3}), b);
  EXPECT_EQ(z[0], 1.25);
  EXPECT_EQ(z[1], -3.0);
}

TEST(Dense, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) EXPECT_LT(gradcheck::dense_error(rng), 1e-6);
}

TEST(Activation, ValuesAtZero) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_EQ(activation_forward(Tensor({1}), Activation::tanh)[0], 0.0);
  EXPECT_EQ(activation_forward(Tensor({1}), Activation::sigmoid)[0], 0.5);
}

TEST(Activation, TanhMatchesStdTanh) {
  std::mt19937_64 rng(12);
  Tensor x = oracle::random_tensor({4000}, rng, -20.0, 20.0);
  x[0] = 1e-12;
  x[1] = -1e-300;
  x[2] = 800.0;
  x[3] = -800.0;
  const Tensor y = activation_forward(x, Activation::tanh);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], std::tanh(x[i]), 4e-16) << x[i];
}

TEST(Activation, SigmoidIsFiniteAtExtremes) {
  EXPECT_EQ(sigmoid(-1000.0), 0.0);
  EXPECT_EQ(sigmoid(1000.0), 1.0);
  EXPECT_NEAR(sigmoid(2.0), 1.0 / (1.0 + std::exp(-2.0)), 1e-16);
}

TEST(Activation, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    EXPECT_LT(gradcheck::activation_error(rng, Activation::tanh), 1e-6);
    EXPECT_LT(gradcheck::activation_error(rng, Activation::sigmoid), 1e-6);
  }
}

TEST(Bce, KnownValues) {
  EXPECT_NEAR(bce_loss(1.0 - 1e-7, 1), 0.0, 2e-7);
  EXPECT_NEAR(bce_loss(0.5, 1), 0.693147, 1e-6);
  EXPECT_NEAR(bce_loss(0.5, 0), std::log(2.0), 1e-15);
  EXPECT_THROW(bce_loss(0.5, 2), std::invalid_argument);
}

TEST(Bce, MatchesDirectFormula) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> score(0.001, 0.999);
  for (int i = 0; i < 500; ++i) {
    const double s = score(rng);
    const int y = i % 2;
    const double want = -(y * std::log(s) + (1 - y) * std::log(1.0 - s));
    EXPECT_NEAR(bce_loss(s, y), want, 1e-13);
    const double h = 1e-6;
    const double fd = (bce_loss(s + h, y) - bce_loss(s - h, y)) / (2 * h);
    EXPECT_NEAR(bce_loss_grad(s, y), fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Bce, ClampedScoresStayFinite) {
  EXPECT_TRUE(std::isfinite(bce_loss(0.0, 1)));
  EXPECT_TRUE(std::isfinite(bce_loss(1.0, 0)));
  EXPECT_EQ(bce_loss_grad(0.0, 1), 0.0);
  EXPECT_EQ(bce_loss_grad(1.0, 0), 0.0);
}

TEST(Mse, ValuesAndGradient) {
  EXPECT_EQ(mse_loss(1.5, 1.5), 0.0);
  EXPECT_EQ(mse_loss(3.0, 1.0), 4.0);
  std::mt19937_64 rng(15);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    const double p = n(rng), t = n(rng), h = 1e-5;
    const double fd = (mse_loss(p + h, t) - mse_loss(p - h, t)) / (2 * h);
    EXPECT_NEAR(mse_loss_grad(p, t), 2.0 * (p - t), 1e-15);
    EXPECT_NEAR(mse_loss_grad(p, t), fd, 1e-8);
  }
}

TEST(Sgd, ZeroLearningRateLeavesValues) {
  std::mt19937_64 rng(16);
  std::vector<Parameter> params;
  params.emplace_back("w", oracle::random_tensor({3, 2}, rng));
  params[0].grad = oracle::random_tensor({3, 2}, rng);
  const Tensor before = params[0].value;
  sgd_step(params, 0.0);
  EXPECT_TRUE(bitwise_equal(before, params[0].value));
}

TEST(Sgd, FrozenParameterUnchangedAndGradReset) {
  std::vector<Parameter> params;
  params.emplace_back("frozen", Tensor({2}, 1.0));
  params.emplace_back("free", Tensor({2}, 1.0));
  params[0].frozen = true;
  for (auto& p : params) p.grad.fill(0.5);
  sgd_step(params, 0.1);
  EXPECT_TRUE(bitwise_equal(params[0].value, Tensor({2}, 1.0)));
  EXPECT_EQ(params[1].value[0], 1.0 - 0.1 * 0.5);
  for (const auto& p : params) EXPECT_EQ(p.grad.sum(), 0.0);
}

TEST(Sgd, QuadraticStep) {
  std::vector<Parameter> params;
  params.emplace_back("w", Tensor({1}, 1.0));
  params[0].grad[0] = 2.0 * params[0].value[0];
  sgd_step(params, 0.1);
  EXPECT_DOUBLE_EQ(params[0].value[0], 0.8);
}

TEST(Sgd, NonFiniteGradientAbortsBeforeAnyUpdate) {
  std::vector<Parameter> params;
  params.emplace_back("a", Tensor({1}, 1.0));
  params.emplace_back("b", Tensor({1}, 1.0));
  params[0].grad[0] = 1.0;
  params[1].grad[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(sgd_step(params, 0.1), NumericError);
  EXPECT_EQ(params[0].value[0], 1.0);
  EXPECT_EQ(params[1].value[0], 1.0);
}

TEST(FiniteDiff, ConstantLossHasZeroGradient) {
  Tensor w({3}, {1.0, 2.0, 3.0});
  Tensor* values[] = {&w};
  const auto g = finite_diff_grad([] { return 4.0; }, values);
  for (double v : g[0].values()) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDiff, QuadraticAndRestoresValues) {
  Tensor w({1}, 3.0);
  Tensor* values[] = {&w};
  const auto g = finite_diff_grad([&] { return w[0] * w[0]; }, values);
  EXPECT_NEAR(g[0][0], 6.0, 1e-8);
  EXPECT_EQ(w[0], 3.0);
}

TEST(FiniteDiff, AgreesWithBackwardOnTwoLayerNet) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = oracle::random_tensor({5}, rng);
    Tensor w1 = oracle::random_tensor({4, 5}, rng), b1 = oracle::random_tensor({4}, rng);
    Tensor w2 = oracle::random_tensor({1, 4}, rng), b2 = oracle::random_tensor({1}, rng);
    auto loss = [&] {
      const Tensor h = activation_forward(dense_forward(x, w1, b1), Activation::tanh);
      return mse_loss(dense_forward(h, w2, b2)[0], 0.3);
    };
    const Tensor h = activation_forward(dense_forward(x, w1, b1), Activation::tanh);
    const double y = dense_forward(h, w2, b2)[0];
    const DenseGrads g2 = dense_backward(Tensor({1}, mse_loss_grad(y, 0.3)), h, w2);
    const DenseGrads g1 = dense_backward(activation_backward(g2.input, h, Activation::tanh), x, w1);
    Tensor* values[] = {&w1, &b1, &w2, &b2};
    const auto fd = finite_diff_grad(loss, values);
    EXPECT_LT(oracle::max_rel_error(g1.weights, fd[0]), 1e-4);
    EXPECT_LT(oracle::max_rel_error(g1.bias, fd[1]), 1e-4);
    EXPECT_LT(oracle::max_rel_error(g2.weights, fd[2]), 1e-4);
    EXPECT_LT(oracle::max_rel_error(g2.bias, fd[3]), 1e-4);
  }
}
