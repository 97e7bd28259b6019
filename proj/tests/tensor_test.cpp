#include <gtest/gtest.h>

#include "advo/ops.hpp"
#include "oracles.hpp"

using advo::Shape;
using advo::Tape;
using advo::TapeScope;
using advo::Tensor;

namespace {

TEST(Mul, IdentityMaskPassesInputThrough) {
  Tensor<float> ones = Tensor<float>::full({2, 2}, 1.0f);
  Tensor<float> x({2, 2}, {0.3f, -1.2f, 4.0f, 0.0f});
  auto out = advo::mul(ones, x);
  EXPECT_EQ(out.data(), x.data());
}

TEST(Mul, AnnihilatorZeroesEverything) {
  Tensor<float> zeros({2, 2});
  advo::Rng rng(7);
  auto x = oracle::random_tensor<float>({2, 2}, rng);
  auto out = advo::mul(zeros, x);
  for (int64_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0f);
}

TEST(Mul, SingleElementProduct) {
  auto out = advo::mul(Tensor<float>({1, 1}, {0.5f}), Tensor<float>({1, 1}, {0.8f}));
  EXPECT_FLOAT_EQ(out[0], 0.4f);
}

TEST(Mul, ShapeMismatchNamesBothShapes) {
  Tensor<float> a({2, 3}), b({3, 2});
  try {
    advo::mul(a, b);
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[3,2]"), std::string::npos);
  }
}

TEST(Backward, SumGivesOnes) {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tape<double> tape;
  TapeScope<double> scope(tape, {&x});
  auto loss = advo::sum(x);
  auto grads = advo::backward(loss, {&x});
  for (double g : grads.dense(x)) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, MulRoutesOperandGradients) {
  advo::Rng rng(3);
  auto a = oracle::random_tensor<double>({3, 3}, rng);
  auto b = oracle::random_tensor<double>({3, 3}, rng);
  Tape<double> tape;
  TapeScope<double> scope(tape, {&a, &b});
  auto loss = advo::sum(advo::mul(a, b));
  auto grads = advo::backward(loss, {&a, &b});
  auto da = grads.dense(a), db = grads.dense(b);
  for (int64_t i = 0; i < a.size(); ++i) {
    EXPECT_DOUBLE_EQ(da[static_cast<size_t>(i)], b[i]);
    EXPECT_DOUBLE_EQ(db[static_cast<size_t>(i)], a[i]);
  }
}

TEST(Backward, RepeatedCallsBitIdentical) {
  advo::Rng rng(11);
  auto a = oracle::random_tensor<double>({4, 4}, rng);
  auto b = oracle::random_tensor<double>({4, 4}, rng);
  Tape<double> tape;
  TapeScope<double> scope(tape, {&a, &b});
  auto loss = advo::sum(advo::sigmoid(advo::mul(a, b)));
  auto g1 = advo::backward(loss, {&a, &b});
  auto g2 = advo::backward(loss, {&a, &b});
  EXPECT_EQ(g1.dense(a), g2.dense(a));
  EXPECT_EQ(g1.dense(b), g2.dense(b));
}

TEST(Backward, NonScalarLossRejected) {
  Tensor<double> x({2, 2});
  Tape<double> tape;
  TapeScope<double> scope(tape, {&x});
  auto y = advo::relu(x);
  EXPECT_THROW(advo::backward(y, {&x}), std::invalid_argument);
}

TEST(Backward, UnreachableTensorGetsZeroGradient) {
  Tensor<double> x({2}, {1, 2}), unused({2}, {3, 4});
  Tape<double> tape;
  TapeScope<double> scope(tape, {&x, &unused});
  auto loss = advo::sum(x);
  auto grads = advo::backward(loss, {&x, &unused});
  EXPECT_FALSE(grads.contains(unused));
  auto gz = grads.dense(unused);
  EXPECT_EQ(gz, (std::vector<double>{0, 0}));
}

TEST(Activations, ReluAndSigmoidPointValues) {
  Tensor<float> x({3}, {-1.0f, 2.0f, 0.0f});
  auto r = advo::relu(x);
  EXPECT_FLOAT_EQ(r[0], 0.0f);
  EXPECT_FLOAT_EQ(r[1], 2.0f);
  auto s = advo::sigmoid(Tensor<float>({1}, {0.0f}));
  EXPECT_FLOAT_EQ(s[0], 0.5f);
}

TEST(LogSoftmax, SymmetricPairIsMinusLogTwo) {
  Tensor<double> x({1, 2}, {0.0, 0.0});
  auto y = advo::log_softmax(x, 1);
  EXPECT_NEAR(y[0], -std::log(2.0), 1e-12);
  EXPECT_NEAR(y[1], -std::log(2.0), 1e-12);
}

TEST(LogSoftmax, StabilizedForLargeMagnitudes) {
  advo::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> x({2, 5});
    for (auto& v : x.data()) v = rng.uniform(-50.0, 50.0);
    auto y = advo::log_softmax(x, 1);
    for (int b = 0; b < 2; ++b) {
      double total = 0;
      for (int c = 0; c < 5; ++c) total += std::exp(y[b * 5 + c]);
      EXPECT_NEAR(total, 1.0, 1e-6);
      for (int c = 0; c < 5; ++c) EXPECT_TRUE(std::isfinite(y[b * 5 + c]));
    }
  }
}

TEST(LogSoftmax, AxisZeroWorks) {
  Tensor<double> x({2, 1}, {1.0, 1.0});
  auto y = advo::log_softmax(x, 0);
  EXPECT_NEAR(y[0], -std::log(2.0), 1e-12);
  EXPECT_THROW(advo::log_softmax(x, 2), std::invalid_argument);
}

TEST(Linear, MatchesManualAffine) {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> w({2, 3}, {1, 0, 0, 0, 1, 0});  // picks x0, x1
  Tensor<double> b({2}, {10, 20});
  auto y = advo::linear(x, w, b);
  EXPECT_DOUBLE_EQ(y[0], 11);
  EXPECT_DOUBLE_EQ(y[1], 22);
  EXPECT_DOUBLE_EQ(y[2], 14);
  EXPECT_DOUBLE_EQ(y[3], 25);
  EXPECT_THROW(advo::linear(x, Tensor<double>({2, 4}), b), std::invalid_argument);
}

TEST(Dropout, ZeroProbabilityIsIdentityBothModes) {
  advo::Rng rng(1);
  auto x = oracle::random_tensor<float>({4, 4}, rng);
  advo::Rng drop(2);
  EXPECT_EQ(advo::dropout(x, 0.0, true, drop).data(), x.data());
  EXPECT_EQ(advo::dropout(x, 0.0, false, drop).data(), x.data());
}

TEST(Dropout, EvalModeIsIdentity) {
  advo::Rng rng(1);
  auto x = oracle::random_tensor<float>({4, 4}, rng);
  advo::Rng drop(2);
  EXPECT_EQ(advo::dropout(x, 0.5, false, drop).data(), x.data());
}

TEST(Dropout, SurvivorFractionAndScaling) {
  const size_t n = 100000;
  Tensor<float> x(Shape{static_cast<int>(n)});
  for (auto& v : x.data()) v = 1.0f;
  advo::Rng drop(42);
  auto y = advo::dropout(x, 0.5, true, drop);
  size_t survivors = 0;
  double mean = 0;
  for (int64_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0f) {
      ++survivors;
      EXPECT_FLOAT_EQ(y[i], 2.0f);
    }
    mean += y[i];
  }
  mean /= static_cast<double>(n);
  EXPECT_NEAR(static_cast<double>(survivors) / static_cast<double>(n), 0.5, 0.01);
  EXPECT_NEAR(mean, 1.0, 0.02);  // E[output] recovers the input
  EXPECT_THROW(advo::dropout(x, 1.0, true, drop), std::invalid_argument);
  EXPECT_THROW(advo::dropout(x, -0.1, true, drop), std::invalid_argument);
}

TEST(Batchnorm, AlreadyNormalizedChannelPassesThrough) {
  // zero-mean unit-variance channel, gamma=1 beta=0 -> output ~ input/sqrt(1+eps)
  Tensor<double> x({2, 1, 1, 2}, {-1.0, 1.0, 1.0, -1.0});
  Tensor<double> gamma = Tensor<double>::full({1}, 1.0);
  Tensor<double> beta({1});
  Tensor<double> rm({1}), rv = Tensor<double>::full({1}, 1.0);
  auto y = advo::batchnorm(x, gamma, beta, rm, rv, true);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y[0], -expect, 1e-9);
  EXPECT_NEAR(y[1], expect, 1e-9);
}

TEST(Batchnorm, ConstantChannelTakesBeta) {
  Tensor<double> x = Tensor<double>::full({3, 1, 2, 2}, 7.0);
  Tensor<double> gamma = Tensor<double>::full({1}, 1.0);
  Tensor<double> beta = Tensor<double>::full({1}, 5.0);
  Tensor<double> rm({1}), rv = Tensor<double>::full({1}, 1.0);
  auto y = advo::batchnorm(x, gamma, beta, rm, rv, true);
  for (int64_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 5.0, 1e-6);
}

TEST(Batchnorm, TrainModeBatchOfOneRejected) {
  Tensor<double> x({1, 2, 2, 2});
  Tensor<double> gamma = Tensor<double>::full({2}, 1.0);
  Tensor<double> beta({2});
  Tensor<double> rm({2}), rv = Tensor<double>::full({2}, 1.0);
  EXPECT_THROW(advo::batchnorm(x, gamma, beta, rm, rv, true), std::invalid_argument);
  EXPECT_NO_THROW(advo::batchnorm(x, gamma, beta, rm, rv, false));
}

TEST(Batchnorm, EvalUsesRunningStats) {
  Tensor<double> x({1, 1, 1, 2}, {3.0, 3.0});
  Tensor<double> gamma = Tensor<double>::full({1}, 2.0);
  Tensor<double> beta({1});
  Tensor<double> rm = Tensor<double>::full({1}, 1.0);
  Tensor<double> rv = Tensor<double>::full({1}, 4.0);
  auto y = advo::batchnorm(x, gamma, beta, rm, rv, false);
  EXPECT_NEAR(y[0], 2.0 * (3.0 - 1.0) / std::sqrt(4.0 + 1e-5), 1e-9);
}

TEST(ConcatChannels, StacksInOrderAndSplitsGradients) {
  advo::Rng rng(9);
  auto a = oracle::random_tensor<double>({2, 1, 2, 2}, rng);
  auto b = oracle::random_tensor<double>({2, 2, 2, 2}, rng);
  Tape<double> tape;
  TapeScope<double> scope(tape, {&a, &b});
  auto e = advo::concat_channels<double>({a, b});
  ASSERT_EQ(e.shape(), (Shape{2, 3, 2, 2}));
  // channel 0 is a, channels 1-2 are b
  EXPECT_DOUBLE_EQ(e[0], a[0]);
  EXPECT_DOUBLE_EQ(e[4], b[0]);

  advo::Rng rng2(10);
  auto weights = oracle::random_tensor<double>({2, 3, 2, 2}, rng2);
  auto loss = advo::sum(advo::mul(e, weights));
  auto grads = advo::backward(loss, {&a, &b});
  auto da = grads.dense(a);
  EXPECT_DOUBLE_EQ(da[0], weights[0]);
  auto db = grads.dense(b);
  EXPECT_DOUBLE_EQ(db[0], weights[4]);
}

TEST(Reshape, ViewsAndRoutesGradient) {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tape<double> tape;
  TapeScope<double> scope(tape, {&x});
  auto y = advo::reshape(x, {6});
  EXPECT_EQ(y.shape(), (Shape{6}));
  auto loss = advo::sum(y);
  auto g = advo::backward(loss, {&x});
  for (double v : g.dense(x)) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_THROW(advo::reshape(x, {5}), std::invalid_argument);
}

TEST(Rng, StreamsAreDecoupledAndDeterministic) {
  advo::Rng a = advo::derive_stream(123, advo::Stream::kInit);
  advo::Rng b = advo::derive_stream(123, advo::Stream::kInit);
  advo::Rng c = advo::derive_stream(123, advo::Stream::kShuffle);
  EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(a.next_u64(), c.next_u64());
}

}  // namespace
