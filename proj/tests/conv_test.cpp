#include <gtest/gtest.h>

#include "advo/conv.hpp"
#include "oracles.hpp"

using advo::Shape;
using advo::Tape;
using advo::TapeScope;
using advo::Tensor;

namespace {

TEST(Conv2d, IdentityKernelReproducesInput) {
  advo::Rng rng(1);
  auto x = oracle::random_tensor<float>({1, 1, 3, 3}, rng);
  Tensor<float> w({1, 1, 1, 1}, {1.0f});
  Tensor<float> b({1});
  auto y = advo::conv2d(x, w, b, 1, 0);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.data(), x.data());
}

TEST(Conv2d, AllOnesKernelSums) {
  auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  Tensor<float> b({1});
  auto y = advo::conv2d(x, w, b, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_FLOAT_EQ(y[0], 9.0f);
}

TEST(Conv2d, MatchesLoopOracle) {
  advo::Rng rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = oracle::random_tensor<double>({1, 2, 5, 5}, rng);
    auto w = oracle::random_tensor<double>({3, 2, 3, 3}, rng);
    auto b = oracle::random_tensor<double>({3}, rng);
    auto fast = advo::conv2d(x, w, b, 1, 1);
    auto ref = oracle::conv2d_ref(x, w, b, 1, 1);
    EXPECT_LT(oracle::max_abs_diff(fast, ref), 1e-6);
  }
  // strided case
  auto x = oracle::random_tensor<double>({2, 3, 6, 6}, rng);
  auto w = oracle::random_tensor<double>({4, 3, 2, 2}, rng);
  auto b = oracle::random_tensor<double>({4}, rng);
  auto fast = advo::conv2d(x, w, b, 2, 0);
  auto ref = oracle::conv2d_ref(x, w, b, 2, 0);
  EXPECT_LT(oracle::max_abs_diff(fast, ref), 1e-6);
}

TEST(Conv2d, RejectsBadGeometryAndChannels) {
  Tensor<float> x({1, 2, 5, 5}), b({3});
  // channel mismatch
  EXPECT_THROW(advo::conv2d(x, Tensor<float>({3, 1, 3, 3}), b, 1, 0), std::invalid_argument);
  // (5 - 2) % 2 != 0 -> non-integral output extent
  EXPECT_THROW(advo::conv2d(x, Tensor<float>({3, 2, 2, 2}), b, 2, 0), std::invalid_argument);
  // kernel larger than padded input
  EXPECT_THROW(advo::conv2d(x, Tensor<float>({3, 2, 7, 7}), b, 1, 0), std::invalid_argument);
}

TEST(ConvTranspose2d, IdentityKernel) {
  advo::Rng rng(7);
  auto x = oracle::random_tensor<float>({1, 1, 4, 4}, rng);
  Tensor<float> w({1, 1, 1, 1}, {1.0f});
  Tensor<float> b({1});
  auto y = advo::conv_transpose2d(x, w, b, 1, 0);
  EXPECT_EQ(y.data(), x.data());
}

TEST(ConvTranspose2d, Stride2BlockReplication) {
  // 2x2 input with an all-ones 2x2 kernel at stride 2 tiles each value
  // into its own 2x2 block of the 4x4 output.
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  auto w = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  Tensor<double> b({1});
  auto y = advo::conv_transpose2d(x, w, b, 2, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  const std::vector<double> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(y.data(), expect);
}

TEST(ConvTranspose2d, MatchesPlacementOracle) {
  advo::Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = oracle::random_tensor<double>({2, 3, 4, 4}, rng);
    auto w = oracle::random_tensor<double>({3, 2, 3, 3}, rng);
    auto b = oracle::random_tensor<double>({2}, rng);
    auto fast = advo::conv_transpose2d(x, w, b, 2, 1);
    auto ref = oracle::conv_transpose2d_ref(x, w, b, 2, 1);
    EXPECT_LT(oracle::max_abs_diff(fast, ref), 1e-6);
  }
}

TEST(ConvTranspose2d, AdjointOfConvInputGradient) {
  // forward(conv_transpose) must equal the input gradient of conv2d with
  // the same weight: <g, conv(x)> differentiated w.r.t. x gives convT(g).
  advo::Rng rng(33);
  auto x = oracle::random_tensor<double>({1, 2, 6, 6}, rng);
  auto w = oracle::random_tensor<double>({3, 2, 3, 3}, rng);
  Tensor<double> zero_b({3});
  auto g = oracle::random_tensor<double>({1, 3, 6, 6}, rng);

  Tape<double> tape;
  TapeScope<double> scope(tape, {&x});
  auto y = advo::conv2d(x, w, zero_b, 1, 1);
  auto loss = advo::sum(advo::mul(y, g));
  auto grads = advo::backward(loss, {&x});
  auto dx = grads.dense(x);

  Tensor<double> zero_b2({2});
  auto direct = advo::conv_transpose2d(g, w, zero_b2, 1, 1);
  for (int64_t i = 0; i < direct.size(); ++i)
    EXPECT_NEAR(direct[i], dx[static_cast<size_t>(i)], 1e-6);
}

TEST(ConvTranspose2d, RejectsBadGeometry) {
  Tensor<float> x({1, 2, 2, 2}), b({1});
  // (2-1)*1 - 2*3 + 2 = -3
  EXPECT_THROW(advo::conv_transpose2d(x, Tensor<float>({2, 1, 2, 2}), b, 1, 3),
               std::invalid_argument);
  EXPECT_THROW(advo::conv_transpose2d(x, Tensor<float>({3, 1, 2, 2}), b, 1, 0),
               std::invalid_argument);
}

TEST(Maxpool, ConstantTensorHalvesResolution) {
  auto x = Tensor<float>::full({1, 2, 4, 4}, 3.5f);
  auto y = advo::maxpool2d(x, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2, 2}));
  for (int64_t i = 0; i < y.size(); ++i) EXPECT_FLOAT_EQ(y[i], 3.5f);
}

TEST(Maxpool, SimpleWindow) {
  Tensor<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = advo::maxpool2d(x, 2);
  ASSERT_EQ(y.size(), 1);
  EXPECT_FLOAT_EQ(y[0], 4.0f);
}

TEST(Maxpool, MatchesOracleAndMaskHasOneWinnerPerWindow) {
  advo::Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = oracle::random_tensor<double>({1, 1, 4, 4}, rng);
    auto ref = oracle::maxpool2d_ref(x, 2);
    Tape<double> tape;
    TapeScope<double> scope(tape, {&x});
    auto y = advo::maxpool2d(x, 2);
    EXPECT_LT(oracle::max_abs_diff(y, ref), 0.0 + 1e-15);
    auto grads = advo::backward(advo::sum(y), {&x});
    auto dx = grads.dense(x);
    // each 2x2 window contributes exactly one unit of gradient
    for (int oy = 0; oy < 2; ++oy)
      for (int ox = 0; ox < 2; ++ox) {
        double total = 0;
        int nonzero = 0;
        for (int ky = 0; ky < 2; ++ky)
          for (int kx = 0; kx < 2; ++kx) {
            const double v = dx[static_cast<size_t>((oy * 2 + ky) * 4 + ox * 2 + kx)];
            total += v;
            nonzero += v != 0.0;
          }
        EXPECT_EQ(nonzero, 1);
        EXPECT_DOUBLE_EQ(total, 1.0);
      }
  }
}

TEST(Maxpool, TiesRouteToFirstRowMajorElement) {
  Tensor<double> x = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  Tape<double> tape;
  TapeScope<double> scope(tape, {&x});
  auto y = advo::maxpool2d(x, 2);
  auto dx = advo::backward(advo::sum(y), {&x}).dense(x);
  EXPECT_DOUBLE_EQ(dx[0], 1.0);
  EXPECT_DOUBLE_EQ(dx[1], 0.0);
  EXPECT_DOUBLE_EQ(dx[2], 0.0);
  EXPECT_DOUBLE_EQ(dx[3], 0.0);
}

TEST(Maxpool, NonDivisibleExtentRejected) {
  Tensor<float> x({1, 1, 5, 4});
  EXPECT_THROW(advo::maxpool2d(x, 2), std::invalid_argument);
}

}  // namespace
