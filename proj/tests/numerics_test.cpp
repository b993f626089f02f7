// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "trnk/numerics.hpp"

using namespace trnk;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return Tensor::from({r, c}, std::move(v));
}

std::vector<double> triple_loop(const Tensor& a, const Tensor& b) {
  std::vector<double> out(a.rows() * b.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) out[i * b.cols() + j] += a.at(i, k) * b.at(k, j);
  return out;
}

}  // namespace

TEST(Matmul, IdentityAndHandCase) {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto v = Tensor::from({2, 1}, {3, 4});
  EXPECT_EQ(matmul(eye, v).to_vector(), (std::vector<double>{3, 4}));
  auto row = Tensor::from({1, 2}, {1, 2});
  EXPECT_DOUBLE_EQ(matmul(row, v).item(), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(7);
  auto a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng);
  const auto oracle = triple_loop(a, b);
  const auto got = matmul(a, b).to_vector();
  ASSERT_EQ(got.size(), oracle.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], oracle[i], 1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(LogSoftmax, UniformAndStable) {
  auto u = log_softmax(Tensor::from({2}, {0, 0}), 0).to_vector();
  EXPECT_NEAR(u[0], -std::log(2.0), 1e-15);
  EXPECT_NEAR(u[1], -std::log(2.0), 1e-15);
  auto s = log_softmax(Tensor::from({2}, {1000, 0}), 0).to_vector();
  EXPECT_NEAR(s[0], 0.0, 1e-12);
  EXPECT_NEAR(s[1], -1000.0, 1e-9);
}

TEST(LogSoftmax, SlicesNormaliseAlongEitherAxis) {
  Rng rng(3);
  auto v = log_softmax(random_matrix(1, 5, rng, 3.0), 1).to_vector();
  double total = 0.0;
  for (double x : v) total += std::exp(x);
  EXPECT_NEAR(total, 1.0, 1e-12);

  auto m = random_matrix(4, 3, rng, 5.0);
  auto cols = log_softmax(m, 0);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += std::exp(cols.at(i, j));
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_THROW(log_softmax(m, 2), ShapeError);
}

TEST(LogSumExp, SingletonHandAndNaive) {
  const std::vector<double> one{-3.25};
  EXPECT_EQ(log_sum_exp(one), -3.25);
  const std::vector<double> two{std::log(1.0), std::log(3.0)};
  EXPECT_NEAR(log_sum_exp(two), std::log(4.0), 1e-15);
  EXPECT_THROW(log_sum_exp(std::vector<double>{}), std::invalid_argument);

  Rng rng(11);
  std::vector<double> vals(100);
  for (double& x : vals) x = rng.uniform(-20.0, 20.0);
  long double naive = 0.0L;
  for (double x : vals) naive += std::exp(static_cast<long double>(x));
  EXPECT_NEAR(log_sum_exp(vals), static_cast<double>(std::log(naive)), 1e-12);
}

TEST(LogSumExp, SentinelIsAbsorbing) {
  const std::vector<double> v{kLogZero, kLogZero};
  EXPECT_EQ(log_sum_exp(v), kLogZero);
  EXPECT_EQ(log_add(kLogZero, -2.0), -2.0);
}

TEST(Dropout, IdentityCasesAreBitEqual) {
  Rng rng(1);
  auto x = random_matrix(10, 10, rng);
  auto a = dropout(x, 0.0, true, rng);
  auto b = dropout(x, 0.4, false, rng);
  EXPECT_EQ(a.to_vector(), x.to_vector());
  EXPECT_EQ(b.to_vector(), x.to_vector());
  EXPECT_THROW(dropout(x, 1.0, true, rng), std::invalid_argument);
}

TEST(Dropout, SurvivorFractionMatchesKeepProbability) {
  Rng rng(2024);
  auto x = Tensor::full({100000}, 1.0);
  auto y = dropout(x, 0.4, true, rng).to_vector();
  std::size_t kept = 0;
  for (double v : y) {
    if (v != 0.0) {
      ++kept;
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.6);
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1e5, 0.6, 0.01);
}

TEST(Elementwise, BinaryOpsRequireMatchingShapes) {
  EXPECT_THROW(add(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), ShapeError);
  EXPECT_THROW(mul(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  auto r = relu(Tensor::from({3}, {-1, 0, 2})).to_vector();
  EXPECT_EQ(r, (std::vector<double>{0, 0, 2}));
}

TEST(Elementwise, FiniteOnExtremeInputs) {
  auto x = Tensor::from({4}, {-1e6, -1.0, 1.0, 1e6});
  for (const Tensor& y : {tanh(x), sigmoid(x), relu(x), log_softmax(x, 0), softmax(x, 0)}) {
    for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Tensor, NonFiniteConstructionIsAnError) {
  EXPECT_THROW(Tensor::from({1}, {std::nan("")}), NumericError);
  EXPECT_THROW(Tensor::from({2}, {1.0}), ShapeError);
}

TEST(GradCheck, SquareAtThree) {
  auto x = Tensor::from({1}, {3.0});
  x.set_requires_grad(true);
  std::vector<Tensor> params{x};
  auto report = check_gradients([&] { return mul(x, x); }, params);
  EXPECT_NEAR(x.grad()[0], 6.0, 1e-12);
  EXPECT_LT(report.max_abs_error, 1e-6);
  EXPECT_EQ(report.parameter_count, 1u);
}

TEST(GradCheck, SumTanhOfProduct) {
  Rng rng(5);
  auto W = Tensor::parameter({4, 3}, rng, -1, 1);
  auto x = Tensor::parameter({3, 2}, rng, -1, 1);
  std::vector<Tensor> params{W, x};
  auto report = check_gradients([&] { return sum(tanh(matmul(W, x))); }, params);
  EXPECT_LE(report.max_rel_error, 1e-5);
}

TEST(GradCheck, StructuralAndNormalisationOps) {
  Rng rng(9);
  auto a = Tensor::parameter({3, 4}, rng, -1, 1);
  auto b = Tensor::parameter({2, 4}, rng, -1, 1);
  auto bias = Tensor::parameter({4}, rng, -1, 1);
  auto gain = Tensor::parameter({4}, rng, 0.5, 1.5);
  auto shift = Tensor::parameter({4}, rng, -1, 1);
  auto table = Tensor::parameter({5, 4}, rng, -1, 1);
  std::vector<Tensor> params{a, b, bias, gain, shift, table};
  const std::vector<int> idx{4, 0, 4};
  auto f = [&] {
    Tensor pairs = pair_add(a, b);
    Tensor ln = layer_norm(add_bias(pairs, bias), gain, shift);
    Tensor mixed = mul(sigmoid(ln), tanh(ln));
    std::vector<Tensor> rows{slice_rows(mixed, 1, 4), gather_rows(table, idx)};
    Tensor stacked = concat_rows(rows);
    std::vector<Tensor> cols{slice_cols(stacked, 0, 2), transpose(transpose(slice_cols(stacked, 2, 4)))};
    Tensor joined = concat_cols(cols);
    Tensor weights = reshape(softmax(reshape(joined, {2, 12}), 1), {6, 4});
    return sum(mul(log_softmax(joined, 1), weights));
  };
  auto report = check_gradients(f, params);
  EXPECT_LE(report.max_rel_error, 1e-5);
}

TEST(GradCheck, ConvolutionAndPooling) {
  Rng rng(13);
  auto x = Tensor::parameter({2, 5, 3}, rng, -1, 1);
  auto w = Tensor::parameter({3, 2, 3, 3}, rng, -1, 1);
  auto b = Tensor::parameter({3}, rng, -1, 1);
  std::vector<Tensor> params{x, w, b};
  auto f = [&] { return sum(tanh(channels_to_frames(max_pool2x2(relu(conv2d(x, w, b)))))); };
  auto report = check_gradients(f, params);
  EXPECT_LE(report.max_rel_error, 1e-5);
}

TEST(Conv, PoolingHalvesWithCeiling) {
  auto x = Tensor::zeros({1, 7, 5});
  auto p = max_pool2x2(x);
  EXPECT_EQ(p.shape(), (Shape{1, 4, 3}));
}

TEST(GradCheck, NonFiniteObjectiveIsRejected) {
  auto x = Tensor::from({1}, {1.0});
  std::vector<Tensor> params{x};
  EXPECT_THROW(check_gradients([&] { return Tensor::from({1}, {std::nan("")}); }, params), NumericError);
}

TEST(Graph, NoGradGuardSkipsRecording) {
  Rng rng(1);
  auto w = Tensor::parameter({2, 2}, rng);
  NoGradGuard guard;
  auto y = matmul(w, w);
  EXPECT_FALSE(y.requires_grad());
}
