#include <gtest/gtest.h>

#include <cmath>

#include "sessrnn/optimizer.hpp"

using namespace sessrnn;

TEST(Adagrad, FirstStepClosedForm) {
  Matrix p(2, 3, 1.0);
  OptimState st;
  adagrad_update(p, Matrix(2, 3, 1.0), st, 0.1);
  for (double v : p.values()) EXPECT_NEAR(v, 1.0 - 0.1 / std::sqrt(1.0 + 1e-6), 1e-15);
}

TEST(Adagrad, ZeroGradientChangesNothing) {
  Matrix p = uniform_init(3, 3, 1);
  const Matrix before = p;
  OptimState st;
  adagrad_update(p, Matrix(3, 3), st, 0.1, 0.5);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.accumulator, Matrix(3, 3));
  EXPECT_EQ(st.velocity, Matrix(3, 3));
}

TEST(Adagrad, SecondStepShrinksBySqrtTwo) {
  Matrix p(1, 1, 0.0);
  OptimState st;
  adagrad_update(p, Matrix(1, 1, 1.0), st, 0.1);
  const double after_first = p(0, 0);
  adagrad_update(p, Matrix(1, 1, 1.0), st, 0.1);
  EXPECT_NEAR(after_first - p(0, 0), 0.1 / std::sqrt(2.0 + 1e-6), 1e-15);
  EXPECT_NEAR(after_first - p(0, 0), 0.0707, 1e-4);
}

TEST(Adagrad, MomentumAccumulatesPreconditionedStep) {
  Matrix p(1, 1, 0.0);
  OptimState st;
  adagrad_update(p, Matrix(1, 1, 1.0), st, 0.1, 0.5);
  const double s1 = 0.1 / std::sqrt(1.0 + 1e-6);
  EXPECT_NEAR(p(0, 0), -s1, 1e-15);
  adagrad_update(p, Matrix(1, 1, 1.0), st, 0.1, 0.5);
  const double s2 = 0.1 / std::sqrt(2.0 + 1e-6);
  EXPECT_NEAR(p(0, 0), -s1 - (0.5 * s1 + s2), 1e-15);
}

TEST(Adagrad, ShapeMismatchRejected) {
  Matrix p(2, 2);
  OptimState st;
  EXPECT_THROW(adagrad_update(p, Matrix(2, 3), st, 0.1), std::invalid_argument);
  RowGrad g(3, 2);
  EXPECT_THROW(apply_update(p, g, st, {}), std::invalid_argument);
}

TEST(Rmsprop, ZeroDecayUsesInstantaneousSquare) {
  Matrix p(1, 2, 0.0);
  OptimState st;
  rmsprop_update(p, Matrix{{3.0, -0.5}}, st, 0.01, 0.0);
  EXPECT_NEAR(p(0, 0), -0.01 * 3.0 / std::sqrt(9.0 + 1e-6), 1e-15);
  EXPECT_NEAR(p(0, 1), 0.01 * 0.5 / std::sqrt(0.25 + 1e-6), 1e-15);
}

TEST(Rmsprop, ConstantGradientStepConvergesToLearningRate) {
  Matrix p(1, 1, 0.0);
  OptimState st;
  double prev = 0.0, step = 0.0;
  for (int i = 0; i < 400; ++i) {
    rmsprop_update(p, Matrix(1, 1, 2.0), st, 0.01, 0.9);
    step = prev - p(0, 0);
    prev = p(0, 0);
  }
  EXPECT_NEAR(step, 0.01, 1e-8);
}

TEST(Rmsprop, ZeroGradientPreservesParams) {
  Matrix p = uniform_init(2, 2, 4);
  const Matrix before = p;
  OptimState st;
  rmsprop_update(p, Matrix(2, 2), st, 0.1, 0.9);
  EXPECT_EQ(p, before);
}

TEST(Rmsprop, DecayOutOfRangeRejected) {
  Matrix p(1, 1);
  OptimState st;
  EXPECT_THROW(rmsprop_update(p, Matrix(1, 1, 1.0), st, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(rmsprop_update(p, Matrix(1, 1, 1.0), st, 0.1, -0.1), std::invalid_argument);
}

TEST(SparseUpdate, BitIdenticalToDense) {
  for (auto kind : {OptimizerKind::adagrad, OptimizerKind::rmsprop}) {
    OptimizerConfig cfg{kind, 0.05, 0.3, 1e-6, 0.9};
    Matrix dense_p = uniform_init(8, 3, 17), sparse_p = dense_p;
    OptimState dense_st, sparse_st;
    Rng rng(3);
    for (int step = 0; step < 30; ++step) {
      RowGrad g(8, 3);
      for (int k = 0; k < 3; ++k) {
        auto row = g.row(rng.index(8));
        for (double& v : row) v += rng.uniform(-1.0, 1.0);
      }
      g.row(rng.index(8));  // touched but all-zero row
      apply_update(dense_p, g.to_dense(), dense_st, cfg);
      apply_update(sparse_p, g, sparse_st, cfg);
      ASSERT_EQ(dense_p, sparse_p) << "step " << step;
    }
  }
}

TEST(Dropout, ZeroRateIsAllOnes) {
  EXPECT_EQ(dropout_mask(4, 5, 0.0, 1, true), Matrix(4, 5, 1.0));
  EXPECT_EQ(dropout_mask(4, 5, 0.0, 1, false), Matrix(4, 5, 1.0));
  EXPECT_EQ(dropout_mask(4, 5, 0.7, 1, false), Matrix(4, 5, 1.0));
}

TEST(Dropout, KeepFractionWithinBinomialBound) {
  const std::size_t n = 100000;
  Matrix m = dropout_mask(1, n, 0.5, 12, true);
  std::size_t kept = 0;
  for (double v : m.values()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    kept += v != 0.0;
  }
  const double sigma = std::sqrt(n * 0.25);
  EXPECT_LE(std::abs(static_cast<double>(kept) - n * 0.5), 3.0 * sigma);
}

TEST(Dropout, InvertedScalingIsUnbiased) {
  for (double rate : {0.2, 0.5, 0.9}) {
    const double kept_value = dropout_mask(1, 50000, rate, 8, true).values()[0];
    EXPECT_TRUE(kept_value == 0.0 || std::abs(kept_value * (1.0 - rate) - 1.0) < 1e-12);
    double mean = 0.0;
    for (double v : dropout_mask(1, 50000, rate, 8, true).values()) mean += v;
    mean /= 50000.0;
    EXPECT_NEAR(mean, 1.0, 4.0 * std::sqrt(rate / (1.0 - rate) / 50000.0));
  }
}

TEST(Dropout, SeedDeterminesMask) {
  EXPECT_EQ(dropout_mask(10, 10, 0.3, 5, true), dropout_mask(10, 10, 0.3, 5, true));
  EXPECT_THROW(dropout_mask(1, 1, 1.0, 5, true), std::invalid_argument);
}
