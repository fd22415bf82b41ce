#include <gtest/gtest.h>

#include <cmath>

#include "kronsum/gram.hpp"
#include "kronsum/model.hpp"

using namespace kronsum;

TEST(TraceEstimate, ClampsAtZero) {
  const auto t = estimate_trace_b(Matrix::Zero(2, 2), 2.0);
  EXPECT_EQ(t.tr_b_hat, 0.0);
  EXPECT_EQ(t.tau_b_hat, 0.0);
}

TEST(TraceEstimate, HandEvaluation) {
  Matrix x(2, 2);
  x << 1, 2, 2, 1;  // ||X||_F^2 = 10
  const auto t = estimate_trace_b(x, 2.0);
  EXPECT_DOUBLE_EQ(t.tr_b_hat, 3.0);
  EXPECT_DOUBLE_EQ(t.tau_b_hat, 1.5);
}

TEST(TraceEstimate, MonteCarloIdentityModel) {
  const auto model = build_model(SymmetricMatrix::identity(50), SymmetricMatrix::identity(100), false);
  double total = 0.0;
  for (std::uint64_t rep = 0; rep < 200; ++rep) total += estimate_trace_b(sample(model, {}, rep, false).x, 50.0).tr_b_hat;
  EXPECT_LE(std::abs(total / 200.0 - 100.0) / 100.0, 0.05);
}

TEST(CorrectedGram, IdentityCases) {
  const Matrix x = std::sqrt(3.0) * Matrix::Identity(3, 3);  // X^T X / n = I
  EXPECT_LT((corrected_gram(x, 0.0).gamma_hat.matrix() - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(corrected_gram(x, 1.0).gamma_hat.matrix().cwiseAbs().maxCoeff(), 1e-15);
}

// Large-n checks draw X = Z1 A^{1/2} + c Z2 directly; a dense n x n B would not fit in memory.
TEST(CorrectedGram, ConvergesToA) {
  Matrix a(2, 2);
  a << 1, 0.5, 0.5, 1;
  const Matrix root = sqrt_spd(SymmetricMatrix(a)).matrix();
  double previous = std::numeric_limits<double>::infinity();
  for (Index n : {100, 1000, 10000}) {
    const auto seed = static_cast<std::uint64_t>(n);
    const Matrix x = draw_matrix(n, 2, EntryLaw::gaussian, derive_seed(seed, 1)) * root +
                     std::sqrt(0.5) * draw_matrix(n, 2, EntryLaw::gaussian, derive_seed(seed, 2));
    const auto g = corrected_gram(x, estimate_trace_b(x, 2.0).tau_b_hat);
    const double err = max_norm(Matrix(g.gamma_hat.matrix() - a));
    EXPECT_LT(err, previous * 1.5);
    previous = err;
    if (n == 10000) EXPECT_LT(err, 0.1);
  }
}

TEST(NodewiseInput, SmallestCase) {
  Matrix x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  const auto in = nodewise_input(x, 0.5, 0);
  EXPECT_DOUBLE_EQ(in.gamma_j(0, 0), (4.0 + 16.0 + 36.0) / 3.0 - 0.5);
  EXPECT_DOUBLE_EQ(in.gamma_vec(0), (2.0 + 12.0 + 30.0) / 3.0);
  EXPECT_THROW(nodewise_input(Matrix::Ones(3, 1), 0.0, 0), ValidationError);
}

TEST(NodewiseInput, DeletionConsistency) {
  const Matrix x = draw_matrix(20, 5, EntryLaw::gaussian, 4);
  const auto g = corrected_gram(x, 0.3);
  for (Index j = 0; j < 5; ++j) {
    const auto in = nodewise_input(x, 0.3, j);
    EXPECT_EQ(in.gamma_j, g.gamma_hat.without(j));
    EXPECT_EQ(in.gamma_vec, g.gamma_hat.column_without(j));
  }
}

TEST(NodewiseInput, PopulationLimit) {
  const auto model = build_model(generators::ar1(4, 0.5), SymmetricMatrix::zero(1), true);
  const Matrix x = draw_matrix(100000, 4, EntryLaw::gaussian, 5) * model.sqrt_a().matrix();
  for (Index j = 0; j < 4; ++j) {
    const auto in = nodewise_input(x, 0.0, j);
    EXPECT_LT(max_norm(Matrix(in.gamma_j.matrix() - model.a().without(j).matrix())), 0.05);
    EXPECT_LT((in.gamma_vec - model.a().column_without(j)).cwiseAbs().maxCoeff(), 0.05);
  }
}

TEST(GramJson, RoundTrip) {
  const auto g = corrected_gram(draw_matrix(6, 3, EntryLaw::gaussian, 1), 0.2);
  const auto back = gram_from_json(gram_to_json(g));
  EXPECT_EQ(back.gamma_hat, g.gamma_hat);
  EXPECT_EQ(back.tau_b_hat, g.tau_b_hat);
}
