#include <gtest/gtest.h>

#include <cmath>

#include "descent.hpp"
#include "kronsum/harness.hpp"
#include "kronsum/precision.hpp"

using namespace kronsum;

namespace {

SymmetricMatrix sym2(double a, double b, double c) {
  Matrix m(2, 2);
  m << a, b, b, c;
  return SymmetricMatrix(m);
}

EstimatorOptions fixed_lambda(double value) {
  EstimatorOptions o;
  o.rule = LambdaRule::fixed(value);
  o.solver.record_trace = true;
  return o;
}

void expect_descent_all(const PrecisionEstimate& est) {
  for (const auto& sol : est.per_column) expect_descent(sol);
}

CorrectedGram gram_of(const SymmetricMatrix& g, Index n) { return corrected_gram_from(g, n, 0.0); }

}  // namespace

TEST(LambdaTemplate, HandEvaluation) {
  // D0' = 1, ||beta*|| = 0, sigma_V = 1, m = e, n = 1.
  EXPECT_NEAR(lambda_template(1.0, 1.0, 1.0, 123.0, 0.0, 1.0, std::exp(1.0), 1.0), 4.0, 1e-12);
}

TEST(LambdaRule, OracleMatchesTemplate) {
  const auto model = build_model(SymmetricMatrix::identity(3), SymmetricMatrix::zero(4), false);
  const auto gram = gram_of(SymmetricMatrix::identity(3), 4);
  const double expected = 4.0 * 1.0 * 1.0 * 1.0 * std::sqrt(std::log(3.0) / 4.0);
  EXPECT_NEAR(resolve_lambda(LambdaRule::oracle(1.0, 1.0), &model, gram, 0), expected, 1e-12);
  EXPECT_THROW(resolve_lambda(LambdaRule::oracle(1.0, 1.0), nullptr, gram, 0), ValidationError);
}

TEST(LambdaRule, FixedAndGrid) {
  const auto gram = gram_of(SymmetricMatrix::identity(3), 10);
  for (Index j = 0; j < 3; ++j) EXPECT_EQ(resolve_lambda(LambdaRule::fixed(0.1), nullptr, gram, j), 0.1);
  LambdaRule grid;
  grid.mode = LambdaMode::grid;
  EXPECT_THROW(resolve_lambda(grid, nullptr, gram, 0), ValidationError);
  EXPECT_THROW(parse_lambda_mode("cv"), ValidationError);
}

TEST(LambdaRule, GridSelectsFromItsGrid) {
  const auto model = build_model(generators::ar1(5, 0.5), 0.3 * SymmetricMatrix::identity(200), true);
  const auto x = sample(model, {}, 3, false).x;
  EstimatorOptions o;
  o.rule.mode = LambdaMode::grid;
  const auto est = estimate_theta(x, 5.0, o);
  const auto again = estimate_theta(x, 5.0, o);
  for (Index j = 0; j < 5; ++j) {
    const double center = plugin_lambda(est.gram, j, o.rule);
    const double ratio = std::log10(est.lambda_used[static_cast<std::size_t>(j)] / center);
    EXPECT_GE(ratio, -1.0 - 1e-9);
    EXPECT_LE(ratio, 1.0 + 1e-9);
    EXPECT_NEAR(ratio * 9.0 / 2.0 + 4.5, std::round(ratio * 9.0 / 2.0 + 4.5), 1e-9);
  }
  EXPECT_EQ(est.lambda_used, again.lambda_used);
}

TEST(EstimateTheta, TwoByTwoLargeSample) {
  const auto a = sym2(1, 0.5, 1);
  const Matrix x = draw_matrix(10000, 2, EntryLaw::gaussian, 17) * sqrt_spd(a).matrix();
  const auto est = estimate_theta(x, 2.0, fixed_lambda(0.0));
  expect_descent_all(est);
  EXPECT_LT(max_norm(Matrix(est.theta_hat.matrix() - inverse_spd(a).matrix())), 0.05);
}

TEST(EstimateTheta, HugeLambdaGivesInverseDiagonal) {
  Vector d(3);
  d << 2, 4, 5;
  Matrix g = d.asDiagonal();
  g(0, 1) = g(1, 0) = 0.3;
  const auto est = estimate_from_gram(gram_of(SymmetricMatrix(g), 10), nullptr, fixed_lambda(1e6), nullptr);
  expect_descent_all(est);
  for (Index j = 0; j < 3; ++j) {
    EXPECT_EQ(est.per_column[static_cast<std::size_t>(j)].beta, Vector::Zero(2));
    EXPECT_DOUBLE_EQ(est.theta_tilde(j, j), 1.0 / d(j));
  }
  EXPECT_EQ(est.theta_tilde(0, 1), 0.0);
}

TEST(EstimateTheta, DegenerateDiagonalRaisedOrClamped) {
  const auto gram = gram_of(SymmetricMatrix::zero(3), 10);
  try {
    (void)estimate_from_gram(gram, nullptr, fixed_lambda(1.0), nullptr);
    FAIL() << "expected DegenerateDiagonal";
  } catch (const DegenerateDiagonal& e) {
    EXPECT_EQ(e.column(), 0);
  }
  auto o = fixed_lambda(1.0);
  o.clamp_diagonal = true;
  const auto est = estimate_from_gram(gram, nullptr, o, nullptr);
  EXPECT_DOUBLE_EQ(est.theta_hat(1, 1), 1.0 / o.diag_floor);
}

TEST(EstimateTheta, TridiagonalFixture) {
  const auto model =
      build_model(generators::banded_precision_covariance(50, 3, 0.3), 0.5 * SymmetricMatrix::identity(2000), true);
  const auto x = sample(model, {}, 2024, false).x;
  EstimatorOptions o;
  o.rule = LambdaRule::oracle(0.02, 2.0);
  o.truth = &model;
  o.solver.record_trace = true;
  const auto est = estimate_theta(x, 50.0, o);
  expect_descent_all(est);
  const double rel = spectral_norm(SymmetricMatrix::midpoint(est.theta_hat.matrix() - model.theta().matrix())) /
                     spectral_norm(model.theta());
  EXPECT_LT(rel, 0.5);
  const auto support = support_metrics(est.theta_hat, model.theta(), default_support_threshold(model.theta()));
  EXPECT_GE(support.f1, 0.9);
}

TEST(EstimateTheta, ThreadCountDoesNotChangeResult) {
  const auto model = build_model(generators::ar1(8, 0.4), 0.5 * SymmetricMatrix::identity(100), true);
  const auto x = sample(model, {}, 9, false).x;
  EstimatorOptions one, many;
  one.threads = 1;
  many.threads = 4;
  EXPECT_EQ(estimate_theta(x, 8.0, one).theta_hat, estimate_theta(x, 8.0, many).theta_hat);
}

TEST(Symmetrize, Midpoint) {
  Matrix t(2, 2);
  t << 1, 2, 0, 1;
  EXPECT_EQ(symmetrize(t), SymmetricMatrix(Matrix::Ones(2, 2)));
  const auto s = generators::ar1(3, 0.2);
  EXPECT_EQ(symmetrize(s.matrix()), s);
}

TEST(Symmetrize, AttainsEntrywiseL1Minimum) {
  const Matrix t = draw_matrix(4, 4, EntryLaw::gaussian, 21);
  const auto s = symmetrize(t);
  double analytic = 0.0;
  for (Index i = 0; i < 4; ++i)
    for (Index j = i + 1; j < 4; ++j) analytic += std::abs(t(i, j) - t(j, i));
  EXPECT_NEAR((s.matrix() - t).cwiseAbs().sum(), analytic, 1e-12);
}

TEST(PsdRepair, Examples) {
  const auto pd = SymmetricMatrix::diagonal(Vector::Map(std::array{1.0, 2.0}.data(), 2));
  EXPECT_EQ(psd_repair(pd), pd);
  const auto indefinite = SymmetricMatrix::diagonal(Vector::Map(std::array{-1.0, 2.0}.data(), 2));
  const auto fixed = psd_repair(indefinite);
  EXPECT_NEAR(fixed(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(fixed(1, 1), 2.0, 1e-15);
  EXPECT_THROW(psd_repair(indefinite, 2.0), ValidationError);
  EXPECT_THROW(psd_repair(indefinite, 0.0), ValidationError);
  EXPECT_NEAR(psd_repair(indefinite, 0.5)(0, 0), 0.5, 1e-15);
}

TEST(PsdRepair, ThreeTimesBound) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto theta = inverse_spd(generators::random_spd(6, seed));
    const Matrix noise = draw_matrix(6, 6, EntryLaw::gaussian, derive_seed(seed, 7));
    const auto hat = SymmetricMatrix::midpoint(theta.matrix() + 1.5 * noise);
    if (lambda_min(hat) >= 0.0) continue;
    const auto plus = psd_repair(hat);
    EXPECT_GE(lambda_min(plus), -1e-10);
    const double before = spectral_norm(SymmetricMatrix::midpoint(hat.matrix() - theta.matrix()));
    const double after = spectral_norm(SymmetricMatrix::midpoint(plus.matrix() - theta.matrix()));
    EXPECT_LE(after, 3.0 * before + 1e-12);
  }
}

TEST(EstimatePhi, EqualsTransposedPipeline) {
  const auto model = build_model(generators::ar1(60, 0.3), generators::ar1(8, 0.4), true);
  const auto x = sample(model, {}, 77, false).x;
  const auto phi = estimate_phi(x);
  const Matrix xt = x.transpose();
  const auto theta = estimate_theta_given_tau(xt, 1.0);
  EXPECT_EQ(phi.theta_tilde, theta.theta_tilde);
  EXPECT_EQ(phi.theta_hat, theta.theta_hat);
}

TEST(EstimatePhi, TridiagonalRowPrecision) {
  const auto b = generators::banded_precision_covariance(50, 3, 0.3);
  const Matrix x = draw_matrix(50, 2000, EntryLaw::gaussian, 5) +
                   sqrt_spd(b).matrix() * draw_matrix(50, 2000, EntryLaw::gaussian, 6);
  const auto model = build_model(SymmetricMatrix::identity(2000), b, false);
  EstimatorOptions o;
  o.rule = LambdaRule::oracle(0.02, 2.0);
  o.truth = &model;
  o.solver.record_trace = true;
  const auto phi = estimate_phi(x, o);
  expect_descent_all(phi);
  const auto& truth = model.phi();
  const double rel =
      spectral_norm(SymmetricMatrix::midpoint(phi.theta_hat.matrix() - truth.matrix())) / spectral_norm(truth);
  EXPECT_LT(rel, 0.5);
}

TEST(EstimatePhi, ScaledIdentityNoise) {
  const double c = 2.0;
  const Matrix x = draw_matrix(4, 10000, EntryLaw::gaussian, 1) +
                   std::sqrt(c) * draw_matrix(4, 10000, EntryLaw::gaussian, 2);
  const auto phi = estimate_phi(x);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(phi.theta_hat(i, i), 1.0 / c, 0.05);
}

TEST(SparseEigenvalues, Examples) {
  const auto a = generators::ar1(5, 0.6);
  const auto full = sparse_eigenvalues(a, 5);
  EXPECT_NEAR(full.rho_max, lambda_max(a), 1e-12);
  EXPECT_NEAR(full.rho_min, lambda_min(a), 1e-12);
  const auto d = sparse_eigenvalues(SymmetricMatrix::diagonal(Vector::Map(std::array{1.0, 2.0, 3.0}.data(), 3)), 2);
  EXPECT_DOUBLE_EQ(d.rho_max, 3.0);
  EXPECT_DOUBLE_EQ(d.rho_min, 1.0);
  const auto unit = sparse_eigenvalues(sym2(1, 0.9, 1), 1);
  EXPECT_DOUBLE_EQ(unit.rho_max, 1.0);
  EXPECT_DOUBLE_EQ(unit.rho_min, 1.0);
  EXPECT_THROW(sparse_eigenvalues(SymmetricMatrix::identity(21), 2), DimensionError);
}

TEST(ComputeS0, Examples) {
  const double m = 5.0;
  EXPECT_EQ(compute_s0(SymmetricMatrix::identity(5), 0.0, 1024.0 * std::log(m), m, 1.0), 1);
  EXPECT_EQ(compute_s0(SymmetricMatrix::identity(5), 0.0, 1e12, m, 1.0), 5);
  EXPECT_EQ(compute_s0(SymmetricMatrix::identity(5), 0.0, 10.0, m, 1.0), 0);
}

TEST(ProbeLowerRe, TrivialCases) {
  EXPECT_EQ(probe_lower_re(SymmetricMatrix::identity(4), 1.0, 0.0, 500, 1).violations, 0);
  const auto bad = probe_lower_re(SymmetricMatrix::zero(4), 1.0, 0.0, 10, 1);
  ASSERT_TRUE(bad.first_violation_trial.has_value());
  EXPECT_EQ(*bad.first_violation_trial, 0);
}

TEST(ProbeLowerRe, SimulatedGramInRegime) {
  const Index m = 20;
  const Index n = 400000;
  const auto model = build_model(generators::ar1(m, 0.3), SymmetricMatrix::zero(1), true);
  const Matrix x = draw_matrix(n, m, EntryLaw::gaussian, 31) * model.sqrt_a().matrix() +
                   std::sqrt(0.2) * draw_matrix(n, m, EntryLaw::gaussian, 32);
  const auto gram = corrected_gram(x, estimate_trace_b(x, static_cast<double>(m)).tau_b_hat);
  const double lmin = model.lambda_min_a();
  const Index s0 = compute_s0(model.a(), 0.2, static_cast<double>(n), static_cast<double>(m), 1.0);
  ASSERT_GE(s0, 1);
  const auto params = lower_re_parameters(lmin, s0);
  EXPECT_EQ(probe_lower_re(gram.gamma_hat, params.alpha, params.tau, 100000, 5).violations, 0);
  EXPECT_EQ(probe_lower_re(gram.gamma_hat, params.alpha, lmin / (2.0 * static_cast<double>(s0)), 100000, 6).violations, 0);
}

TEST(EstimateJson, MetadataFields) {
  const auto model = build_model(generators::ar1(4, 0.4), 0.5 * SymmetricMatrix::identity(60), true);
  const auto est = estimate_theta(sample(model, {}, 1, false).x, 4.0);
  const auto meta = estimate_metadata(est);
  EXPECT_EQ(meta.at("lambda_used").size(), 4u);
  EXPECT_EQ(meta.at("repair_triggered").get<bool>(), est.repair_triggered);
}
