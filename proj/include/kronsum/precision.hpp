#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kronsum/errors.hpp"
#include "kronsum/gram.hpp"
#include "kronsum/io.hpp"
#include "kronsum/linalg.hpp"
#include "kronsum/model.hpp"
#include "kronsum/parallel.hpp"
#include "kronsum/random.hpp"
#include "kronsum/solver.hpp"

namespace kronsum {

// ---------------------------------------------------------------------------
// Penalty selection
// ---------------------------------------------------------------------------

enum class LambdaMode { oracle, plugin, fixed, grid };

inline std::string to_string(LambdaMode mode) {
  switch (mode) {
    case LambdaMode::oracle: return "oracle";
    case LambdaMode::plugin: return "plugin";
    case LambdaMode::fixed: return "fixed";
    case LambdaMode::grid: return "grid";
  }
  return "plugin";
}

inline LambdaMode parse_lambda_mode(std::string_view name) {
  if (name == "oracle") return LambdaMode::oracle;
  if (name == "plugin") return LambdaMode::plugin;
  if (name == "fixed") return LambdaMode::fixed;
  if (name == "grid") return LambdaMode::grid;
  throw ValidationError("unknown lambda mode '" + std::string(name) + "'");
}

/// How the per-column penalty lambda^j is chosen.
///
/// All non-fixed modes share the template
///   lambda = 4 C0 D0' K^2 (tau_plus * ||beta*||_2 + sigma_V) sqrt(log m / n)
/// with D0' = ||B||^{1/2} + a_max^{1/2} and tau_plus = sqrt(tau_B) + 2(||A||^{1/2} + ||B||^{1/2}) / sqrt(m).
/// `oracle` reads every quantity from the true model; `plugin` substitutes clamped
/// estimates from the corrected Gram matrix; `grid` cross-validates around the plugin value.
struct LambdaRule {
  LambdaMode mode = LambdaMode::plugin;
  double c0 = 1.0;
  double k = 2.0;
  std::vector<double> values;  ///< fixed mode: one shared value or one per column
  int grid_points = 10;
  int folds = 5;
  double sigma_floor_m = 10.0;  ///< plugin sigma_V surrogate is clamped at 1/M

  static LambdaRule fixed(double value) {
    LambdaRule r;
    r.mode = LambdaMode::fixed;
    r.values = {value};
    return r;
  }
  static LambdaRule oracle(double c0 = 1.0, double k = 2.0) {
    LambdaRule r;
    r.mode = LambdaMode::oracle;
    r.c0 = c0;
    r.k = k;
    return r;
  }
};

/// The shared penalty template, in plain scalars.
inline double lambda_template(double c0, double k, double d0_prime, double tau_plus_half, double beta_norm,
                              double sigma_v, double m, double n) {
  return 4.0 * c0 * d0_prime * k * k * (tau_plus_half * beta_norm + sigma_v) * std::sqrt(std::log(m) / n);
}

/// Oracle penalty for column j from the true model. `noise_scale` multiplies B (1/N for replicate means).
inline double oracle_lambda(const CovarianceModel& model, Index j, Index n, const LambdaRule& rule,
                            double noise_scale = 1.0) {
  const double m = static_cast<double>(model.m());
  const double norm_b = model.norm_b() * noise_scale;
  const double tau_b = model.tau_b() * noise_scale;
  const double d0_prime = std::sqrt(norm_b) + std::sqrt(model.a_max());
  const double d_oracle = 2.0 * (std::sqrt(model.norm_a()) + std::sqrt(norm_b));
  const double tau_plus = std::sqrt(tau_b) + d_oracle / std::sqrt(m);
  const auto reg = population_regression(model, j);
  return lambda_template(rule.c0, rule.k, d0_prime, tau_plus, reg.beta.norm(), std::sqrt(reg.sigma2), m,
                         static_cast<double>(n));
}

/// Plugin penalty for column j using only the corrected Gram matrix.
inline double plugin_lambda(const CorrectedGram& gram, Index j, const LambdaRule& rule) {
  const auto& g = gram.gamma_hat;
  const double m = static_cast<double>(g.dim());
  const double tau = std::max(gram.tau_b_hat, 0.0);
  const double a_max = std::max(g.matrix().diagonal().maxCoeff(), 1.0);
  const double d0_prime = std::sqrt(tau) + std::sqrt(a_max);
  const double tau_plus = std::sqrt(tau) + 2.0 * (std::sqrt(a_max) + std::sqrt(tau)) / std::sqrt(m);
  const double sigma_v = std::sqrt(std::max(g(j, j), 1.0 / rule.sigma_floor_m));
  return lambda_template(rule.c0, rule.k, d0_prime, tau_plus, std::sqrt(a_max), sigma_v, m,
                         static_cast<double>(gram.n));
}

/// lambda^j for the oracle, plugin and fixed modes. Grid mode needs the data (see estimate_theta).
inline double resolve_lambda(const LambdaRule& rule, const CovarianceModel* model, const CorrectedGram& gram,
                             Index j) {
  switch (rule.mode) {
    case LambdaMode::oracle:
      if (!model) throw ValidationError("oracle lambda rule needs the true model");
      return oracle_lambda(*model, j, gram.n, rule);
    case LambdaMode::plugin:
      return plugin_lambda(gram, j, rule);
    case LambdaMode::fixed: {
      if (rule.values.empty()) throw ValidationError("fixed lambda rule needs a value");
      const double v = rule.values.size() == 1 ? rule.values.front() : rule.values.at(static_cast<std::size_t>(j));
      if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("fixed lambda must be finite and >= 0");
      return v;
    }
    case LambdaMode::grid:
      throw ValidationError("grid lambda rule needs the data matrix");
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Estimator
// ---------------------------------------------------------------------------

struct EstimatorOptions {
  LambdaRule rule;
  std::optional<double> b1;  ///< empty: oracle b1 under the oracle rule, ridge default otherwise
  SolverConfig solver;
  bool clamp_diagonal = false;  ///< clamp a degenerate residual variance instead of failing
  double diag_floor = 1e-6;
  std::optional<double> psd_epsilon;
  unsigned threads = 0;
  const CovarianceModel* truth = nullptr;  ///< required by the oracle rule
  double oracle_noise_scale = 1.0;         ///< oracle rule sees B scaled by this (1/N for replicate means)
};

struct PrecisionEstimate {
  Matrix theta_tilde;          ///< row-wise estimate, generally asymmetric
  SymmetricMatrix theta_hat;   ///< (theta_tilde + theta_tilde^T) / 2
  SymmetricMatrix theta_psd;   ///< theta_hat after eigenvalue clamping
  std::vector<LassoSolution> per_column;
  std::vector<double> lambda_used;
  double b1 = 0.0;
  bool repair_triggered = false;
  double lambda_min_hat = 0.0;
  CorrectedGram gram;
};

/// b1 = 1.1 max_j ||beta*_j||_1 from the true model.
inline double oracle_b1(const CovarianceModel& model) {
  double best = 0.0;
  for (Index j = 0; j < model.m(); ++j) best = std::max(best, population_regression(model, j).beta.lpNorm<1>());
  return std::max(1.1 * best, 1e-8);
}

/// b1 = 2 max_j ||beta_ridge^j||_1, with the ridge large enough to make every Gamma^(j) + rI positive definite.
inline double ridge_b1(const SymmetricMatrix& gamma_hat) {
  const Index m = gamma_hat.dim();
  const double floor = std::max(0.0, -lambda_min(gamma_hat));
  const double r = floor + 0.1 * std::max(gamma_hat.trace() / static_cast<double>(m), 1e-8);
  double best = 0.0;
  for (Index j = 0; j < m; ++j) {
    Matrix g = gamma_hat.without(j).matrix();
    g.diagonal().array() += r;
    const Vector beta = g.llt().solve(gamma_hat.column_without(j));
    best = std::max(best, beta.lpNorm<1>());
  }
  return std::max(2.0 * best, 1e-8);
}

inline SymmetricMatrix symmetrize(const Matrix& theta_tilde) { return SymmetricMatrix::midpoint(theta_tilde); }

/// Eigenvalue clamping U diag(max(lambda_i, eps)) U^T; eps defaults to -lambda_min.
/// PSD input is returned unchanged.
inline SymmetricMatrix psd_repair(const SymmetricMatrix& theta_hat, std::optional<double> epsilon = std::nullopt) {
  const auto e = eig_sym(theta_hat);
  const double low = e.min();
  if (low >= 0.0) return theta_hat;
  const double eps = epsilon.value_or(-low);
  if (!(eps > 0.0) || eps > -low) {
    throw ValidationError("psd_repair: epsilon must lie in (0, -lambda_min] = (0, " + io::format_double(-low) + "]");
  }
  return e.apply([eps](double x) { return std::max(x, eps); });
}

namespace detail {

inline LassoProblem nodewise_problem(const CorrectedGram& gram, Index j, double lambda, double b1) {
  auto in = nodewise_input(gram, j);
  return {std::move(in.gamma_j), std::move(in.gamma_vec), lambda, b1};
}

inline Matrix select_rows(const Matrix& x, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = x.row(rows[r]);
  return out;
}

}  // namespace detail

/// Grid-mode penalty for column j: 10 log-spaced values over [plugin/10, 10 plugin], scored by
/// k-fold row-split corrected prediction error (1/n_val)||X_j - X_{-j} b||^2 - tau ||b||^2.
inline double select_lambda_grid(const Matrix& x, const CorrectedGram& gram, Index j, const LambdaRule& rule,
                                 double b1, const SolverConfig& config) {
  const Index n = x.rows();
  const int folds = std::max(2, std::min<int>(rule.folds, static_cast<int>(n)));
  const int points = std::max(1, rule.grid_points);
  const double center = plugin_lambda(gram, j, rule);
  const double tau = gram.tau_b_hat;

  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int k = 0; k < points; ++k) {
    const double expo = points == 1 ? 0.0 : -1.0 + 2.0 * k / (points - 1);
    grid[static_cast<std::size_t>(k)] = center * std::pow(10.0, expo);
  }

  std::vector<double> score(grid.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    const Index lo = n * f / folds;
    const Index hi = n * (f + 1) / folds;
    std::vector<Index> train, val;
    for (Index i = 0; i < n; ++i) (i >= lo && i < hi ? val : train).push_back(i);
    const Matrix xt = detail::select_rows(x, train);
    const Matrix xv = detail::select_rows(x, val);
    const auto fold_gram = corrected_gram(xt, tau);
    Matrix xv_rest(xv.rows(), xv.cols() - 1);
    for (Index c = 0, r = 0; c < xv.cols(); ++c)
      if (c != j) xv_rest.col(r++) = xv.col(c);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const auto sol = solve_lasso(detail::nodewise_problem(fold_gram, j, grid[g], b1), config);
      const Vector resid = xv.col(j) - xv_rest * sol.beta;
      score[g] += resid.squaredNorm() / static_cast<double>(xv.rows()) - tau * sol.beta.squaredNorm();
    }
  }
  return grid[static_cast<std::size_t>(std::min_element(score.begin(), score.end()) - score.begin())];
}

/// Nodewise regressions on a corrected Gram matrix, then assembly, symmetrization and PSD repair.
/// `x` is only consulted by the grid rule.
inline PrecisionEstimate estimate_from_gram(const CorrectedGram& gram, const Matrix* x, const EstimatorOptions& opts,
                                            const CovarianceModel* truth) {
  const Index m = gram.gamma_hat.dim();
  if (m < 2) throw DimensionError("precision estimation needs m >= 2 columns");

  PrecisionEstimate est;
  est.gram = gram;
  if (opts.b1) {
    if (!(*opts.b1 > 0.0)) throw ValidationError("b1 must be > 0");
    est.b1 = *opts.b1;
  } else if (opts.rule.mode == LambdaMode::oracle && truth) {
    est.b1 = oracle_b1(*truth);
  } else {
    est.b1 = ridge_b1(gram.gamma_hat);
  }

  est.lambda_used.resize(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) {
    if (opts.rule.mode == LambdaMode::grid) {
      if (!x) throw ValidationError("grid lambda rule needs the data matrix");
      est.lambda_used[static_cast<std::size_t>(j)] = select_lambda_grid(*x, gram, j, opts.rule, est.b1, opts.solver);
    } else if (opts.rule.mode == LambdaMode::oracle) {
      if (!truth) throw ValidationError("oracle lambda rule needs the true model");
      est.lambda_used[static_cast<std::size_t>(j)] = oracle_lambda(*truth, j, gram.n, opts.rule, opts.oracle_noise_scale);
    } else {
      est.lambda_used[static_cast<std::size_t>(j)] = resolve_lambda(opts.rule, nullptr, gram, j);
    }
  }

  est.per_column = parallel_map(
      static_cast<std::size_t>(m),
      [&](std::size_t j) {
        return solve_lasso(detail::nodewise_problem(gram, static_cast<Index>(j), est.lambda_used[j], est.b1),
                           opts.solver);
      },
      opts.threads);

  const auto& g = gram.gamma_hat;
  est.theta_tilde = Matrix::Zero(m, m);
  for (Index j = 0; j < m; ++j) {
    const Vector& beta = est.per_column[static_cast<std::size_t>(j)].beta;
    double resid = g(j, j);
    for (Index k = 0, r = 0; k < m; ++k)
      if (k != j) resid -= g(j, k) * beta(r++);
    if (!(resid > opts.diag_floor)) {
      if (!opts.clamp_diagonal) throw DegenerateDiagonal(j, resid);
      resid = opts.diag_floor;
    }
    const double tjj = 1.0 / resid;
    est.theta_tilde(j, j) = tjj;
    for (Index k = 0, r = 0; k < m; ++k)
      if (k != j) est.theta_tilde(j, k) = -tjj * beta(r++);
  }

  est.theta_hat = symmetrize(est.theta_tilde);
  est.lambda_min_hat = lambda_min(est.theta_hat);
  est.repair_triggered = est.lambda_min_hat < 0.0;
  est.theta_psd = est.repair_triggered ? psd_repair(est.theta_hat, opts.psd_epsilon) : est.theta_hat;
  return est;
}

/// Single-sample estimator of Theta = A^{-1} given the known signal trace tr(A) (m under the usual normalization).
inline PrecisionEstimate estimate_theta(const Matrix& x, double tr_a, const EstimatorOptions& opts = {}) {
  const auto trace = estimate_trace_b(x, tr_a);
  auto gram = corrected_gram(x, trace.tau_b_hat);
  gram.tr_b_hat = trace.tr_b_hat;
  return estimate_from_gram(gram, &x, opts, opts.truth);
}

/// Same pipeline with the noise level tau supplied directly instead of estimated.
inline PrecisionEstimate estimate_theta_given_tau(const Matrix& x, double tau, const EstimatorOptions& opts = {}) {
  return estimate_from_gram(corrected_gram(x, tau), &x, opts, opts.truth);
}

/// Estimator of Phi = B^{-1}: the Theta pipeline on X^T, where the row covariance becomes the column
/// covariance and the noise level tr(A)/m = 1 is known exactly.
inline PrecisionEstimate estimate_phi(const Matrix& x, const EstimatorOptions& opts = {}) {
  if (x.rows() < 2) throw DimensionError("estimate_phi needs n >= 2 rows");
  const Matrix xt = x.transpose();
  if (opts.truth) {
    const CovarianceModel swapped = opts.truth->transposed();
    EstimatorOptions o = opts;
    o.truth = &swapped;
    return estimate_theta_given_tau(xt, 1.0, o);
  }
  return estimate_theta_given_tau(xt, 1.0, opts);
}

// ---------------------------------------------------------------------------
// Diagnostics for the restricted-curvature conditions
// ---------------------------------------------------------------------------

struct SparseEigenvalues {
  double rho_max;
  double rho_min;
};

/// Extreme eigenvalues over all d x d principal submatrices (exhaustive; dim <= 20).
inline SparseEigenvalues sparse_eigenvalues(const SymmetricMatrix& m, Index d) {
  const Index p = m.dim();
  if (d < 1 || d > p) throw ValidationError("sparse_eigenvalues: need 1 <= d <= dim");
  if (p > 20) throw DimensionError("sparse_eigenvalues enumerates supports only for dim <= 20; use a randomized probe");
  SparseEigenvalues out{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  std::vector<Index> support(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i) support[static_cast<std::size_t>(i)] = i;
  while (true) {
    const auto e = eig_sym(m.principal(support));
    out.rho_max = std::max(out.rho_max, e.max());
    out.rho_min = std::min(out.rho_min, e.min());
    Index i = d - 1;
    while (i >= 0 && support[static_cast<std::size_t>(i)] == p - d + i) --i;
    if (i < 0) break;
    ++support[static_cast<std::size_t>(i)];
    for (Index k = i + 1; k < d; ++k) support[static_cast<std::size_t>(k)] = support[static_cast<std::size_t>(k - 1)] + 1;
  }
  return out;
}

/// Largest s0 in [1, dim] with sqrt(s0) (rho_max(s0, A) + tau_B) <= lambda_min(A) / (32 C) sqrt(n / log m); 0 if none.
inline Index compute_s0(const SymmetricMatrix& a, double tau_b, double n, double m, double c) {
  const double bound = lambda_min(a) / (32.0 * c) * std::sqrt(n / std::log(m));
  Index best = 0;
  for (Index s = 1; s <= a.dim(); ++s) {
    const double lhs = std::sqrt(static_cast<double>(s)) * (sparse_eigenvalues(a, s).rho_max + tau_b);
    if (lhs > bound * (1.0 + 1e-12)) break;
    best = s;
  }
  return best;
}

/// Curvature alpha = 5 lambda_min(A) / 8 and tolerance tau = (lambda_min(A) - alpha) / s0.
struct LowerReParameters {
  double alpha;
  double tau;
};

inline LowerReParameters lower_re_parameters(double lambda_min_a, Index s0) {
  const double alpha = 5.0 * lambda_min_a / 8.0;
  return {alpha, (lambda_min_a - alpha) / static_cast<double>(std::max<Index>(s0, 1))};
}

struct LowerReReport {
  int trials = 0;
  int violations = 0;
  double worst_margin = std::numeric_limits<double>::infinity();  ///< min of q(v) - (alpha|v|^2 - tau|v|_1^2)
  std::optional<int> first_violation_trial;
  std::optional<Vector> first_violation;
};

/// Randomized search for directions with v^T Gamma v < alpha ||v||_2^2 - tau ||v||_1^2.
/// Unit vectors are tried first, then alternating random sparse and dense directions.
/// A clean report is evidence for the condition, not a proof.
inline LowerReReport probe_lower_re(const SymmetricMatrix& gamma_mat, double alpha, double tau, int trials,
                                    std::uint64_t seed) {
  if (trials < 1) throw ValidationError("probe_lower_re: trials must be >= 1");
  const Index p = gamma_mat.dim();
  EntryStream normal(EntryLaw::gaussian, derive_seed(seed, 1));
  std::mt19937_64 pick(derive_seed(seed, 2));
  std::vector<Index> perm(static_cast<std::size_t>(p));
  LowerReReport report;
  report.trials = trials;
  Vector v(p);
  for (int t = 0; t < trials; ++t) {
    v.setZero();
    if (t < p) {
      v(t) = 1.0;
    } else if (t % 2 == 0) {
      const Index s = 1 + static_cast<Index>(pick() % static_cast<std::uint64_t>(std::min<Index>(p, 10)));
      for (Index i = 0; i < p; ++i) perm[static_cast<std::size_t>(i)] = i;
      for (Index i = 0; i < s; ++i) {
        const auto r = i + static_cast<Index>(pick() % static_cast<std::uint64_t>(p - i));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(r)]);
        v(perm[static_cast<std::size_t>(i)]) = normal.next();
      }
    } else {
      for (Index i = 0; i < p; ++i) v(i) = normal.next();
    }
    const double quad = v.dot(gamma_mat.matrix() * v);
    const double l2 = v.squaredNorm();
    const double l1 = v.lpNorm<1>();
    const double floor = alpha * l2 - tau * l1 * l1;
    const double margin = quad - floor;
    report.worst_margin = std::min(report.worst_margin, margin);
    if (margin < -1e-12 * (std::abs(alpha) * l2 + std::abs(tau) * l1 * l1 + std::abs(quad))) {
      ++report.violations;
      if (!report.first_violation_trial) {
        report.first_violation_trial = t;
        report.first_violation = v;
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline io::json estimate_metadata(const PrecisionEstimate& est) {
  io::json iters = io::json::array(), conv = io::json::array(), active = io::json::array();
  for (const auto& s : est.per_column) {
    iters.push_back(s.iterations);
    conv.push_back(s.converged);
    active.push_back(s.constraint_active);
  }
  return {{"lambda_used", est.lambda_used},
          {"iterations", iters},
          {"converged", conv},
          {"constraint_active", active},
          {"repair_triggered", est.repair_triggered},
          {"lambda_min_theta_hat", est.lambda_min_hat},
          {"b1", est.b1},
          {"tr_B_hat", est.gram.tr_b_hat},
          {"tau_B_hat", est.gram.tau_b_hat}};
}

/// theta_tilde.json, theta_hat.json, theta_psd.json and estimate.json under `dir`; `prefix` renames the stem.
inline void save_estimate(const std::filesystem::path& dir, const PrecisionEstimate& est,
                          const std::string& prefix = "theta") {
  std::filesystem::create_directories(dir);
  io::save_json(dir / (prefix + "_tilde.json"), io::matrix_to_json(est.theta_tilde));
  io::save_json(dir / (prefix + "_hat.json"), io::matrix_to_json(est.theta_hat));
  io::save_json(dir / (prefix + "_psd.json"), io::matrix_to_json(est.theta_psd));
  io::save_json(dir / (prefix == "theta" ? std::string("estimate.json") : prefix + "_estimate.json"),
                estimate_metadata(est));
}

}  // namespace kronsum
