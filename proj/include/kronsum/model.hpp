#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "kronsum/errors.hpp"
#include "kronsum/io.hpp"
#include "kronsum/linalg.hpp"
#include "kronsum/random.hpp"

namespace kronsum {

/// Ground truth for X = Z1 A^{1/2} + B^{1/2} Z2: column covariance A (m x m, SPD, tr(A) = m)
/// and row covariance B (n x n, PSD), with the derived precisions and square roots cached.
class CovarianceModel {
 public:
  Index m() const noexcept { return a_.dim(); }
  Index n() const noexcept { return b_.dim(); }

  const SymmetricMatrix& a() const noexcept { return a_; }
  const SymmetricMatrix& b() const noexcept { return b_; }
  const SymmetricMatrix& theta() const noexcept { return theta_; }
  const SymmetricMatrix& sqrt_a() const noexcept { return sqrt_a_; }
  const SymmetricMatrix& sqrt_b() const noexcept { return sqrt_b_; }

  bool has_phi() const noexcept { return phi_.has_value(); }
  const SymmetricMatrix& phi() const {
    if (!phi_) throw NotPositiveDefinite("B is singular, Phi = B^{-1} is undefined", lambda_min_b_);
    return *phi_;
  }

  double tau_b() const { return b_.trace() / static_cast<double>(n()); }
  double a_max() const { return a_.matrix().diagonal().maxCoeff(); }
  double lambda_min_a() const noexcept { return lambda_min_a_; }
  double lambda_max_a() const noexcept { return lambda_max_a_; }
  double kappa_a() const noexcept { return lambda_max_a_ / lambda_min_a_; }
  double norm_a() const noexcept { return lambda_max_a_; }
  double norm_b() const noexcept { return std::max(lambda_max_b_, 0.0); }
  double lambda_min_b() const noexcept { return lambda_min_b_; }

  /// The same model seen through X^T: B plays the column role and A the row role.
  /// Requires B to be SPD. The trace normalization is not re-imposed.
  CovarianceModel transposed() const {
    CovarianceModel t;
    t.a_ = b_;
    t.b_ = a_;
    t.theta_ = phi();
    t.phi_ = theta_;
    t.sqrt_a_ = sqrt_b_;
    t.sqrt_b_ = sqrt_a_;
    t.lambda_min_a_ = lambda_min_b_;
    t.lambda_max_a_ = lambda_max_b_;
    t.lambda_min_b_ = lambda_min_a_;
    t.lambda_max_b_ = lambda_max_a_;
    return t;
  }

  friend CovarianceModel build_model(const SymmetricMatrix& a_raw, const SymmetricMatrix& b, bool rescale);

 private:
  SymmetricMatrix a_, b_, theta_, sqrt_a_, sqrt_b_;
  std::optional<SymmetricMatrix> phi_;
  double lambda_min_a_ = 0, lambda_max_a_ = 0, lambda_min_b_ = 0, lambda_max_b_ = 0;
};

/// Validates (A, B), optionally rescales A to trace m, and precomputes Theta, Phi and the roots.
inline CovarianceModel build_model(const SymmetricMatrix& a_raw, const SymmetricMatrix& b, bool rescale) {
  const Index m = a_raw.dim();
  if (m < 1 || b.dim() < 1) throw DimensionError("model dimensions must be positive");
  auto ea = eig_sym(a_raw);
  detail::require_spd(ea, "A is not positive definite");

  CovarianceModel model;
  if (rescale) {
    const double c = static_cast<double>(m) / a_raw.trace();
    model.a_ = c * a_raw;
    ea.values *= c;
  } else {
    if (std::abs(a_raw.trace() - static_cast<double>(m)) > 1e-8) {
      throw ValidationError("tr(A) = " + io::format_double(a_raw.trace()) + " but must equal m = " +
                            std::to_string(m) + " (pass rescale to normalize)");
    }
    model.a_ = a_raw;
  }
  model.lambda_min_a_ = ea.min();
  model.lambda_max_a_ = ea.max();
  model.theta_ = ea.apply([](double x) { return 1.0 / x; });
  model.sqrt_a_ = ea.apply([](double x) { return std::sqrt(x); });

  const auto eb = eig_sym(b);
  const double scale_b = std::max(1.0, std::abs(eb.max()));
  if (eb.min() < -1e-10 * scale_b) throw NotPositiveDefinite("B is not positive semidefinite", eb.min());
  model.b_ = b;
  model.lambda_min_b_ = eb.min();
  model.lambda_max_b_ = eb.max();
  model.sqrt_b_ = sqrt_psd(eb);
  if (eb.max() > 0.0 && eb.min() > 1e-10 * eb.max()) {
    model.phi_ = eb.apply([](double x) { return 1.0 / x; });
  }
  return model;
}

/// Observed matrix with optional simulation parts; X = X0 + W when the parts are kept.
struct MatrixSample {
  Matrix x;
  std::optional<Matrix> x0;
  std::optional<Matrix> w;
  std::uint64_t seed = 0;
  SubgaussianSpec spec;
};

namespace detail {

inline Matrix left_multiply(const SymmetricMatrix& s, const Matrix& z) {
  if (s.is_diagonal()) return s.matrix().diagonal().asDiagonal() * z;
  return s.matrix() * z;
}

inline Matrix right_multiply(const Matrix& z, const SymmetricMatrix& s) {
  if (s.is_diagonal()) return z * s.matrix().diagonal().asDiagonal();
  return z * s.matrix();
}

}  // namespace detail

/// Stream ids used under a sample seed.
inline constexpr std::uint64_t kSignalStream = 1;
inline constexpr std::uint64_t kNoiseStream = 2;

/// Draws X = Z1 A^{1/2} + B^{1/2} Z2; Z1 and Z2 come from disjoint streams of `seed`.
inline MatrixSample sample(const CovarianceModel& model, const SubgaussianSpec& spec, std::uint64_t seed,
                           bool keep_parts = true) {
  const Matrix z1 = draw_matrix(model.n(), model.m(), spec.law, derive_seed(seed, kSignalStream));
  const Matrix z2 = draw_matrix(model.n(), model.m(), spec.law, derive_seed(seed, kNoiseStream));
  Matrix x0 = detail::right_multiply(z1, model.sqrt_a());
  Matrix w = detail::left_multiply(model.sqrt_b(), z2);
  MatrixSample out;
  out.x = x0 + w;
  out.seed = seed;
  out.spec = spec;
  if (keep_parts) {
    out.x0 = std::move(x0);
    out.w = std::move(w);
  }
  return out;
}

struct PopulationRegression {
  Vector beta;     ///< beta*_k = -theta_jk / theta_jj, k != j
  double sigma2;   ///< residual variance 1 / theta_jj
};

inline PopulationRegression population_regression(const SymmetricMatrix& theta, Index j) {
  if (j < 0 || j >= theta.dim()) throw DimensionError("column index out of range");
  const double tjj = theta(j, j);
  return {-theta.column_without(j) / tjj, 1.0 / tjj};
}

inline PopulationRegression population_regression(const CovarianceModel& model, Index j) {
  return population_regression(model.theta(), j);
}

// -- named generators; covariances are returned raw and normalized by build_model --

namespace generators {

inline SymmetricMatrix ar1(Index dim, double rho) {
  if (!(std::abs(rho) < 1.0)) throw ValidationError("AR1 coefficient must satisfy |rho| < 1");
  Matrix s(dim, dim);
  for (Index j = 0; j < dim; ++j)
    for (Index i = 0; i < dim; ++i) s(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
  return SymmetricMatrix(std::move(s));
}

/// Precision with unit diagonal and `strength` on every entry with 0 < |i-j| <= (d-1)/2,
/// so each column has at most d nonzeros.
inline SymmetricMatrix banded_precision(Index dim, Index d, double strength) {
  if (d < 1) throw ValidationError("band sparsity d must be >= 1");
  const Index half = (d - 1) / 2;
  Matrix p = Matrix::Identity(dim, dim);
  for (Index j = 0; j < dim; ++j)
    for (Index i = 0; i < dim; ++i)
      if (i != j && std::abs(i - j) <= half) p(i, j) = strength;
  return SymmetricMatrix(std::move(p));
}

/// Covariance whose inverse is banded_precision(dim, d, strength).
inline SymmetricMatrix banded_precision_covariance(Index dim, Index d, double strength) {
  return inverse_spd(banded_precision(dim, d, strength));
}

/// Z Z^T / dim + 0.5 I with Gaussian Z; well conditioned and dense.
inline SymmetricMatrix random_spd(Index dim, std::uint64_t seed) {
  const Matrix z = draw_matrix(dim, dim, EntryLaw::gaussian, seed);
  Matrix s = z * z.transpose() / static_cast<double>(dim);
  s.diagonal().array() += 0.5;
  return SymmetricMatrix::midpoint(s);
}

}  // namespace generators

// -- persistence --

inline io::json model_to_json(const CovarianceModel& model) {
  return {{"m", model.m()}, {"n", model.n()}, {"A", io::matrix_to_json(model.a())},
          {"B", io::matrix_to_json(model.b())}};
}

inline CovarianceModel model_from_json(const io::json& j, bool rescale = false) {
  const auto a = io::symmetric_from_json(j.at("A"));
  const auto b = io::symmetric_from_json(j.at("B"));
  if (j.contains("m") && j.at("m").get<Index>() != a.dim()) throw ValidationError("model m does not match A");
  if (j.contains("n") && j.at("n").get<Index>() != b.dim()) throw ValidationError("model n does not match B");
  return build_model(a, b, rescale);
}

inline io::json sample_sidecar(const MatrixSample& s) {
  return {{"seed", s.seed}, {"law", to_string(s.spec.law)}, {"K", s.spec.psi2_bound}};
}

/// Writes X.csv (and X0.csv, W.csv when kept) plus sample.json into `dir`.
inline void save_sample(const std::filesystem::path& dir, const MatrixSample& s) {
  std::filesystem::create_directories(dir);
  io::save_matrix_csv(dir / "X.csv", s.x);
  if (s.x0) io::save_matrix_csv(dir / "X0.csv", *s.x0);
  if (s.w) io::save_matrix_csv(dir / "W.csv", *s.w);
  io::save_json(dir / "sample.json", sample_sidecar(s));
}

inline MatrixSample load_sample(const std::filesystem::path& dir) {
  MatrixSample s;
  s.x = io::load_matrix_csv(dir / "X.csv");
  if (std::filesystem::exists(dir / "X0.csv")) s.x0 = io::load_matrix_csv(dir / "X0.csv");
  if (std::filesystem::exists(dir / "W.csv")) s.w = io::load_matrix_csv(dir / "W.csv");
  if (std::filesystem::exists(dir / "sample.json")) {
    const auto meta = io::load_json(dir / "sample.json");
    s.seed = meta.value("seed", std::uint64_t{0});
    s.spec.law = parse_entry_law(meta.value("law", std::string("gaussian")));
    s.spec.psi2_bound = meta.value("K", 2.0);
  }
  return s;
}

}  // namespace kronsum
