#pragma once

#include <algorithm>
#include <cmath>

#include "kronsum/errors.hpp"
#include "kronsum/io.hpp"
#include "kronsum/linalg.hpp"

namespace kronsum {

struct TraceEstimate {
  double tr_b_hat;   ///< (1/m) (||X||_F^2 - n tr(A))_+
  double tau_b_hat;  ///< tr_b_hat / n
};

/// Noise-trace estimate from a single observation, given the known signal trace tr(A).
inline TraceEstimate estimate_trace_b(const Matrix& x, double tr_a) {
  if (!(tr_a > 0.0)) throw ValidationError("tr(A) must be positive");
  if (x.size() == 0) throw DimensionError("empty data matrix");
  const auto n = static_cast<double>(x.rows());
  const auto m = static_cast<double>(x.cols());
  const double tr_b = std::max(x.squaredNorm() - n * tr_a, 0.0) / m;
  return {tr_b, tr_b / n};
}

/// X^T X / n with exact symmetry (lower triangle computed once and mirrored).
inline SymmetricMatrix sample_gram(const Matrix& x) {
  if (x.size() == 0) throw DimensionError("empty data matrix");
  Matrix g = Matrix::Zero(x.cols(), x.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose(), 1.0 / static_cast<double>(x.rows()));
  return SymmetricMatrix::from_lower(g);
}

/// Gamma_hat = X^T X / n - tau_B_hat I. May be indefinite.
struct CorrectedGram {
  double tr_b_hat = 0.0;
  double tau_b_hat = 0.0;
  SymmetricMatrix gamma_hat;
  Index n = 0;
  Index m = 0;
};

inline CorrectedGram corrected_gram_from(const SymmetricMatrix& sample_gram_matrix, Index n, double tau_b_hat) {
  if (!std::isfinite(tau_b_hat)) throw ValidationError("tau_B_hat must be finite");
  Matrix g = sample_gram_matrix.matrix();
  g.diagonal().array() -= tau_b_hat;
  CorrectedGram out;
  out.tau_b_hat = tau_b_hat;
  out.tr_b_hat = tau_b_hat * static_cast<double>(n);
  out.gamma_hat = SymmetricMatrix(std::move(g));
  out.n = n;
  out.m = sample_gram_matrix.dim();
  return out;
}

inline CorrectedGram corrected_gram(const Matrix& x, double tau_b_hat) {
  if (!x.allFinite()) throw ValidationError("data matrix has non-finite entries");
  return corrected_gram_from(sample_gram(x), x.rows(), tau_b_hat);
}

/// Inputs of the j-th nodewise regression.
struct NodewiseInput {
  Index j = 0;
  SymmetricMatrix gamma_j;  ///< Gamma_hat with row/column j deleted
  Vector gamma_vec;         ///< (1/n) X_{-j}^T X_j
};

/// Off-diagonal entries of Gamma_hat carry no correction, so gamma^(j) is column j of Gamma_hat
/// without its diagonal entry.
inline NodewiseInput nodewise_input(const CorrectedGram& gram, Index j) {
  const Index m = gram.gamma_hat.dim();
  if (m < 2) throw DimensionError("nodewise regression needs at least 2 columns");
  if (j < 0 || j >= m) throw DimensionError("column index " + std::to_string(j) + " out of range");
  return {j, gram.gamma_hat.without(j), gram.gamma_hat.column_without(j)};
}

inline NodewiseInput nodewise_input(const Matrix& x, double tau_b_hat, Index j) {
  if (x.cols() < 2) throw DimensionError("nodewise regression needs at least 2 columns");
  return nodewise_input(corrected_gram(x, tau_b_hat), j);
}

inline io::json gram_to_json(const CorrectedGram& g) {
  auto j = io::matrix_to_json(g.gamma_hat);
  j["tr_B_hat"] = g.tr_b_hat;
  j["tau_B_hat"] = g.tau_b_hat;
  j["n"] = g.n;
  return j;
}

inline CorrectedGram gram_from_json(const io::json& j) {
  CorrectedGram g;
  g.gamma_hat = io::symmetric_from_json(j);
  g.tr_b_hat = j.at("tr_B_hat").get<double>();
  g.tau_b_hat = j.at("tau_B_hat").get<double>();
  g.n = j.value("n", Index{0});
  g.m = g.gamma_hat.dim();
  return g;
}

}  // namespace kronsum
