#pragma once

#include <lapacke.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "kronsum/errors.hpp"

namespace kronsum {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Real symmetric matrix. Symmetry is exact: entry (i,j) and (j,i) are the same double.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;

  /// Throws ValidationError unless `m` is square, finite and exactly symmetric.
  explicit SymmetricMatrix(Matrix m) : data_(std::move(m)) {
    if (data_.rows() != data_.cols()) {
      throw DimensionError("symmetric matrix must be square, got " + std::to_string(data_.rows()) +
                           "x" + std::to_string(data_.cols()));
    }
    if (!data_.allFinite()) throw ValidationError("symmetric matrix has non-finite entries");
    for (Index j = 0; j < data_.cols(); ++j) {
      for (Index i = j + 1; i < data_.rows(); ++i) {
        if (data_(i, j) != data_(j, i)) {
          throw ValidationError("matrix is not exactly symmetric at (" + std::to_string(i) + "," +
                                std::to_string(j) + ")");
        }
      }
    }
  }

  /// Mirrors the lower triangle of `m` into the upper one.
  static SymmetricMatrix from_lower(const Matrix& m) {
    if (m.rows() != m.cols()) throw DimensionError("from_lower needs a square matrix");
    Matrix full = m.selfadjointView<Eigen::Lower>();
    return SymmetricMatrix(std::move(full));
  }

  /// (M + M^T) / 2, the nearest symmetric matrix in Frobenius norm.
  static SymmetricMatrix midpoint(const Matrix& m) {
    if (m.rows() != m.cols()) throw DimensionError("midpoint symmetrization needs a square matrix");
    Matrix s(m.rows(), m.cols());
    for (Index j = 0; j < m.cols(); ++j) {
      s(j, j) = m(j, j);
      for (Index i = j + 1; i < m.rows(); ++i) {
        const double v = 0.5 * (m(i, j) + m(j, i));
        s(i, j) = v;
        s(j, i) = v;
      }
    }
    return SymmetricMatrix(std::move(s));
  }

  static SymmetricMatrix identity(Index dim) { return SymmetricMatrix(Matrix::Identity(dim, dim)); }
  static SymmetricMatrix zero(Index dim) { return SymmetricMatrix(Matrix::Zero(dim, dim)); }
  static SymmetricMatrix diagonal(const Vector& d) {
    return SymmetricMatrix(Matrix(d.asDiagonal()));
  }

  Index dim() const noexcept { return data_.rows(); }
  const Matrix& matrix() const noexcept { return data_; }
  double operator()(Index i, Index j) const { return data_(i, j); }
  double trace() const { return data_.trace(); }

  bool is_diagonal() const {
    for (Index j = 0; j < dim(); ++j)
      for (Index i = j + 1; i < dim(); ++i)
        if (data_(i, j) != 0.0) return false;
    return true;
  }

  /// Principal submatrix on the given (ordered) index set.
  SymmetricMatrix principal(std::span<const Index> idx) const {
    const auto k = static_cast<Index>(idx.size());
    Matrix s(k, k);
    for (Index b = 0; b < k; ++b)
      for (Index a = 0; a < k; ++a) s(a, b) = data_(idx[a], idx[b]);
    return SymmetricMatrix(std::move(s));
  }

  /// Principal submatrix with row and column `j` deleted.
  SymmetricMatrix without(Index j) const {
    std::vector<Index> idx;
    idx.reserve(static_cast<std::size_t>(dim()));
    for (Index k = 0; k < dim(); ++k)
      if (k != j) idx.push_back(k);
    return principal(idx);
  }

  /// Column j with entry j deleted.
  Vector column_without(Index j) const {
    Vector v(dim() - 1);
    for (Index k = 0, r = 0; k < dim(); ++k)
      if (k != j) v(r++) = data_(k, j);
    return v;
  }

  friend SymmetricMatrix operator+(const SymmetricMatrix& a, const SymmetricMatrix& b) {
    return SymmetricMatrix(Matrix(a.data_ + b.data_));
  }
  friend SymmetricMatrix operator-(const SymmetricMatrix& a, const SymmetricMatrix& b) {
    return SymmetricMatrix(Matrix(a.data_ - b.data_));
  }
  friend SymmetricMatrix operator*(double c, const SymmetricMatrix& a) {
    return SymmetricMatrix(Matrix(c * a.data_));
  }
  friend bool operator==(const SymmetricMatrix& a, const SymmetricMatrix& b) {
    return a.dim() == b.dim() && a.data_ == b.data_;
  }

 private:
  Matrix data_;
};

/// Ascending eigenvalues; columns of `vectors` are the matching unit eigenvectors.
struct EigenDecomposition {
  Vector values;
  Matrix vectors;
  std::vector<Index> diagonal_order;  ///< set when the input was diagonal: vectors(diagonal_order[k], k) = 1

  /// U f(D) U^T for a scalar map f applied to the eigenvalues.
  template <typename F>
  SymmetricMatrix apply(F&& f) const {
    Vector mapped = values.unaryExpr(std::forward<F>(f));
    if (!diagonal_order.empty()) {
      Vector d(mapped.size());
      for (Index k = 0; k < mapped.size(); ++k) d(diagonal_order[static_cast<std::size_t>(k)]) = mapped(k);
      return SymmetricMatrix(Matrix(d.asDiagonal()));
    }
    Matrix out = vectors * mapped.asDiagonal() * vectors.transpose();
    return SymmetricMatrix::midpoint(out);
  }

  SymmetricMatrix reconstruct() const {
    return apply([](double x) { return x; });
  }

  double min() const { return values(0); }
  double max() const { return values(values.size() - 1); }
};

/// Symmetric eigendecomposition (LAPACK divide and conquer, with a shortcut for diagonal input).
inline EigenDecomposition eig_sym(const SymmetricMatrix& m) {
  const Index n = m.dim();
  EigenDecomposition out;
  if (m.is_diagonal()) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return m(a, a) < m(b, b); });
    out.values.resize(n);
    out.vectors = Matrix::Zero(n, n);
    for (Index k = 0; k < n; ++k) {
      out.values(k) = m(order[k], order[k]);
      out.vectors(order[k], k) = 1.0;
    }
    out.diagonal_order = std::move(order);
    return out;
  }
  out.vectors = m.matrix();
  out.values.resize(n);
  const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', static_cast<lapack_int>(n),
                                         out.vectors.data(), static_cast<lapack_int>(n),
                                         out.values.data());
  if (info != 0) {
    throw ConvergenceError("symmetric eigensolver failed (info " + std::to_string(info) + ")",
                           static_cast<double>(info));
  }
  return out;
}

inline double lambda_min(const SymmetricMatrix& m) { return eig_sym(m).min(); }
inline double lambda_max(const SymmetricMatrix& m) { return eig_sym(m).max(); }

namespace detail {

inline void require_spd(const EigenDecomposition& e, const char* what) {
  const double top = std::max(std::abs(e.max()), 0.0);
  if (!(e.min() > 1e-10 * top) || top == 0.0) throw NotPositiveDefinite(what, e.min());
}

}  // namespace detail

/// Unique symmetric positive definite square root.
inline SymmetricMatrix sqrt_spd(const SymmetricMatrix& m) {
  const auto e = eig_sym(m);
  detail::require_spd(e, "sqrt_spd: matrix is not positive definite");
  return e.apply([](double x) { return std::sqrt(x); });
}

/// Square root of a PSD matrix; eigenvalues in (-tol, 0) are treated as zero.
inline SymmetricMatrix sqrt_psd(const EigenDecomposition& e) {
  return e.apply([](double x) { return std::sqrt(std::max(x, 0.0)); });
}

inline SymmetricMatrix inverse_spd(const SymmetricMatrix& m) {
  const auto e = eig_sym(m);
  detail::require_spd(e, "inverse_spd: matrix is not positive definite");
  return e.apply([](double x) { return 1.0 / x; });
}

/// Largest absolute eigenvalue.
inline double spectral_norm(const SymmetricMatrix& m) {
  const auto e = eig_sym(m);
  return std::max(std::abs(e.min()), std::abs(e.max()));
}

/// Largest singular value, via the smaller of the two Gram matrices.
inline double spectral_norm(const Matrix& m) {
  if (!m.allFinite()) throw ValidationError("spectral_norm: non-finite entries");
  if (m.size() == 0) return 0.0;
  Matrix gram = m.rows() >= m.cols() ? Matrix(m.transpose() * m) : Matrix(m * m.transpose());
  const double top = eig_sym(SymmetricMatrix::midpoint(gram)).max();
  return std::sqrt(std::max(top, 0.0));
}

inline double frobenius_norm(const Matrix& m) { return m.norm(); }
inline double max_norm(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// Matrix l1 norm: largest absolute column sum.
inline double l1_norm(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().colwise().sum().maxCoeff();
}

inline Vector soft_threshold(const Vector& v, double t) {
  if (!(t >= 0.0)) throw ValidationError("soft_threshold: threshold must be >= 0");
  Vector out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v(i)) - t;
    out(i) = a > 0.0 ? std::copysign(a, v(i)) : 0.0;
  }
  return out;
}

/// The shift theta >= 0 with sum_i max(|v_i| - theta, 0) = radius, or 0 when v is already inside.
inline double l1_ball_shift(const Vector& v, double radius) {
  const double norm1 = v.lpNorm<1>();
  if (norm1 <= radius) return 0.0;
  std::vector<double> mags(static_cast<std::size_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) mags[static_cast<std::size_t>(i)] = std::abs(v(i));
  std::sort(mags.begin(), mags.end(), std::greater<>());
  double cumulative = 0.0;
  double shift = 0.0;
  for (std::size_t k = 0; k < mags.size(); ++k) {
    cumulative += mags[k];
    const double candidate = (cumulative - radius) / static_cast<double>(k + 1);
    if (mags[k] - candidate > 0.0) shift = candidate;
  }
  return std::max(shift, 0.0);
}

/// Euclidean projection onto { x : ||x||_1 <= radius } (exact, sort based).
inline Vector project_l1_ball(const Vector& v, double radius) {
  if (!(radius >= 0.0)) throw ValidationError("project_l1_ball: radius must be >= 0");
  if (v.lpNorm<1>() <= radius) return v;
  if (radius == 0.0) return Vector::Zero(v.size());
  Vector out = soft_threshold(v, l1_ball_shift(v, radius));
  const double norm1 = out.lpNorm<1>();
  if (norm1 > radius) out *= radius / norm1;
  return out;
}

}  // namespace kronsum
