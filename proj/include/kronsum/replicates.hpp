#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kronsum/errors.hpp"
#include "kronsum/gram.hpp"
#include "kronsum/io.hpp"
#include "kronsum/linalg.hpp"
#include "kronsum/model.hpp"
#include "kronsum/precision.hpp"
#include "kronsum/random.hpp"

namespace kronsum {

/// N replicated n x m observations X_i = X_{0,i} + W_i.
/// shared_signal (Case 1): every replicate measures the same X_0.
/// Otherwise (Case 2) the X_{0,i} are independent.
struct ReplicateSet {
  std::vector<Matrix> samples;
  bool shared_signal = true;
  std::uint64_t seed = 0;
  SubgaussianSpec spec;

  Index count() const noexcept { return static_cast<Index>(samples.size()); }
  Index n() const { return samples.empty() ? 0 : samples.front().rows(); }
  Index m() const { return samples.empty() ? 0 : samples.front().cols(); }

  void validate() const {
    if (samples.empty()) throw ValidationError("replicate set is empty");
    for (const auto& s : samples) {
      if (s.rows() != n() || s.cols() != m()) throw DimensionError("replicates must share one shape");
      if (!s.allFinite()) throw ValidationError("replicate has non-finite entries");
    }
  }
};

/// Draws N replicates. Replicate i uses its own noise stream, so the first k replicates of a larger
/// draw equal a k-replicate draw with the same seed.
inline ReplicateSet sample_replicates(const CovarianceModel& model, Index count, bool shared_signal,
                                      const SubgaussianSpec& spec, std::uint64_t seed) {
  if (count < 1) throw ValidationError("need at least one replicate");
  ReplicateSet reps;
  reps.shared_signal = shared_signal;
  reps.seed = seed;
  reps.spec = spec;
  Matrix shared;
  if (shared_signal) {
    shared = detail::right_multiply(draw_matrix(model.n(), model.m(), spec.law, derive_seed(seed, kSignalStream)),
                                    model.sqrt_a());
  }
  for (Index i = 0; i < count; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    const Matrix w = detail::left_multiply(
        model.sqrt_b(), draw_matrix(model.n(), model.m(), spec.law, derive_seed(seed, kNoiseStream, idx)));
    if (shared_signal) {
      reps.samples.push_back(shared + w);
    } else {
      const Matrix x0 = detail::right_multiply(
          draw_matrix(model.n(), model.m(), spec.law, derive_seed(seed, kSignalStream, idx)), model.sqrt_a());
      reps.samples.push_back(x0 + w);
    }
  }
  return reps;
}

struct PairDifferences {
  std::vector<Matrix> diffs;   ///< X_{2i-1} - X_{2i}
  bool dropped_last = false;   ///< N was odd and the last replicate was left out
  Index replicates_used = 0;
};

/// Pairwise differences of a shared-signal set. The signal cancels, leaving covariance I_m (x) 2B.
inline PairDifferences pair_differences(const ReplicateSet& reps) {
  reps.validate();
  if (!reps.shared_signal) throw ValidationError("pair differences need a shared-signal replicate set");
  if (reps.count() < 2) throw ValidationError("pair differences need at least 2 replicates");
  PairDifferences out;
  out.dropped_last = reps.count() % 2 == 1;
  out.replicates_used = reps.count() - (out.dropped_last ? 1 : 0);
  for (Index i = 0; i + 1 < reps.count(); i += 2)
    out.diffs.push_back(reps.samples[static_cast<std::size_t>(i)] - reps.samples[static_cast<std::size_t>(i + 1)]);
  return out;
}

/// B_tilde = sum_i W_i W_i^T / (N m), with N = 2 * diffs.size(); unbiased for B and PSD.
inline SymmetricMatrix estimate_b_tilde(std::span<const Matrix> diffs) {
  if (diffs.empty()) throw ValidationError("estimate_b_tilde needs at least one difference");
  const Index n = diffs.front().rows();
  const Index m = diffs.front().cols();
  Matrix acc = Matrix::Zero(n, n);
  const double scale = 1.0 / (2.0 * static_cast<double>(diffs.size()) * static_cast<double>(m));
  for (const auto& d : diffs) {
    if (d.rows() != n || d.cols() != m) throw DimensionError("differences must share one shape");
    acc.selfadjointView<Eigen::Lower>().rankUpdate(d, scale);
  }
  return SymmetricMatrix::from_lower(acc);
}

// ---------------------------------------------------------------------------
// Graphical lasso
// ---------------------------------------------------------------------------

namespace detail {

/// Position in the full index set of the r-th entry once index j is removed.
constexpr Index rest_index(Index j, Index r) noexcept { return r < j ? r : r + 1; }

}  // namespace detail

struct GlassoConfig {
  std::optional<double> rho;  ///< empty: rho_scale * sqrt(log n / (N m)) where applicable
  double rho_scale = 2.0;
  int max_sweeps = 1000;
  double tol = 1e-8;          ///< on the KKT residual
};

struct GlassoResult {
  SymmetricMatrix phi;
  SymmetricMatrix w;          ///< working covariance estimate
  double rho = 0.0;
  int sweeps = 0;
  double kkt_residual = 0.0;
};

/// Largest violation of the optimality conditions of
///   max log det Phi - tr(S Phi) - rho sum_{i != j} |Phi_ij|
/// measured with W = Phi^{-1}: diagonal W_ii = S_ii; off the support |W_ij - S_ij| <= rho;
/// on the support W_ij - S_ij = rho sign(Phi_ij).
inline double glasso_kkt_residual(const SymmetricMatrix& s, const SymmetricMatrix& phi, double rho) {
  const Matrix w = inverse_spd(phi).matrix();
  const Index p = s.dim();
  double worst = 0.0;
  for (Index j = 0; j < p; ++j) {
    worst = std::max(worst, std::abs(w(j, j) - s(j, j)));
    for (Index i = j + 1; i < p; ++i) {
      const double gap = w(i, j) - s(i, j);
      const double v = phi(i, j) != 0.0 ? std::abs(gap - rho * (phi(i, j) > 0 ? 1.0 : -1.0))
                                        : std::max(std::abs(gap) - rho, 0.0);
      worst = std::max(worst, v);
    }
  }
  return worst;
}

/// Block coordinate descent for the graphical lasso, penalizing off-diagonal entries only.
inline GlassoResult glasso(const SymmetricMatrix& s, const GlassoConfig& config) {
  const Index p = s.dim();
  const double rho = config.rho.value_or(0.0);
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw ValidationError("glasso: rho must be finite and >= 0");
  if (config.max_sweeps < 1 || !(config.tol > 0.0)) throw ValidationError("glasso: bad sweep/tol settings");
  const auto es = eig_sym(s);
  if (es.min() < -1e-10 * std::max(1.0, std::abs(es.max()))) {
    throw NotPositiveDefinite("glasso: S is not positive semidefinite", es.min());
  }
  if (rho == 0.0 && !(es.min() > 1e-10 * std::abs(es.max()))) {
    throw NotPositiveDefinite("glasso: S is singular and rho = 0", es.min());
  }
  if (s.matrix().diagonal().minCoeff() <= 0.0) {
    throw NotPositiveDefinite("glasso: S has a non-positive diagonal", s.matrix().diagonal().minCoeff());
  }

  GlassoResult out;
  out.rho = rho;
  Matrix w = s.matrix();
  Matrix betas = Matrix::Zero(p - 1 > 0 ? p - 1 : 1, p);

  auto assemble = [&]() {
    Matrix phi = Matrix::Zero(p, p);
    for (Index j = 0; j < p; ++j) {
      double quad = w(j, j);
      for (Index r = 0; r < p - 1; ++r) quad -= w(detail::rest_index(j, r), j) * betas(r, j);
      const double pjj = 1.0 / quad;
      phi(j, j) = pjj;
      for (Index r = 0; r < p - 1; ++r) phi(detail::rest_index(j, r), j) = -betas(r, j) * pjj;
    }
    return SymmetricMatrix::midpoint(phi);
  };

  for (int sweep = 1; sweep <= config.max_sweeps; ++sweep) {
    for (Index j = 0; j < p; ++j) {
      // Lasso subproblem: min 1/2 b^T W11 b - s12^T b + rho ||b||_1 by coordinate descent.
      for (int inner = 0; inner < 10000; ++inner) {
        double change = 0.0;
        for (Index a = 0; a < p - 1; ++a) {
          const Index ia = detail::rest_index(j, a);
          double r = s(ia, j);
          for (Index b = 0; b < p - 1; ++b)
            if (b != a) r -= w(ia, detail::rest_index(j, b)) * betas(b, j);
          const double mag = std::abs(r) - rho;
          const double updated = mag > 0.0 ? std::copysign(mag, r) / w(ia, ia) : 0.0;
          change = std::max(change, std::abs(updated - betas(a, j)));
          betas(a, j) = updated;
        }
        if (change <= 1e-14) break;
      }
      for (Index a = 0; a < p - 1; ++a) {
        const Index ia = detail::rest_index(j, a);
        double v = 0.0;
        for (Index b = 0; b < p - 1; ++b) v += w(ia, detail::rest_index(j, b)) * betas(b, j);
        w(ia, j) = v;
        w(j, ia) = v;
      }
    }
    out.sweeps = sweep;
    const auto phi = assemble();
    const auto ephi = eig_sym(phi);
    if (!(ephi.min() > 0.0)) continue;
    out.kkt_residual = glasso_kkt_residual(s, phi, rho);
    if (out.kkt_residual <= config.tol) {
      out.phi = phi;
      out.w = SymmetricMatrix::midpoint(w);
      return out;
    }
  }
  throw ConvergenceError("glasso did not converge in " + std::to_string(config.max_sweeps) + " sweeps",
                         out.kkt_residual);
}

inline double default_glasso_rho(const GlassoConfig& config, Index n, Index replicates, Index m) {
  if (config.rho) return *config.rho;
  return config.rho_scale * std::sqrt(std::log(static_cast<double>(n)) /
                                      (static_cast<double>(replicates) * static_cast<double>(m)));
}

struct ReplicatePhiEstimate {
  GlassoResult glasso;
  SymmetricMatrix b_tilde;
  bool dropped_last = false;
};

/// Pairwise differences, B_tilde, then graphical lasso on B_tilde.
inline ReplicatePhiEstimate estimate_phi_replicates(const ReplicateSet& reps, const GlassoConfig& config = {}) {
  const auto pairs = pair_differences(reps);
  ReplicatePhiEstimate out;
  out.b_tilde = estimate_b_tilde(pairs.diffs);
  out.dropped_last = pairs.dropped_last;
  GlassoConfig c = config;
  c.rho = default_glasso_rho(config, reps.n(), pairs.replicates_used, reps.m());
  out.glasso = glasso(out.b_tilde, c);
  return out;
}

inline Matrix replicate_mean(const ReplicateSet& reps) {
  reps.validate();
  Matrix mean = Matrix::Zero(reps.n(), reps.m());
  for (const auto& s : reps.samples) mean += s;
  return mean / static_cast<double>(reps.count());
}

/// Theta from the replicate mean X_bar, whose noise covariance is B / N:
/// Gamma_hat = X_bar^T X_bar / n - (tau_hat / N) I with tau_hat = tr(B_tilde) / n. No trace assumption on A.
inline PrecisionEstimate estimate_theta_replicates(const ReplicateSet& reps, const SymmetricMatrix& b_tilde,
                                                   const EstimatorOptions& opts = {}) {
  reps.validate();
  if (!reps.shared_signal) throw ValidationError("mean-response estimation needs a shared-signal replicate set");
  if (b_tilde.dim() != reps.n()) throw DimensionError("B_tilde must be n x n");
  const Matrix mean = replicate_mean(reps);
  const double count = static_cast<double>(reps.count());
  const double tau_hat = b_tilde.trace() / static_cast<double>(reps.n());
  auto gram = corrected_gram(mean, tau_hat / count);
  EstimatorOptions o = opts;
  o.oracle_noise_scale = opts.oracle_noise_scale / count;
  return estimate_from_gram(gram, &mean, o, o.truth);
}

struct Case2Stacks {
  Matrix wide;  ///< [X_1, ..., X_N], n x (N m); column covariance I_N (x) A
  Matrix tall;  ///< [X_1; ...; X_N], (N n) x m; row covariance I_N (x) B
};

inline Case2Stacks stack_case2(const ReplicateSet& reps) {
  reps.validate();
  if (reps.shared_signal) throw ValidationError("stacking needs independent signals (Case 2)");
  const Index n = reps.n(), m = reps.m(), count = reps.count();
  Case2Stacks out{Matrix(n, count * m), Matrix(count * n, m)};
  for (Index i = 0; i < count; ++i) {
    out.wide.middleCols(i * m, m) = reps.samples[static_cast<std::size_t>(i)];
    out.tall.middleRows(i * n, n) = reps.samples[static_cast<std::size_t>(i)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: a directory of X_<i>.csv files plus manifest.json
// ---------------------------------------------------------------------------

inline void save_replicates(const std::filesystem::path& dir, const ReplicateSet& reps) {
  reps.validate();
  std::filesystem::create_directories(dir);
  io::json files = io::json::array();
  for (Index i = 0; i < reps.count(); ++i) {
    const std::string name = "X_" + std::to_string(i + 1) + ".csv";
    io::save_matrix_csv(dir / name, reps.samples[static_cast<std::size_t>(i)]);
    files.push_back(name);
  }
  io::save_json(dir / "manifest.json", {{"N", reps.count()},
                                        {"n", reps.n()},
                                        {"m", reps.m()},
                                        {"shared_signal", reps.shared_signal},
                                        {"seed", reps.seed},
                                        {"law", to_string(reps.spec.law)},
                                        {"files", files}});
}

inline ReplicateSet load_replicates(const std::filesystem::path& manifest_path) {
  const auto manifest = io::load_json(manifest_path);
  const auto dir = manifest_path.parent_path();
  ReplicateSet reps;
  reps.shared_signal = manifest.at("shared_signal").get<bool>();
  reps.seed = manifest.value("seed", std::uint64_t{0});
  reps.spec.law = parse_entry_law(manifest.value("law", std::string("gaussian")));
  const auto count = manifest.at("N").get<Index>();
  for (Index i = 0; i < count; ++i) {
    const std::string name = manifest.contains("files") ? manifest.at("files").at(static_cast<std::size_t>(i)).get<std::string>()
                                                        : "X_" + std::to_string(i + 1) + ".csv";
    reps.samples.push_back(io::load_matrix_csv(dir / name));
  }
  reps.validate();
  if (reps.n() != manifest.at("n").get<Index>() || reps.m() != manifest.at("m").get<Index>()) {
    throw DimensionError("replicate files do not match the manifest shape");
  }
  return reps;
}

}  // namespace kronsum
