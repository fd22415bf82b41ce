#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "kronsum/errors.hpp"
#include "kronsum/io.hpp"
#include "kronsum/linalg.hpp"

namespace kronsum {

/// min 1/2 b^T Gamma b - <gamma, b> + lambda ||b||_1  subject to  ||b||_1 <= b1.
/// Gamma may be indefinite; the l1 ball keeps the problem bounded.
struct LassoProblem {
  SymmetricMatrix gamma_mat;
  Vector gamma_vec;
  double lambda = 0.0;
  double b1 = std::numeric_limits<double>::infinity();

  Index dim() const noexcept { return gamma_vec.size(); }

  void validate() const {
    if (gamma_mat.dim() != gamma_vec.size()) {
      throw DimensionError("lasso problem: Gamma is " + std::to_string(gamma_mat.dim()) + "x" +
                           std::to_string(gamma_mat.dim()) + " but gamma has length " +
                           std::to_string(gamma_vec.size()));
    }
    if (!gamma_vec.allFinite()) throw ValidationError("lasso problem: gamma has non-finite entries");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lasso problem: lambda must be finite and >= 0");
    if (!(b1 > 0.0)) throw ValidationError("lasso problem: b1 must be > 0");
  }
};

struct SolverConfig {
  std::optional<double> eta;  ///< step size; empty means auto_step_size(Gamma)
  int max_iters = 10000;
  double tol = 1e-8;
  bool record_trace = false;
};

struct LassoSolution {
  Vector beta;
  int iterations = 0;
  bool converged = false;
  bool constraint_active = false;
  double objective = 0.0;
  double eta = 0.0;
  std::vector<double> objective_trace;  ///< objective at beta^(0), beta^(1), ... when recorded
  std::vector<double> step_norms;       ///< ||beta^(t+1) - beta^(t)||_2 when recorded
};

inline double lasso_objective(const LassoProblem& p, const Vector& beta) {
  return 0.5 * beta.dot(p.gamma_mat.matrix() * beta) - p.gamma_vec.dot(beta) + p.lambda * beta.lpNorm<1>();
}

/// Lipschitz constant of the smooth part, slightly inflated so the quadratic model majorizes it.
inline double auto_step_size(const SymmetricMatrix& gamma_mat) {
  if (gamma_mat.dim() == 0) return 1e-8;
  return std::max(spectral_norm(gamma_mat) * (1.0 + 1e-6), 1e-8);
}

/// One composite gradient step: the exact minimizer over the l1 ball of the linearized loss
/// plus (eta/2)||b - beta||^2 + lambda ||b||_1. Soft thresholding at lambda/eta followed by the
/// ball projection is the same as thresholding at lambda/eta + mu/eta for the smallest feasible mu.
inline Vector composite_gradient_step(const Vector& beta, const LassoProblem& p, double eta) {
  if (!(eta > 0.0)) throw ValidationError("step size eta must be > 0");
  const Vector grad = p.gamma_mat.matrix() * beta - p.gamma_vec;
  Vector next = soft_threshold(beta - grad / eta, p.lambda / eta);
  if (std::isfinite(p.b1) && next.lpNorm<1>() > p.b1) next = project_l1_ball(next, p.b1);
  return next;
}

/// Composite gradient descent from beta^(0) = 0.
inline LassoSolution solve_lasso(const LassoProblem& p, const SolverConfig& config = {}) {
  p.validate();
  if (config.max_iters < 1) throw ValidationError("max_iters must be >= 1");
  if (!(config.tol > 0.0)) throw ValidationError("tol must be > 0");

  LassoSolution sol;
  sol.eta = config.eta ? *config.eta : auto_step_size(p.gamma_mat);
  if (!(sol.eta > 0.0)) throw ValidationError("step size eta must be > 0");

  Vector beta = Vector::Zero(p.dim());
  double objective = 0.0;
  if (config.record_trace) sol.objective_trace.push_back(objective);

  for (int t = 1; t <= config.max_iters; ++t) {
    Vector next = composite_gradient_step(beta, p, sol.eta);
    const double step = (next - beta).norm();
    objective = lasso_objective(p, next);
    if (!std::isfinite(objective) || !next.allFinite()) {
      throw DivergenceError("corrected lasso diverged; step size too small?", next.norm());
    }
    if (config.record_trace) {
      sol.objective_trace.push_back(objective);
      sol.step_norms.push_back(step);
    }
    const bool done = step <= config.tol * (1.0 + beta.norm());
    beta = std::move(next);
    sol.iterations = t;
    if (done) {
      sol.converged = true;
      break;
    }
  }
  sol.objective = objective;
  sol.constraint_active = std::isfinite(p.b1) && beta.lpNorm<1>() >= p.b1 * (1.0 - 1e-9);
  sol.beta = std::move(beta);
  return sol;
}

/// Exhaustive grid minimizer over { k * grid_step } intersected with the l1 ball. Test oracle for p <= 3.
inline Vector brute_force_lasso(const LassoProblem& p, double grid_step) {
  p.validate();
  const Index dim = p.dim();
  if (dim < 1 || dim > 3) throw DimensionError("brute_force_lasso supports 1 <= p <= 3");
  if (!(grid_step > 0.0)) throw ValidationError("grid_step must be > 0");
  if (!std::isfinite(p.b1)) throw ValidationError("brute_force_lasso needs a finite b1");

  const auto half = static_cast<long>(std::floor(p.b1 / grid_step + 1e-9));
  const Matrix& g = p.gamma_mat.matrix();
  std::array<long, 3> k{};
  std::array<double, 3> b{};
  k.fill(-half);
  double best = std::numeric_limits<double>::infinity();
  std::array<double, 3> best_b{};
  const double radius = p.b1 * (1.0 + 1e-12);

  while (true) {
    double l1 = 0.0;
    for (Index i = 0; i < dim; ++i) {
      b[i] = static_cast<double>(k[i]) * grid_step;
      l1 += std::abs(b[i]);
    }
    if (l1 <= radius) {
      double value = p.lambda * l1;
      for (Index i = 0; i < dim; ++i) {
        double row = 0.0;
        for (Index c = 0; c < dim; ++c) row += g(i, c) * b[c];
        value += 0.5 * b[i] * row - p.gamma_vec(i) * b[i];
      }
      if (value < best) {
        best = value;
        best_b = b;
      }
    }
    Index axis = 0;
    while (axis < dim && ++k[axis] > half) k[axis++] = -half;
    if (axis == dim) break;
  }
  Vector out(dim);
  for (Index i = 0; i < dim; ++i) out(i) = best_b[i];
  return out;
}

/// CSV trace: iteration,objective,step_norm (iteration 0 is the starting point).
inline void write_solver_trace_csv(std::ostream& os, const LassoSolution& sol) {
  os << "iteration,objective,step_norm\n";
  for (std::size_t t = 0; t < sol.objective_trace.size(); ++t) {
    os << t << ',' << io::format_double(sol.objective_trace[t]) << ','
       << (t == 0 ? std::string("0") : io::format_double(sol.step_norms[t - 1])) << '\n';
  }
}

}  // namespace kronsum
