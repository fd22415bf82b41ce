#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "kronsum/errors.hpp"
#include "kronsum/gram.hpp"
#include "kronsum/io.hpp"
#include "kronsum/linalg.hpp"
#include "kronsum/model.hpp"
#include "kronsum/parallel.hpp"
#include "kronsum/precision.hpp"
#include "kronsum/random.hpp"

namespace kronsum {

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

struct SupportMetrics {
  double precision = 1.0;
  double recall = 1.0;
  double f1 = 1.0;
};

/// Off-diagonal edge recovery: predicted edges are |estimate_ij| > threshold (i < j),
/// true edges are the nonzero off-diagonal entries of the truth (up to 1e-10 of its max entry).
inline SupportMetrics support_metrics(const SymmetricMatrix& estimate, const SymmetricMatrix& truth, double threshold) {
  if (estimate.dim() != truth.dim()) throw DimensionError("support_metrics: dimension mismatch");
  const double truth_tol = 1e-10 * max_norm(truth.matrix());
  long tp = 0, fp = 0, fn = 0;
  for (Index j = 0; j < truth.dim(); ++j) {
    for (Index i = j + 1; i < truth.dim(); ++i) {
      const bool predicted = std::abs(estimate(i, j)) > threshold;
      const bool actual = std::abs(truth(i, j)) > truth_tol;
      tp += predicted && actual;
      fp += predicted && !actual;
      fn += !predicted && actual;
    }
  }
  SupportMetrics out;
  out.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  out.recall = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  out.f1 = out.precision + out.recall == 0.0 ? 0.0 : 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

/// Half the smallest nonzero off-diagonal magnitude of the truth.
inline double default_support_threshold(const SymmetricMatrix& truth) {
  const double tol = 1e-10 * max_norm(truth.matrix());
  double smallest = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < truth.dim(); ++j)
    for (Index i = j + 1; i < truth.dim(); ++i)
      if (std::abs(truth(i, j)) > tol) smallest = std::min(smallest, std::abs(truth(i, j)));
  return std::isfinite(smallest) ? 0.5 * smallest : tol;
}

/// Largest number of nonzeros in a column of the truth.
inline Index column_sparsity(const SymmetricMatrix& truth) {
  const double tol = 1e-10 * max_norm(truth.matrix());
  Index best = 0;
  for (Index j = 0; j < truth.dim(); ++j) best = std::max<Index>(best, (truth.matrix().col(j).array().abs() > tol).count());
  return best;
}

// ---------------------------------------------------------------------------
// Metrics table
// ---------------------------------------------------------------------------

struct MetricsRow {
  Index n = 0, m = 0, d = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  double operator_error = 0.0;      ///< ||Theta_hat - Theta||_2
  double relative_error = 0.0;      ///< operator_error / ||Theta||_2
  double frobenius_error = 0.0;
  double max_error = 0.0;
  double psd_operator_error = 0.0;  ///< ||Theta_hat_+ - Theta||_2
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  double trace_b_error = 0.0;       ///< |tr_hat(B) - tr(B)| / tr(B) (absolute when tr(B) = 0)
  bool repair_triggered = false;
  double wall_time = 0.0;
  std::string error;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline const char* metrics_header() {
  return "n,m,d,rep,seed,operator_error,relative_error,frobenius_error,max_error,psd_operator_error,"
         "precision,recall,f1,trace_b_error,repair_triggered,wall_time,error";
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  using io::format_double;
  os << metrics_header() << '\n';
  for (const auto& r : rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << r.n << ',' << r.m << ',' << r.d << ',' << r.rep << ',' << r.seed << ',' << format_double(r.operator_error)
       << ',' << format_double(r.relative_error) << ',' << format_double(r.frobenius_error) << ','
       << format_double(r.max_error) << ',' << format_double(r.psd_operator_error) << ',' << format_double(r.precision)
       << ',' << format_double(r.recall) << ',' << format_double(r.f1) << ',' << format_double(r.trace_b_error) << ','
       << (r.repair_triggered ? 1 : 0) << ',' << format_double(r.wall_time) << ',' << err << '\n';
  }
}

inline std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("metrics CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != metrics_header()) throw ValidationError("metrics CSV header does not match");
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = io::split(line, ',');
    if (f.size() != 17) throw ValidationError("metrics CSV row has " + std::to_string(f.size()) + " fields, expected 17");
    auto integer = [](std::string_view s) {
      long long v = 0;
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw ValidationError("bad integer '" + std::string(s) + "'");
      return v;
    };
    MetricsRow r;
    r.n = integer(f[0]);
    r.m = integer(f[1]);
    r.d = integer(f[2]);
    r.rep = static_cast<int>(integer(f[3]));
    {
      std::uint64_t s = 0;
      const auto res = std::from_chars(f[4].data(), f[4].data() + f[4].size(), s);
      if (res.ec != std::errc{}) throw ValidationError("bad seed");
      r.seed = s;
    }
    r.operator_error = io::parse_double(f[5]);
    r.relative_error = io::parse_double(f[6]);
    r.frobenius_error = io::parse_double(f[7]);
    r.max_error = io::parse_double(f[8]);
    r.psd_operator_error = io::parse_double(f[9]);
    r.precision = io::parse_double(f[10]);
    r.recall = io::parse_double(f[11]);
    r.f1 = io::parse_double(f[12]);
    r.trace_b_error = io::parse_double(f[13]);
    r.repair_triggered = integer(f[14]) != 0;
    r.wall_time = io::parse_double(f[15]);
    r.error = std::string(f[16]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

/// Column covariance A: identity, ar1(rho), banded(d, strength) precision, random SPD, or a model file.
struct SignalSpec {
  std::string kind = "banded";
  Index m = 50;
  double rho = 0.3;
  Index d = 3;
  double strength = 0.3;
  std::uint64_t seed = 1;
  std::string path;
};

/// Row covariance B (n x n, built per grid value of n): zero, identity, ar1(rho) or banded precision,
/// times `scale`; with cap_to_signal the result is shrunk so that ||B||_2 <= lambda_max(A).
struct NoiseSpec {
  std::string kind = "ar1";
  double scale = 0.5;
  double rho = 0.3;
  Index d = 3;
  double strength = 0.3;
  bool cap_to_signal = true;
};

struct ExperimentConfig {
  SignalSpec signal;
  NoiseSpec noise;
  std::vector<Index> n_grid;
  int reps = 1;
  EstimatorOptions estimator;   ///< truth is filled in per cell
  SubgaussianSpec spec;
  std::uint64_t seed = 0;
  std::optional<double> support_threshold;
  bool record_timing = false;   ///< wall_time stays 0 unless set, keeping output reproducible
  unsigned threads = 1;         ///< cells run in parallel; per-cell estimation is sequential
  std::string output_dir;
  /// Called once per successful cell with its row and full estimate; must be thread-safe when threads > 1.
  std::function<void(const MetricsRow&, const PrecisionEstimate&)> observer;

  void validate() const {
    if (n_grid.empty()) throw ValidationError("experiment grid of n values is empty");
    for (auto n : n_grid)
      if (n < 2) throw ValidationError("every n in the grid must be >= 2");
    if (reps < 1) throw ValidationError("reps must be >= 1");
    if (signal.kind != "file" && signal.m < 2) throw ValidationError("signal dimension m must be >= 2");
  }
};

inline SymmetricMatrix build_signal(const SignalSpec& s) {
  if (s.kind == "identity") return SymmetricMatrix::identity(s.m);
  if (s.kind == "ar1") return generators::ar1(s.m, s.rho);
  if (s.kind == "banded" || s.kind == "tridiagonal") return generators::banded_precision_covariance(s.m, s.d, s.strength);
  if (s.kind == "random") return generators::random_spd(s.m, s.seed);
  throw ValidationError("unknown signal generator '" + s.kind + "'");
}

inline SymmetricMatrix build_noise(const NoiseSpec& s, Index n, double lambda_max_a) {
  SymmetricMatrix b;
  if (s.kind == "zero") return SymmetricMatrix::zero(n);
  if (s.kind == "identity") b = SymmetricMatrix::identity(n);
  else if (s.kind == "ar1") b = generators::ar1(n, s.rho);
  else if (s.kind == "banded" || s.kind == "tridiagonal") b = generators::banded_precision_covariance(n, s.d, s.strength);
  else throw ValidationError("unknown noise generator '" + s.kind + "'");
  b = s.scale * b;
  if (s.cap_to_signal) {
    // Gershgorin bound first; the exact norm is only needed when the bound is not already below the cap.
    const double gersh = b.matrix().cwiseAbs().rowwise().sum().maxCoeff();
    if (gersh > lambda_max_a) {
      const double norm = spectral_norm(b);
      if (norm > lambda_max_a) b = (lambda_max_a / norm) * b;
    }
  }
  return b;
}

/// Ground-truth model for one grid value of n.
inline CovarianceModel build_experiment_model(const ExperimentConfig& config, Index n) {
  if (config.signal.kind == "file") {
    auto model = model_from_json(io::load_json(config.signal.path), false);
    if (model.n() != n) throw ValidationError("model file has n = " + std::to_string(model.n()) + ", grid asks for " + std::to_string(n));
    return model;
  }
  const auto a_raw = build_signal(config.signal);
  const double lmax = lambda_max(a_raw) * static_cast<double>(a_raw.dim()) / a_raw.trace();
  return build_model(a_raw, build_noise(config.noise, n, lmax), true);
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

/// Seed of one (n, rep) cell; independent of the grid and of the number of reps.
inline std::uint64_t cell_seed(std::uint64_t seed, Index n, int rep) {
  return derive_seed(seed, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(rep));
}

/// Simulates, estimates and scores a single cell against a prebuilt model.
inline MetricsRow run_cell(const ExperimentConfig& config, const CovarianceModel& model, int rep) {
  MetricsRow row;
  row.n = model.n();
  row.m = model.m();
  row.d = column_sparsity(model.theta());
  row.rep = rep;
  row.seed = cell_seed(config.seed, model.n(), rep);
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto s = sample(model, config.spec, row.seed, false);
    EstimatorOptions opts = config.estimator;
    opts.truth = &model;
    opts.threads = 1;
    const auto est = estimate_theta(s.x, static_cast<double>(model.m()), opts);
    const Matrix diff = est.theta_hat.matrix() - model.theta().matrix();
    row.operator_error = spectral_norm(SymmetricMatrix::midpoint(diff));
    row.relative_error = row.operator_error / spectral_norm(model.theta());
    row.frobenius_error = frobenius_norm(diff);
    row.max_error = max_norm(diff);
    row.psd_operator_error =
        spectral_norm(SymmetricMatrix::midpoint(Matrix(est.theta_psd.matrix() - model.theta().matrix())));
    const double threshold = config.support_threshold.value_or(default_support_threshold(model.theta()));
    const auto support = support_metrics(est.theta_hat, model.theta(), threshold);
    row.precision = support.precision;
    row.recall = support.recall;
    row.f1 = support.f1;
    const double tr_b = model.b().trace();
    row.trace_b_error = tr_b > 0.0 ? std::abs(est.gram.tr_b_hat - tr_b) / tr_b : std::abs(est.gram.tr_b_hat);
    row.repair_triggered = est.repair_triggered;
    if (config.observer) config.observer(row, est);
  } catch (const Error& e) {
    row.error = e.what();
  }
  if (config.record_timing) {
    row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return row;
}

/// One row per (n, rep), sorted by n then rep. Deterministic in config.seed; a failing cell
/// records its error message and the run continues.
/// Models are cached by n in `cache` when given, so repeated sweeps (other laws, other seeds)
/// skip the eigendecompositions of B.
using ModelCache = std::map<Index, CovarianceModel>;

inline std::vector<MetricsRow> run_experiment(const ExperimentConfig& config, ModelCache* cache = nullptr) {
  config.validate();
  std::vector<Index> grid = config.n_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  std::vector<MetricsRow> rows;
  for (Index n : grid) {
    ModelCache local;
    ModelCache& models = cache ? *cache : local;
    auto it = models.find(n);
    if (it == models.end()) it = models.emplace(n, build_experiment_model(config, n)).first;
    const CovarianceModel& model = it->second;
    auto cell_rows = parallel_map(
        static_cast<std::size_t>(config.reps),
        [&](std::size_t rep) { return run_cell(config, model, static_cast<int>(rep)); }, config.threads);
    for (auto& r : cell_rows) rows.push_back(std::move(r));
  }
  return rows;
}

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
  std::vector<std::pair<Index, double>> points;  ///< (n, mean operator error)
};

/// Least squares of log(mean operator_error) on log(n); rows carrying an error are skipped.
inline RateFit fit_rate(const std::vector<MetricsRow>& rows) {
  std::map<Index, std::pair<double, int>> groups;
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    auto& g = groups[r.n];
    g.first += r.operator_error;
    g.second += 1;
  }
  if (groups.size() < 3) throw ValidationError("fit_rate needs at least 3 distinct n values");
  RateFit fit;
  std::vector<double> xs, ys;
  for (const auto& [n, g] : groups) {
    const double mean = g.first / g.second;
    if (!(mean > 0.0)) throw ValidationError("fit_rate needs positive mean errors");
    fit.points.emplace_back(n, mean);
    xs.push_back(std::log(static_cast<double>(n)));
    ys.push_back(std::log(mean));
  }
  const auto k = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - fit.intercept - fit.slope * xs[i];
    ssr += r * r;
  }
  fit.stderr_slope = std::sqrt(ssr / (k - 2.0) / sxx);
  return fit;
}

inline io::json rate_to_json(const RateFit& fit) {
  io::json pts = io::json::array();
  for (const auto& [n, e] : fit.points) pts.push_back({{"n", n}, {"mean_operator_error", e}});
  return {{"slope", fit.slope}, {"intercept", fit.intercept}, {"stderr", fit.stderr_slope}, {"points", pts}};
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

/// Reads a sweep config. Every key is optional except n_grid; the seed may be overridden by the CLI.
inline ExperimentConfig experiment_config_from_json(const io::json& j) {
  ExperimentConfig c;
  if (j.contains("signal")) {
    const auto& s = j.at("signal");
    c.signal.kind = s.value("kind", c.signal.kind);
    c.signal.m = s.value("m", c.signal.m);
    c.signal.rho = s.value("rho", c.signal.rho);
    c.signal.d = s.value("d", c.signal.d);
    c.signal.strength = s.value("strength", c.signal.strength);
    c.signal.seed = s.value("seed", c.signal.seed);
    c.signal.path = s.value("path", c.signal.path);
  }
  if (j.contains("noise")) {
    const auto& s = j.at("noise");
    c.noise.kind = s.value("kind", c.noise.kind);
    c.noise.scale = s.value("scale", c.noise.scale);
    c.noise.rho = s.value("rho", c.noise.rho);
    c.noise.d = s.value("d", c.noise.d);
    c.noise.strength = s.value("strength", c.noise.strength);
    c.noise.cap_to_signal = s.value("cap_to_signal", c.noise.cap_to_signal);
  }
  if (!j.contains("n_grid")) throw ValidationError("sweep config needs n_grid");
  c.n_grid = j.at("n_grid").get<std::vector<Index>>();
  c.reps = j.value("reps", c.reps);
  if (j.contains("lambda")) {
    const auto& l = j.at("lambda");
    auto& rule = c.estimator.rule;
    rule.mode = parse_lambda_mode(l.value("mode", std::string("plugin")));
    rule.c0 = l.value("C0", rule.c0);
    rule.k = l.value("K", rule.k);
    if (l.contains("value")) rule.values = {l.at("value").get<double>()};
    if (l.contains("values")) rule.values = l.at("values").get<std::vector<double>>();
  }
  if (j.contains("b1") && !j.at("b1").is_null()) c.estimator.b1 = j.at("b1").get<double>();
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    if (s.contains("eta") && !s.at("eta").is_null()) c.estimator.solver.eta = s.at("eta").get<double>();
    c.estimator.solver.max_iters = s.value("max_iters", c.estimator.solver.max_iters);
    c.estimator.solver.tol = s.value("tol", c.estimator.solver.tol);
  }
  c.estimator.clamp_diagonal = j.value("clamp_diagonal", false);
  c.spec.law = parse_entry_law(j.value("law", std::string("gaussian")));
  c.spec.psi2_bound = j.value("K_law", c.spec.psi2_bound);
  c.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("support_threshold") && !j.at("support_threshold").is_null())
    c.support_threshold = j.at("support_threshold").get<double>();
  c.record_timing = j.value("record_timing", false);
  c.threads = j.value("threads", 1u);
  c.output_dir = j.value("output_dir", std::string());
  c.validate();
  return c;
}

}  // namespace kronsum
