// kronsum command line: simulate, estimate, estimate-phi, replicates, sweep, rate.
//
// Exit status: 0 success, 1 invalid input, 2 numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "kronsum/kronsum.hpp"

namespace fs = std::filesystem;
using namespace kronsum;

namespace {

struct ModelFlags {
  std::string model_path;
  SignalSpec signal;
  NoiseSpec noise;
  Index n = 100;

  void add(CLI::App* app) {
    app->add_option("--model", model_path, "model JSON with A and B (overrides the generator flags)");
    app->add_option("--signal", signal.kind, "identity | ar1 | banded | random")->capture_default_str();
    app->add_option("--m", signal.m, "columns (dimension of A)")->capture_default_str();
    app->add_option("--signal-rho", signal.rho, "AR(1) correlation of A")->capture_default_str();
    app->add_option("--d", signal.d, "band width of the precision generator")->capture_default_str();
    app->add_option("--strength", signal.strength, "off-diagonal strength of the banded precision")->capture_default_str();
    app->add_option("--signal-seed", signal.seed, "seed of the random SPD generator")->capture_default_str();
    app->add_option("--noise", noise.kind, "zero | identity | ar1 | banded")->capture_default_str();
    app->add_option("--noise-scale", noise.scale, "multiplier on B")->capture_default_str();
    app->add_option("--noise-rho", noise.rho, "AR(1) correlation of B")->capture_default_str();
    app->add_option("--noise-d", noise.d)->capture_default_str();
    app->add_option("--noise-strength", noise.strength)->capture_default_str();
    app->add_flag("!--no-cap", noise.cap_to_signal, "do not shrink B to ||B|| <= lambda_max(A)");
    app->add_option("--n", n, "rows (dimension of B)")->capture_default_str();
  }

  CovarianceModel build() const {
    if (!model_path.empty()) return model_from_json(io::load_json(model_path), false);
    ExperimentConfig c;
    c.signal = signal;
    c.noise = noise;
    return build_experiment_model(c, n);
  }
};

struct EstimatorFlags {
  std::string mode = "plugin";
  std::vector<double> lambda;
  double c0 = 1.0, k = 2.0;
  std::optional<double> b1, eta, psd_epsilon;
  int max_iters = 10000;
  double tol = 1e-8;
  bool clamp = false;
  unsigned threads = 0;
  std::string model_path;

  void add(CLI::App* app) {
    app->add_option("--lambda-mode", mode, "plugin | oracle | fixed | grid")->capture_default_str();
    app->add_option("--lambda", lambda, "fixed lambda: one value, or one per column");
    app->add_option("--C0", c0)->capture_default_str();
    app->add_option("--K", k, "subgaussian constant in the lambda template")->capture_default_str();
    app->add_option("--b1", b1, "l1-ball radius (default: oracle radius under the oracle rule, ridge heuristic otherwise)");
    app->add_option("--eta", eta, "step-size parameter (default: spectral norm of the Gram block)");
    app->add_option("--max-iters", max_iters)->capture_default_str();
    app->add_option("--tol", tol)->capture_default_str();
    app->add_option("--psd-epsilon", psd_epsilon, "eigenvalue floor for the PSD repair");
    app->add_flag("--clamp-diagonal", clamp, "clamp degenerate residual variances instead of failing");
    app->add_option("--threads", threads, "0 = hardware concurrency")->capture_default_str();
    app->add_option("--truth", model_path, "true model JSON, required by the oracle rule");
  }

  EstimatorOptions options() const {
    EstimatorOptions o;
    o.rule.mode = parse_lambda_mode(mode);
    o.rule.c0 = c0;
    o.rule.k = k;
    o.rule.values = lambda;
    if (o.rule.mode == LambdaMode::fixed && lambda.empty()) throw ValidationError("--lambda-mode fixed needs --lambda");
    o.b1 = b1;
    o.solver.eta = eta;
    o.solver.max_iters = max_iters;
    o.solver.tol = tol;
    o.psd_epsilon = psd_epsilon;
    o.clamp_diagonal = clamp;
    o.threads = threads;
    return o;
  }

  std::optional<CovarianceModel> truth() const {
    if (model_path.empty()) {
      if (parse_lambda_mode(mode) == LambdaMode::oracle) throw ValidationError("the oracle lambda rule needs --truth");
      return std::nullopt;
    }
    return model_from_json(io::load_json(model_path), false);
  }
};

Matrix load_x(const std::string& input) {
  const fs::path p(input);
  return fs::is_directory(p) ? io::load_matrix_csv(p / "X.csv") : io::load_matrix_csv(p);
}

void print_summary(const PrecisionEstimate& est) {
  std::cout << "tr_B_hat " << io::format_double(est.gram.tr_b_hat) << "\nrepair_triggered "
            << (est.repair_triggered ? "true" : "false") << "\nlambda_min " << io::format_double(est.lambda_min_hat)
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Precision matrix estimation under the Kronecker-sum covariance model"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "draw a sample (or replicate set) from a model");
  ModelFlags sim_model;
  sim_model.add(sim);
  std::uint64_t sim_seed = 0;
  std::string sim_out, sim_law = "gaussian";
  Index sim_reps = 0;
  bool sim_independent = false, sim_no_parts = false;
  sim->add_option("--seed", sim_seed)->required();
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--law", sim_law, "gaussian | rademacher | uniform")->capture_default_str();
  sim->add_option("--replicates", sim_reps, "draw N replicates instead of one sample");
  sim->add_flag("--independent-signal", sim_independent, "replicates draw their own signal (case 2)");
  sim->add_flag("--no-parts", sim_no_parts, "skip X0.csv and W.csv");

  // estimate / estimate-phi
  auto* est = app.add_subcommand("estimate", "estimate Theta = A^-1 from a sample");
  auto* phi = app.add_subcommand("estimate-phi", "estimate Phi = B^-1 from a sample (transposed problem)");
  EstimatorFlags est_flags, phi_flags;
  std::string est_in, est_out, phi_in, phi_out;
  std::optional<double> est_tr_a, est_tau;
  est_flags.add(est);
  est->add_option("--input", est_in, "sample directory or X.csv")->required();
  est->add_option("--out", est_out, "output directory")->required();
  est->add_option("--tr-a", est_tr_a, "tr(A) (default m)");
  est->add_option("--tau", est_tau, "known tau_B, skipping the trace estimate");
  phi_flags.add(phi);
  phi->add_option("--input", phi_in, "sample directory or X.csv")->required();
  phi->add_option("--out", phi_out, "output directory")->required();

  // replicates
  auto* rep = app.add_subcommand("replicates", "Phi (and Theta for shared signal) from replicate matrices");
  std::string rep_manifest, rep_out;
  std::optional<double> rep_rho;
  double rep_rho_scale = 2.0;
  bool rep_skip_theta = false;
  EstimatorFlags rep_flags;
  rep_flags.add(rep);
  rep->add_option("--manifest", rep_manifest, "manifest.json written by simulate --replicates")->required();
  rep->add_option("--out", rep_out, "output directory")->required();
  rep->add_option("--rho", rep_rho, "graphical lasso penalty");
  rep->add_option("--rho-scale", rep_rho_scale, "default penalty multiplier")->capture_default_str();
  rep->add_flag("--no-theta", rep_skip_theta, "skip the mean-response Theta estimate");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Monte Carlo sweep over n, written as a metrics CSV");
  std::string sweep_config, sweep_out, sweep_law;
  std::uint64_t sweep_seed = 0;
  std::optional<int> sweep_reps;
  std::optional<unsigned> sweep_threads;
  bool sweep_timing = false;
  sweep->add_option("--config", sweep_config, "experiment JSON")->required();
  sweep->add_option("--seed", sweep_seed)->required();
  sweep->add_option("--out", sweep_out, "metrics CSV path (default: <output_dir>/metrics.csv, or stdout)");
  sweep->add_option("--reps", sweep_reps);
  sweep->add_option("--threads", sweep_threads);
  sweep->add_option("--law", sweep_law, "override the entry law");
  sweep->add_flag("--timing", sweep_timing, "record wall_time (output is then not reproducible)");

  // rate
  auto* rate = app.add_subcommand("rate", "log-log slope of mean operator error against n");
  std::string rate_in, rate_out;
  rate->add_option("--metrics", rate_in, "metrics CSV")->required();
  rate->add_option("--out", rate_out, "JSON path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*sim) {
      const auto model = sim_model.build();
      const SubgaussianSpec spec{parse_entry_law(sim_law)};
      fs::create_directories(sim_out);
      io::save_json(fs::path(sim_out) / "model.json", model_to_json(model));
      if (sim_reps > 0) {
        save_replicates(sim_out, sample_replicates(model, sim_reps, !sim_independent, spec, sim_seed));
      } else {
        save_sample(sim_out, sample(model, spec, sim_seed, !sim_no_parts));
      }
    } else if (*est) {
      const Matrix x = load_x(est_in);
      auto opts = est_flags.options();
      const auto truth = est_flags.truth();
      if (truth) opts.truth = &*truth;
      const auto result = est_tau ? estimate_theta_given_tau(x, *est_tau, opts)
                                  : estimate_theta(x, est_tr_a.value_or(static_cast<double>(x.cols())), opts);
      save_estimate(est_out, result);
      print_summary(result);
    } else if (*phi) {
      const Matrix x = load_x(phi_in);
      auto opts = phi_flags.options();
      const auto truth = phi_flags.truth();
      if (truth) opts.truth = &*truth;
      const auto result = estimate_phi(x, opts);
      save_estimate(phi_out, result, "phi");
      print_summary(result);
    } else if (*rep) {
      const auto reps = load_replicates(rep_manifest);
      GlassoConfig gc;
      gc.rho = rep_rho;
      gc.rho_scale = rep_rho_scale;
      const auto phi_est = estimate_phi_replicates(reps, gc);
      const fs::path out(rep_out);
      fs::create_directories(out);
      io::save_json(out / "phi_hat.json", io::matrix_to_json(phi_est.glasso.phi));
      io::save_json(out / "b_tilde.json", io::matrix_to_json(phi_est.b_tilde));
      io::save_json(out / "glasso.json", {{"rho", phi_est.glasso.rho},
                                          {"sweeps", phi_est.glasso.sweeps},
                                          {"kkt_residual", phi_est.glasso.kkt_residual},
                                          {"dropped_last", phi_est.dropped_last}});
      std::cout << "kkt_residual " << io::format_double(phi_est.glasso.kkt_residual) << '\n';
      if (reps.shared_signal && !rep_skip_theta) {
        auto opts = rep_flags.options();
        const auto truth = rep_flags.truth();
        if (truth) opts.truth = &*truth;
        const auto theta = estimate_theta_replicates(reps, phi_est.b_tilde, opts);
        save_estimate(out, theta);
        print_summary(theta);
      }
    } else if (*sweep) {
      auto config = experiment_config_from_json(io::load_json(sweep_config));
      config.seed = sweep_seed;
      if (sweep_reps) config.reps = *sweep_reps;
      if (sweep_threads) config.threads = *sweep_threads;
      if (!sweep_law.empty()) config.spec.law = parse_entry_law(sweep_law);
      config.record_timing = config.record_timing || sweep_timing;
      config.validate();
      const auto rows = run_experiment(config);
      std::string path = sweep_out;
      if (path.empty() && !config.output_dir.empty()) path = (fs::path(config.output_dir) / "metrics.csv").string();
      if (path.empty()) {
        write_metrics_csv(std::cout, rows);
      } else {
        if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
        std::ofstream os(path);
        if (!os) throw ValidationError("cannot write " + path);
        write_metrics_csv(os, rows);
      }
    } else if (*rate) {
      std::ifstream is(rate_in);
      if (!is) throw ValidationError("cannot open " + rate_in);
      const auto j = rate_to_json(fit_rate(read_metrics_csv(is)));
      if (rate_out.empty()) {
        std::cout << j.dump(2) << '\n';
      } else {
        io::save_json(rate_out, j);
      }
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
