#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kdscore/csv_io.hpp"
#include "kdscore/errors.hpp"
#include "kdscore/inference.hpp"
#include "kdscore/nuisance.hpp"
#include "kdscore/simulation.hpp"
#include "kdscore/solver.hpp"
#include "kdscore/stats.hpp"

namespace {

using namespace kdscore;

// All diagnostics (including runtimes) go to stderr; files and stdout
// carry only seed-determined content so repeated runs are byte-identical.

struct CommonOptions {
  std::vector<double> loss_knots{1.0};
  double loss_base_slope = -1.0;
  std::vector<double> loss_jumps{1.0};
  std::vector<double> loss_anchor;  // empty = (last knot, 0)

  double h_lo = 0.0;  // 0 = automatic rule
  double h_gb = 0.0;

  int k_folds = 2;
  double lambda = 0.0;  // 0 = cross-validate
  int lambda_grid_size = 50;
  double lambda_min_ratio = 0.01;
  int lambda_cv_folds = 5;
  double mu = 0.0;  // 0 = cross-validate
  int mu_grid_size = 50;
  double mu_min_ratio = 0.01;
  int mu_cv_folds = 5;
  bool decorrelation_unweighted = false;
  double info_floor = 1e-8;

  std::uint64_t seed = 1;
  int jobs = 1;
};

void add_loss_options(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--loss-knots", opt.loss_knots,
                  "Surrogate loss knot locations (default: hinge at 1)");
  cmd->add_option("--loss-base-slope", opt.loss_base_slope,
                  "Slope left of the first knot");
  cmd->add_option("--loss-jumps", opt.loss_jumps,
                  "Positive slope jumps at the knots");
  cmd->add_option("--loss-anchor", opt.loss_anchor,
                  "Anchor point t,value (default: last knot, 0)")
      ->expected(2);
}

void add_solver_options(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--h-lo", opt.h_lo, "Local bandwidth (0 = 1/sqrt(n log n))");
  cmd->add_option("--h-gb", opt.h_gb,
                  "Curvature bandwidth (0 = (log p / n)^(1/5))");
  cmd->add_option("--lambda", opt.lambda,
                  "Fixed coefficient penalty (0 = cross-validate)");
  cmd->add_option("--lambda-grid-size", opt.lambda_grid_size,
                  "Penalty grid size");
  cmd->add_option("--lambda-min-ratio", opt.lambda_min_ratio,
                  "Smallest grid value relative to lambda_max");
  cmd->add_option("--lambda-cv-folds", opt.lambda_cv_folds,
                  "Folds for penalty cross-validation");
  cmd->add_option("--seed", opt.seed, "Random seed (all randomness)")
      ->envname("KDSCORE_SEED");
  cmd->add_option("--jobs", opt.jobs, "Worker threads (content-invariant)")
      ->check(CLI::PositiveNumber);
}

void add_inference_options(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--k-folds", opt.k_folds, "Cross-fitting folds K");
  cmd->add_option("--mu", opt.mu,
                  "Fixed decorrelation penalty (0 = cross-validate)");
  cmd->add_option("--mu-grid-size", opt.mu_grid_size, "Decorrelation grid size");
  cmd->add_option("--mu-min-ratio", opt.mu_min_ratio,
                  "Smallest grid value relative to mu_max");
  cmd->add_option("--mu-cv-folds", opt.mu_cv_folds,
                  "Folds for decorrelation cross-validation");
  cmd->add_flag("--decorrelation-unweighted", opt.decorrelation_unweighted,
                "Drop curvature weights in the decorrelation design");
  cmd->add_option("--info-floor", opt.info_floor,
                  "Smallest information estimate accepted for intervals");
}

PiecewiseLinearLoss build_loss(const CommonOptions& opt) {
  if (!opt.loss_anchor.empty()) {
    return PiecewiseLinearLoss(opt.loss_knots, opt.loss_base_slope,
                               opt.loss_jumps,
                               {opt.loss_anchor[0], opt.loss_anchor[1]});
  }
  return PiecewiseLinearLoss(opt.loss_knots, opt.loss_base_slope,
                             opt.loss_jumps);
}

InferenceConfig build_inference_config(const CommonOptions& opt) {
  InferenceConfig cfg;
  cfg.k_folds = opt.k_folds;
  cfg.bandwidths = (opt.h_lo > 0.0 || opt.h_gb > 0.0)
                       ? BandwidthConfig::fixed(opt.h_lo, opt.h_gb)
                       : BandwidthConfig::auto_rule();
  cfg.lambda_grid_size = opt.lambda_grid_size;
  cfg.lambda_min_ratio = opt.lambda_min_ratio;
  cfg.lambda_cv_folds = opt.lambda_cv_folds;
  if (opt.lambda > 0.0) cfg.fixed_lambda = opt.lambda;
  cfg.mu_grid_size = opt.mu_grid_size;
  cfg.mu_min_ratio = opt.mu_min_ratio;
  cfg.mu_cv_folds = opt.mu_cv_folds;
  if (opt.mu > 0.0) cfg.fixed_mu = opt.mu;
  cfg.decorrelation.unweighted = opt.decorrelation_unweighted;
  cfg.info_floor = opt.info_floor;
  cfg.seed = opt.seed;
  return cfg;
}

std::vector<Eigen::Index> resolve_targets(const std::vector<long long>& raw,
                                          Eigen::Index p) {
  std::vector<Eigen::Index> targets;
  if (raw.empty()) {
    for (Eigen::Index l = 0; l < std::min<Eigen::Index>(8, p); ++l) {
      targets.push_back(l);
    }
    return targets;
  }
  for (long long t : raw) {
    if (t < 1 || t > p) {
      throw InvalidArgument("--targets: coordinate " + std::to_string(t) +
                            " outside 1.." + std::to_string(p));
    }
    targets.push_back(static_cast<Eigen::Index>(t - 1));
  }
  return targets;
}

void write_file(const std::string& path,
                const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument(path + ": cannot open for writing");
  body(out);
  if (!out) throw InvalidArgument(path + ": write failed");
}

// ---------------------------------------------------------------- fit --

struct FitArgs {
  CommonOptions common;
  std::string input;
  std::string output;
};

void run_fit(const FitArgs& args) {
  NamedDataset in = read_dataset_csv_file(args.input);
  PiecewiseLinearLoss loss = build_loss(args.common);
  InferenceConfig cfg = build_inference_config(args.common);

  double lambda;
  if (cfg.fixed_lambda) {
    lambda = *cfg.fixed_lambda;
  } else {
    std::vector<double> grid = default_lambda_grid(
        in.data, loss, cfg.lambda_grid_size, cfg.lambda_min_ratio);
    lambda = cross_validate_lambda(in.data, loss, grid, cfg.lambda_cv_folds,
                                   mix_seed(cfg.seed, 0xF17), cfg.solver)
                 .value;
  }
  FitOutput out;
  out.names = in.names;
  out.fit = fit_penalized_erm(in.data, loss, lambda, cfg.solver);
  write_file(args.output, [&](std::ostream& os) { write_fit_csv(os, out); });
}

// --------------------------------------------------------------- test --

struct TestArgs {
  CommonOptions common;
  std::string input;
  std::string output;
  std::vector<long long> targets;
  double alpha = 0.05;
  double bh_q = 0.0;
  std::string application = "plain";
  std::string method = "score";
  int screen_k = 0;
  double clip_low = 0.05;
  double clip_high = 0.95;
  double overlap_floor = 0.01;
  double weight_cap = 0.0;
  long long min_half = 10;
};

void run_test(const TestArgs& args) {
  NamedDataset in = read_dataset_csv_file(args.input);
  PiecewiseLinearLoss loss = build_loss(args.common);
  InferenceConfig cfg = build_inference_config(args.common);
  cfg.alpha = args.alpha;
  std::vector<Eigen::Index> targets =
      resolve_targets(args.targets, in.data.p());

  if (args.method == "baseline") {
    std::vector<BaselineRecord> records =
        baseline_adhoc(in.data, loss, cfg, targets, args.alpha);
    BaselineOutput out;
    out.alpha = args.alpha;
    out.records = std::move(records);
    for (const BaselineRecord& r : out.records) {
      out.names.push_back(in.names[static_cast<std::size_t>(r.coordinate)]);
    }
    write_file(args.output,
               [&](std::ostream& os) { write_baseline_csv(os, out); });
    return;
  }

  std::vector<CoordinateInference> records;
  if (args.application == "plain") {
    records = test_all_coordinates(in.data, loss, cfg, targets, args.alpha,
                                   nullptr, args.common.jobs);
  } else {
    Algorithm2Config cfg2;
    cfg2.inference = cfg;
    cfg2.screen_k = args.screen_k;
    cfg2.clip_low = args.clip_low;
    cfg2.clip_high = args.clip_high;
    cfg2.overlap_floor = args.overlap_floor;
    cfg2.weight_cap = args.weight_cap;
    cfg2.min_half = static_cast<Eigen::Index>(args.min_half);
    Application app = args.application == "missing-labels"
                          ? Application::MissingLabels
                          : Application::Itr;
    records = run_algorithm2(in.data, app, loss, cfg2, targets, args.alpha,
                             nullptr, args.common.jobs);
  }

  TestOutput out;
  out.records = std::move(records);
  for (const CoordinateInference& r : out.records) {
    out.names.push_back(in.names[static_cast<std::size_t>(r.coordinate)]);
  }
  if (args.bh_q > 0.0) {
    out.bh_q = args.bh_q;
    std::vector<double> ps;
    for (const auto& r : out.records) ps.push_back(r.p_value);
    std::vector<std::size_t> rejected = bh_fdr(ps, args.bh_q);
    out.reject_bh.assign(out.records.size(), 0);
    for (std::size_t idx : rejected) out.reject_bh[idx] = 1;
  }
  write_file(args.output, [&](std::ostream& os) { write_test_csv(os, out); });
}

// ----------------------------------------------------------- simulate --

struct SimulateArgs {
  CommonOptions common;
  std::string scenario = "I";
  std::string preset;
  long long n = 0;
  long long p = 0;
  double xi = -1.0;
  long long replicates = -1;  // -1 = preset or struct default
  std::vector<long long> targets;
  double alpha = 0.05;
  std::string output;
  std::string decisions;
  long long truth_replicates = 0;
  long long truth_n = 2500;
  double truth_zero_tol = 0.01;
  int screen_k = 0;
  double overlap_floor = 0.01;
  double weight_cap = 0.0;
  long long min_half = 10;
};

ScenarioConfig build_scenario(const SimulateArgs& args) {
  ScenarioConfig sc;
  if (args.scenario == "I" || args.scenario == "1") sc.scenario = 1;
  else if (args.scenario == "II" || args.scenario == "2") sc.scenario = 2;
  else throw InvalidArgument("--scenario must be I or II");

  if (!args.preset.empty()) {
    if (args.preset == "desk") {
      if (sc.scenario == 1) {
        sc.n = 500; sc.p = 200; sc.xi = 0.4; sc.replicates = 200;
      } else {
        sc.n = 400; sc.p = 50; sc.xi = 0.8; sc.replicates = 200;
      }
    } else if (args.preset == "paper") {
      if (sc.scenario == 1) {
        sc.n = 1000; sc.p = 800; sc.xi = 0.4; sc.replicates = 500;
      } else {
        sc.n = 800; sc.p = 400; sc.xi = 0.8; sc.replicates = 500;
      }
    } else {
      throw InvalidArgument("--preset must be desk or paper");
    }
  }
  if (args.n > 0) sc.n = static_cast<Eigen::Index>(args.n);
  if (args.p > 0) sc.p = static_cast<Eigen::Index>(args.p);
  if (args.xi >= 0.0) sc.xi = args.xi;
  if (args.replicates >= 0) {
    if (args.replicates < 1) {
      throw InvalidArgument("--replicates must be at least 1");
    }
    sc.replicates = static_cast<int>(args.replicates);
  }
  if (sc.p < 8) {
    throw InvalidArgument("simulate: p must be at least 8");
  }
  sc.seed = args.common.seed;
  return sc;
}

void run_simulate(const SimulateArgs& args) {
  ScenarioConfig sc = build_scenario(args);
  PiecewiseLinearLoss loss = build_loss(args.common);
  Algorithm2Config cfg;
  cfg.inference = build_inference_config(args.common);
  cfg.inference.alpha = args.alpha;
  cfg.screen_k = args.screen_k;
  cfg.overlap_floor = args.overlap_floor;
  cfg.weight_cap = args.weight_cap;
  cfg.min_half = static_cast<Eigen::Index>(args.min_half);

  std::vector<Eigen::Index> targets = resolve_targets(args.targets, sc.p);

  std::optional<Eigen::VectorXd> truth;
  if (args.truth_replicates > 0) {
    std::fprintf(stderr, "computing truth: %lld replicates at n=%lld\n",
                 args.truth_replicates, args.truth_n);
    truth = compute_truth(sc, loss, cfg,
                          static_cast<Eigen::Index>(args.truth_n),
                          static_cast<int>(args.truth_replicates),
                          args.truth_zero_tol, args.common.jobs);
  }

  MetricsReport report =
      run_experiment(sc, loss, cfg, targets, args.alpha,
                     truth ? &*truth : nullptr, args.common.jobs);

  write_file(args.output,
             [&](std::ostream& os) { write_metrics_csv(os, report); });
  if (!args.decisions.empty()) {
    write_file(args.decisions,
               [&](std::ostream& os) { write_decisions_csv(os, report); });
  }

  std::printf("scenario %d: n=%lld p=%lld xi=%s replicates=%d\n", sc.scenario,
              static_cast<long long>(sc.n), static_cast<long long>(sc.p),
              format_double(sc.xi).c_str(), sc.replicates);
  std::printf("completed=%d skipped=%d\n", report.completed, report.skipped);
  for (std::size_t t = 0; t < report.targets.size(); ++t) {
    std::printf("target %lld: reject=%s",
                static_cast<long long>(report.targets[t] + 1),
                format_double(report.rejection_rate[t]).c_str());
    if (report.truth) {
      std::printf(" truth=%s coverage=%s",
                  format_double((*report.truth)(report.targets[t])).c_str(),
                  format_double(report.coverage[t]).c_str());
    }
    std::printf(" ci_length=%s\n", format_double(report.avg_ci_length[t]).c_str());
  }
  std::fprintf(stderr, "experiment runtime: %.1fs\n", report.runtime_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Coordinate hypothesis tests and confidence intervals for "
      "L1-penalised linear decision rules"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Structured-text config file");
  app.allow_config_extras(false);

  FitArgs fit_args;
  CLI::App* fit = app.add_subcommand("fit", "Penalised surrogate-risk fit");
  fit->add_option("--input", fit_args.input, "Input CSV")->required();
  fit->add_option("--output", fit_args.output, "Coefficients CSV")->required();
  add_loss_options(fit, fit_args.common);
  add_solver_options(fit, fit_args.common);

  TestArgs test_args;
  CLI::App* test =
      app.add_subcommand("test", "Coordinate tests and confidence intervals");
  test->add_option("--input", test_args.input, "Input CSV")->required();
  test->add_option("--output", test_args.output, "Results CSV")->required();
  test->add_option("--targets", test_args.targets,
                   "1-based covariate coordinates (default: 1..min(8,p))")
      ->delimiter(',');
  test->add_option("--alpha", test_args.alpha, "Test level / CI miscoverage");
  test->add_option("--bh", test_args.bh_q,
                   "Append a Benjamini-Hochberg rejection column at level q");
  test->add_option("--application", test_args.application,
                   "plain, missing-labels, or itr")
      ->check(CLI::IsMember({"plain", "missing-labels", "itr"}));
  test->add_option("--method", test_args.method,
                   "score (default) or baseline (refit + sandwich)")
      ->check(CLI::IsMember({"score", "baseline"}));
  test->add_option("--screen-k", test_args.screen_k,
                   "Covariates kept by nuisance screening (0 = min(20,p))");
  test->add_option("--clip-low", test_args.clip_low, "Propensity clip floor");
  test->add_option("--clip-high", test_args.clip_high,
                   "Propensity clip ceiling");
  test->add_option("--overlap-floor", test_args.overlap_floor,
                   "Overlap constant for weight construction");
  test->add_option("--weight-cap", test_args.weight_cap,
                   "Reject weights beyond this magnitude (0 = 2/floor)");
  test->add_option("--min-half", test_args.min_half,
                   "Smallest admissible cross-fitting half");
  add_loss_options(test, test_args.common);
  add_solver_options(test, test_args.common);
  add_inference_options(test, test_args.common);

  SimulateArgs sim_args;
  CLI::App* sim =
      app.add_subcommand("simulate", "Replicated synthetic experiments");
  sim->add_option("--scenario", sim_args.scenario, "I or II")->required();
  sim->add_option("--preset", sim_args.preset, "desk or paper");
  sim->add_option("--n", sim_args.n, "Sample size per replicate");
  sim->add_option("--p", sim_args.p, "Covariate dimension");
  sim->add_option("--xi", sim_args.xi, "Separation scale");
  sim->add_option("--replicates", sim_args.replicates, "Replicate count");
  sim->add_option("--targets", sim_args.targets,
                  "1-based coordinates to test (default 1..8)")
      ->delimiter(',');
  sim->add_option("--alpha", sim_args.alpha, "Test level");
  sim->add_option("--output", sim_args.output, "Metrics CSV")->required();
  sim->add_option("--decisions", sim_args.decisions,
                  "Optional per-replicate decision table CSV");
  sim->add_option("--truth-replicates", sim_args.truth_replicates,
                  "Large-sample fits averaged into the truth (0 = skip)");
  sim->add_option("--truth-n", sim_args.truth_n, "Sample size for truth fits");
  sim->add_option("--truth-zero-tol", sim_args.truth_zero_tol,
                  "Truth coordinates below this magnitude snap to zero");
  sim->add_option("--screen-k", sim_args.screen_k,
                  "Covariates kept by nuisance screening (0 = min(20,p))");
  sim->add_option("--overlap-floor", sim_args.overlap_floor,
                  "Overlap constant for weight construction");
  sim->add_option("--weight-cap", sim_args.weight_cap,
                  "Reject weights beyond this magnitude (0 = 2/floor)");
  sim->add_option("--min-half", sim_args.min_half,
                  "Smallest admissible cross-fitting half");
  add_loss_options(sim, sim_args.common);
  add_solver_options(sim, sim_args.common);
  add_inference_options(sim, sim_args.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  auto t0 = std::chrono::steady_clock::now();
  try {
    if (fit->parsed()) run_fit(fit_args);
    if (test->parsed()) run_test(test_args);
    if (sim->parsed()) run_simulate(sim_args);
  } catch (const DegeneracyError& e) {
    std::fprintf(stderr, "degeneracy: %s\n", e.what());
    return 3;
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  auto t1 = std::chrono::steady_clock::now();
  std::fprintf(stderr, "runtime: %.2fs\n",
               std::chrono::duration<double>(t1 - t0).count());
  return 0;
}
