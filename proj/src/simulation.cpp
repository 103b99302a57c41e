#include "kdscore/simulation.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "kdscore/errors.hpp"
#include "kdscore/parallel.hpp"
#include "kdscore/solver.hpp"
#include "kdscore/stats.hpp"

namespace kdscore {

namespace {

constexpr double kGroupOneProb = 0.4;

Eigen::VectorXd group_mean(Eigen::Index p, bool group_one, double xi) {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(p);
  if (group_one) {
    mu(0) = -1.0;
    mu(1) = 1.0;
    mu(2) = -0.5;
    mu(3) = 0.5;
  } else {
    mu(0) = 1.0;
    mu(1) = -1.0;
    mu(2) = -1.0;
    mu(3) = -1.0;
  }
  return mu * xi;
}

void check_design_args(Eigen::Index n, Eigen::Index p, Eigen::Index min_p) {
  if (n < 2) throw InvalidArgument("simulate: need at least two samples");
  if (p < min_p) {
    throw InvalidArgument("simulate: dimension too small for the design");
  }
}

// Shared covariate mixture: draws the group flag and the Gaussian row.
// Group one shrinks the first coordinate's variance to 0.9.
bool draw_covariates(RngStream& rng, double xi, Eigen::Index p,
                     Eigen::RowVectorXd& row) {
  bool group_one = rng.uniform01() < kGroupOneProb;
  Eigen::VectorXd mu = group_mean(p, group_one, xi);
  const double sd0 = group_one ? std::sqrt(0.9) : 1.0;
  for (Eigen::Index j = 0; j < p; ++j) {
    double sd = j == 0 ? sd0 : 1.0;
    row(j) = mu(j) + sd * rng.normal();
  }
  return group_one;
}

}  // namespace

Dataset simulate_scenario1(Eigen::Index n, Eigen::Index p, double xi,
                           std::uint64_t seed) {
  check_design_args(n, p, 4);
  RngStream rng(seed, 0x5CE1);
  Dataset data;
  data.X.resize(n, p);
  data.A.resize(n);
  Eigen::RowVectorXd row(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    bool group_one = draw_covariates(rng, xi, p, row);
    data.X.row(i) = row;
    data.A(i) = group_one ? 1.0 : -1.0;
  }
  data.validate();
  return data;
}

Dataset simulate_scenario2(Eigen::Index n, Eigen::Index p, double xi,
                           std::uint64_t seed) {
  check_design_args(n, p, 4);
  RngStream rng(seed, 0x5CE2);
  Dataset data;
  data.X.resize(n, p);
  data.A.resize(n);
  data.Y = Eigen::VectorXd(n);
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(p);
  gamma(0) = -0.4;
  gamma(1) = -0.4;
  gamma(2) = 0.4;
  gamma(3) = -0.4;
  Eigen::RowVectorXd row(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    bool group_one = draw_covariates(rng, xi, p, row);
    data.X.row(i) = row;
    double x1 = data.X(i, 0);
    double x2 = data.X(i, 1);
    double e = 0.25 * (x1 * x1 + x2 * x2 + x1 * x2);
    double treat_prob = e / (1.0 + e);
    data.A(i) = rng.uniform01() < treat_prob ? 1.0 : -1.0;
    double contrast = (std::fabs(x1) + 0.5) * (group_one ? 1.0 : -1.0);
    double base = data.X.row(i) * gamma;
    (*data.Y)(i) = base * base + (data.A(i) > 0.0 ? contrast : 0.0) +
                   rng.normal();
  }
  data.validate();
  return data;
}

Dataset simulate_global_null(Eigen::Index n, Eigen::Index p,
                             std::uint64_t seed) {
  check_design_args(n, p, 5);
  RngStream rng(seed, 0x5CE0);
  Dataset data;
  data.X.resize(n, p);
  data.A.resize(n);
  Eigen::RowVectorXd row(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    bool group_one = draw_covariates(rng, 0.0, p, row);
    data.X.row(i) = row;
    data.A(i) = group_one ? 1.0 : -1.0;
    data.X(i, p - 1) = data.A(i) + 0.5 * rng.normal();
  }
  data.validate();
  return data;
}

Dataset simulate(const ScenarioConfig& sc, std::uint64_t seed) {
  switch (sc.scenario) {
    case 0:
      return simulate_global_null(sc.n, sc.p, seed);
    case 1:
      return simulate_scenario1(sc.n, sc.p, sc.xi, seed);
    case 2:
      return simulate_scenario2(sc.n, sc.p, sc.xi, seed);
    default:
      throw InvalidArgument("simulate: scenario must be 0, 1, or 2");
  }
}

Eigen::VectorXd compute_truth(const ScenarioConfig& sc,
                              const PiecewiseLinearLoss& loss,
                              const Algorithm2Config& config,
                              Eigen::Index n_truth, int replicates,
                              double zero_tol, int jobs) {
  if (replicates < 1) {
    throw InvalidArgument("compute_truth: need at least one replicate");
  }
  if (n_truth < 2) throw InvalidArgument("compute_truth: n_truth too small");

  std::vector<Eigen::VectorXd> fits(static_cast<std::size_t>(replicates));
  parallel_for(static_cast<std::size_t>(replicates), jobs, [&](std::size_t r) {
    std::uint64_t seed_r = mix_seed(sc.seed, 0x17, r);
    ScenarioConfig big = sc;
    big.n = n_truth;
    Dataset data = simulate(big, seed_r);
    if (sc.scenario == 2) {
      WeightPair w =
          build_application_weights(data, data, Application::Itr, config);
      data.w_plus = w.w_plus;
      data.w_minus = w.w_minus;
    }
    double lambda;
    if (config.inference.fixed_lambda) {
      lambda = *config.inference.fixed_lambda;
    } else {
      std::vector<double> grid =
          default_lambda_grid(data, loss, config.inference.lambda_grid_size,
                              config.inference.lambda_min_ratio);
      lambda = cross_validate_lambda(data, loss, grid,
                                     config.inference.lambda_cv_folds,
                                     mix_seed(seed_r, 0x18),
                                     config.inference.solver)
                   .value;
    }
    fits[r] = fit_penalized_erm(data, loss, lambda, config.inference.solver)
                  .beta;
  });

  Eigen::VectorXd avg = Eigen::VectorXd::Zero(sc.p);
  for (const auto& b : fits) avg += b;
  avg /= static_cast<double>(replicates);
  for (Eigen::Index j = 0; j < avg.size(); ++j) {
    if (std::fabs(avg(j)) < zero_tol) avg(j) = 0.0;
  }
  return avg;
}

MetricsReport run_experiment(const ScenarioConfig& sc,
                             const PiecewiseLinearLoss& loss,
                             const Algorithm2Config& config,
                             const std::vector<Eigen::Index>& targets,
                             double alpha, const Eigen::VectorXd* truth,
                             int jobs) {
  if (sc.replicates < 1) {
    throw InvalidArgument("run_experiment: need at least one replicate");
  }
  if (targets.empty()) {
    throw InvalidArgument("run_experiment: no target coordinates");
  }
  for (Eigen::Index l : targets) {
    if (l < 0 || l >= sc.p) {
      throw InvalidArgument("run_experiment: target out of range");
    }
  }
  if (truth && truth->size() != sc.p) {
    throw DimensionMismatch("run_experiment: truth vector length != p");
  }

  MetricsReport report;
  report.scenario = sc;
  report.targets = targets;
  report.alpha = alpha;
  if (truth) report.truth = *truth;
  report.outcomes.resize(static_cast<std::size_t>(sc.replicates));

  auto t0 = std::chrono::steady_clock::now();
  parallel_for(static_cast<std::size_t>(sc.replicates), jobs,
               [&](std::size_t r) {
    std::uint64_t seed_r = sc.seed ^ static_cast<std::uint64_t>(r);
    ReplicateOutcome& out = report.outcomes[r];
    try {
      Dataset data = simulate(sc, seed_r);
      Algorithm2Config inner = config;
      inner.inference.seed = mix_seed(seed_r, 0x99);
      if (sc.scenario == 2) {
        out.records = run_algorithm2(data, Application::Itr, loss, inner,
                                     targets, alpha, nullptr, 1);
      } else {
        out.records = test_all_coordinates(data, loss, inner.inference,
                                           targets, alpha, nullptr, 1);
      }
      out.ok = true;
    } catch (const DegeneracyError& e) {
      out.ok = false;
      out.error = e.what();
    }
  });
  auto t1 = std::chrono::steady_clock::now();
  report.runtime_seconds = std::chrono::duration<double>(t1 - t0).count();

  const std::size_t t_count = targets.size();
  report.rejection_rate.assign(t_count, 0.0);
  report.coverage.assign(t_count, std::numeric_limits<double>::quiet_NaN());
  report.avg_ci_length.assign(t_count, 0.0);
  std::vector<double> cover(t_count, 0.0);
  for (const auto& out : report.outcomes) {
    if (!out.ok) {
      ++report.skipped;
      continue;
    }
    ++report.completed;
    for (std::size_t t = 0; t < t_count; ++t) {
      const CoordinateInference& rec = out.records[t];
      if (rec.p_value <= alpha) report.rejection_rate[t] += 1.0;
      report.avg_ci_length[t] += rec.ci_high - rec.ci_low;
      if (truth) {
        double b = (*truth)(targets[t]);
        if (rec.ci_low <= b && b <= rec.ci_high) cover[t] += 1.0;
      }
    }
  }
  if (report.completed > 0) {
    for (std::size_t t = 0; t < t_count; ++t) {
      double denom = static_cast<double>(report.completed);
      report.rejection_rate[t] /= denom;
      report.avg_ci_length[t] /= denom;
      if (truth) report.coverage[t] = cover[t] / denom;
    }
  }
  return report;
}

std::vector<BaselineRecord> baseline_adhoc(const Dataset& data,
                                           const PiecewiseLinearLoss& loss,
                                           const InferenceConfig& config,
                                           const std::vector<Eigen::Index>& targets,
                                           double alpha) {
  if (targets.empty()) return {};
  data.validate();
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw InvalidArgument("baseline: alpha must lie in (0,1)");
  }
  for (Eigen::Index l : targets) {
    if (l < 0 || l >= data.p()) {
      throw InvalidArgument("baseline: target out of range");
    }
  }
  const Eigen::Index n = data.n();

  double lambda;
  if (config.fixed_lambda) {
    lambda = *config.fixed_lambda;
  } else {
    std::vector<double> grid = default_lambda_grid(
        data, loss, config.lambda_grid_size, config.lambda_min_ratio);
    lambda = cross_validate_lambda(data, loss, grid, config.lambda_cv_folds,
                                   mix_seed(config.seed, 0xBA5),
                                   config.solver)
                 .value;
  }
  ErmFit pilot = fit_penalized_erm(data, loss, lambda, config.solver);

  std::vector<Eigen::Index> support;
  for (Eigen::Index j = 0; j < data.p(); ++j) {
    bool keep = pilot.beta(j) != 0.0;
    for (Eigen::Index l : targets) keep = keep || l == j;
    if (keep) support.push_back(j);
  }

  Dataset restricted;
  restricted.X.resize(n, static_cast<Eigen::Index>(support.size()));
  for (std::size_t j = 0; j < support.size(); ++j) {
    restricted.X.col(static_cast<Eigen::Index>(j)) = data.X.col(support[j]);
  }
  restricted.A = data.A;
  restricted.Y = data.Y;
  restricted.R = data.R;
  restricted.w_plus = data.w_plus;
  restricted.w_minus = data.w_minus;

  Eigen::VectorXd warm(support.size());
  for (std::size_t j = 0; j < support.size(); ++j) {
    warm(static_cast<Eigen::Index>(j)) = pilot.beta(support[j]);
  }
  ErmFit refit =
      fit_penalized_erm(restricted, loss, 0.0, config.solver, &warm);

  double h_lo = config.bandwidths.resolve_h_lo(static_cast<std::size_t>(n));
  double h_gb = config.bandwidths.resolve_h_gb(static_cast<std::size_t>(n),
                                               static_cast<std::size_t>(data.p()));
  GlobalKernel kernel = gaussian_global_kernel();

  const Eigen::Index s = restricted.p();
  Eigen::VectorXd wp = restricted.effective_w_plus();
  Eigen::VectorXd wm = restricted.effective_w_minus();
  Eigen::VectorXd margins = restricted.X * refit.beta;
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(s, s);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(s, s);
  LocalKernel local = quintic_local_kernel();
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = margins(i);
    double omega = std::max(wp(i), 0.0) * hessian_weight(loss, kernel, h_gb, m) +
                   std::max(wm(i), 0.0) * hessian_weight(loss, kernel, h_gb, -m);
    double slope = wp(i) * smoothed_gradient(loss, local, h_lo, m) -
                   wm(i) * smoothed_gradient(loss, local, h_lo, -m);
    Eigen::VectorXd xi = restricted.X.row(i).transpose();
    hess.noalias() += omega * xi * xi.transpose();
    meat.noalias() += (slope * slope) * xi * xi.transpose();
  }
  hess /= static_cast<double>(n);
  meat /= static_cast<double>(n);

  Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
  if (ldlt.info() != Eigen::Success) {
    throw NearSingularInformation("baseline: curvature matrix not invertible");
  }
  Eigen::MatrixXd hinv_meat = ldlt.solve(meat);
  Eigen::MatrixXd cov =
      ldlt.solve(hinv_meat.transpose()) / static_cast<double>(n);
  if (!cov.allFinite()) {
    throw NearSingularInformation("baseline: sandwich covariance not finite");
  }

  double quant = normal_quantile(1.0 - alpha / 2.0);
  std::vector<BaselineRecord> out;
  out.reserve(targets.size());
  for (Eigen::Index l : targets) {
    std::size_t pos = 0;
    while (support[pos] != l) ++pos;
    auto k = static_cast<Eigen::Index>(pos);
    BaselineRecord rec;
    rec.coordinate = l;
    rec.estimate = refit.beta(k);
    double var = cov(k, k);
    if (!(var > 0.0)) {
      throw DegenerateVariance("baseline: nonpositive coordinate variance");
    }
    rec.se = std::sqrt(var);
    rec.z = rec.estimate / rec.se;
    rec.p_value = 2.0 * (1.0 - normal_cdf(std::fabs(rec.z)));
    rec.ci_low = rec.estimate - quant * rec.se;
    rec.ci_high = rec.estimate + quant * rec.se;
    out.push_back(rec);
  }
  return out;
}

}  // namespace kdscore
