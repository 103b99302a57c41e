#include "kdscore/inference.hpp"

#include <algorithm>
#include <cmath>

#include "kdscore/errors.hpp"
#include "kdscore/parallel.hpp"
#include "kdscore/stats.hpp"

namespace kdscore {

namespace {

// fold id per row, validating that the folds partition [0, n).
std::vector<int> fold_of_rows(const std::vector<FoldFit>& folds, Eigen::Index n,
                              Eigen::Index p) {
  std::vector<int> fold_of(static_cast<std::size_t>(n), -1);
  for (std::size_t k = 0; k < folds.size(); ++k) {
    if (folds[k].beta.size() != p) {
      throw DimensionMismatch("score: fold coefficient length != p");
    }
    if (folds[k].indices.empty()) throw DegenerateFolds("score: empty fold");
    for (Eigen::Index i : folds[k].indices) {
      if (i < 0 || i >= n) throw DimensionMismatch("score: row out of range");
      if (fold_of[static_cast<std::size_t>(i)] != -1) {
        throw DegenerateFolds("score: row assigned to two folds");
      }
      fold_of[static_cast<std::size_t>(i)] = static_cast<int>(k);
    }
  }
  for (int f : fold_of) {
    if (f == -1) throw DegenerateFolds("score: folds do not cover the data");
  }
  return fold_of;
}

// Residual of the target column against the others: x_l - x_{-l}' w,
// computed through a padded coefficient vector with a zero in slot l.
Eigen::VectorXd target_residuals(const Dataset& data, const Eigen::VectorXd& w,
                                 Eigen::Index l) {
  const Eigen::Index p = data.p();
  if (l < 0 || l >= p) throw DimensionMismatch("score: target out of range");
  if (w.size() != p - 1) throw DimensionMismatch("score: w length != p-1");
  Eigen::VectorXd padded(p);
  if (l > 0) padded.head(l) = w.head(l);
  padded(l) = 0.0;
  if (l < p - 1) padded.tail(p - 1 - l) = w.tail(p - 1 - l);
  return data.X.col(l) - data.X * padded;
}

double smoothed_slope(const PiecewiseLinearLoss& loss, const LocalKernel& kernel,
                      double h, double t) {
  double g = loss.base_slope();
  const auto& knots = loss.knots();
  const auto& jumps = loss.jumps();
  for (std::size_t j = 0; j < knots.size(); ++j) {
    g += jumps[j] * kernel.h((t - knots[j]) / h);
  }
  return g;
}

}  // namespace

std::vector<std::vector<Eigen::Index>> FoldPlan::folds() const {
  std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    out[static_cast<std::size_t>(assignment[i])].push_back(
        static_cast<Eigen::Index>(i));
  }
  return out;
}

FoldPlan make_fold_plan(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2 || static_cast<std::size_t>(k) > n) {
    throw InvalidK("fold plan: need 2 <= K <= n");
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignment = random_assignment(n, k, seed);
  return plan;
}

ScoreResult decorrelated_score(const Dataset& data,
                               const std::vector<FoldFit>& folds,
                               const Eigen::VectorXd& w,
                               const PiecewiseLinearLoss& loss,
                               const LocalKernel& kernel, double h_lo,
                               Eigen::Index l, bool null_at_zero) {
  data.validate();
  if (!(h_lo > 0.0)) throw InvalidArgument("score: h_lo must be positive");
  if (folds.empty()) throw InvalidK("score: no folds supplied");
  const Eigen::Index n = data.n();
  std::vector<int> fold_of = fold_of_rows(folds, n, data.p());
  Eigen::VectorXd resid = target_residuals(data, w, l);
  Eigen::VectorXd wp = data.effective_w_plus();
  Eigen::VectorXd wm = data.effective_w_minus();

  const double kf = static_cast<double>(folds.size());
  double s = 0.0;
  double var = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(fold_of[static_cast<std::size_t>(i)]);
    const Eigen::VectorXd& beta = folds[k].beta;
    double m_free = data.X.row(i).dot(beta);
    double m_eval =
        null_at_zero ? m_free - data.X(i, l) * beta(l) : m_free;
    auto psi = [&](double m) {
      double g = 0.0;
      if (wp(i) != 0.0) g += wp(i) * smoothed_slope(loss, kernel, h_lo, m);
      if (wm(i) != 0.0) g -= wm(i) * smoothed_slope(loss, kernel, h_lo, -m);
      return g * resid(i);
    };
    double scale = 1.0 / (kf * static_cast<double>(folds[k].indices.size()));
    s += psi(m_eval) * scale;
    double psi_free = null_at_zero ? psi(m_free) : psi(m_eval);
    var += psi_free * psi_free * scale;
  }
  return ScoreResult{s, std::sqrt(var)};
}

double information_estimate(const Dataset& data,
                            const std::vector<FoldFit>& folds,
                            const Eigen::VectorXd& w,
                            const PiecewiseLinearLoss& loss,
                            const GlobalKernel& kernel, double h_gb,
                            Eigen::Index l) {
  data.validate();
  if (!(h_gb > 0.0)) throw InvalidArgument("information: h_gb must be positive");
  if (folds.empty()) throw InvalidK("information: no folds supplied");
  const Eigen::Index n = data.n();
  std::vector<int> fold_of = fold_of_rows(folds, n, data.p());
  Eigen::VectorXd resid = target_residuals(data, w, l);

  const bool weighted = data.has_weights();
  const double kf = static_cast<double>(folds.size());
  double info = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(fold_of[static_cast<std::size_t>(i)]);
    double margin = data.X.row(i).dot(folds[k].beta);
    double omega;
    if (weighted) {
      // Raw arm weights here: the curvature estimate mirrors the score's
      // weighting exactly, unlike the floored decorrelation design.
      omega = (*data.w_plus)(i)*hessian_weight(loss, kernel, h_gb, margin) +
              (*data.w_minus)(i)*hessian_weight(loss, kernel, h_gb, -margin);
    } else {
      omega = hessian_weight(loss, kernel, h_gb, data.A(i) * margin);
    }
    double scale = 1.0 / (kf * static_cast<double>(folds[k].indices.size()));
    info += omega * resid(i) * resid(i) * scale;
  }
  return info;
}

ErmStage run_erm_stage(const Dataset& data, const PiecewiseLinearLoss& loss,
                       const InferenceConfig& config) {
  data.validate();
  if (data.p() < 2) {
    throw InvalidArgument("inference: need at least two covariates");
  }
  const auto n = static_cast<std::size_t>(data.n());
  ErmStage stage;
  stage.h_lo = config.bandwidths.resolve_h_lo(n);
  stage.h_gb = config.bandwidths.resolve_h_gb(n, static_cast<std::size_t>(data.p()));
  stage.plan = make_fold_plan(n, config.k_folds, mix_seed(config.seed, 0xA1));

  auto fold_rows = stage.plan.folds();
  SolverOptions opts = config.solver;
  opts.objective_trace = nullptr;
  for (std::size_t k = 0; k < fold_rows.size(); ++k) {
    std::vector<Eigen::Index> complement;
    complement.reserve(n - fold_rows[k].size());
    for (std::size_t i = 0; i < n; ++i) {
      if (stage.plan.assignment[i] != static_cast<int>(k)) {
        complement.push_back(static_cast<Eigen::Index>(i));
      }
    }
    if (fold_rows[k].empty() || complement.size() < 2) {
      throw DegenerateFolds("inference: fold leaves too few samples");
    }
    Dataset comp = data.subset(complement);
    double lambda;
    if (config.fixed_lambda) {
      lambda = *config.fixed_lambda;
    } else {
      std::vector<double> grid = default_lambda_grid(
          comp, loss, config.lambda_grid_size, config.lambda_min_ratio);
      // Seeded by the fold's smallest row index, which identifies the fold
      // under any relabeling of fold ids.
      std::uint64_t cv_seed = mix_seed(
          config.seed, 0xA2, static_cast<std::uint64_t>(fold_rows[k].front()));
      lambda = cross_validate_lambda(comp, loss, grid, config.lambda_cv_folds,
                                     cv_seed, opts)
                   .value;
    }
    ErmFit fit = fit_penalized_erm(comp, loss, lambda, opts);
    stage.folds.push_back(FoldFit{fold_rows[k], fit.beta});
    stage.lambdas.push_back(lambda);
    stage.converged.push_back(fit.converged);
  }
  return stage;
}

CoordinateAnalysis analyze_coordinate(const Dataset& data,
                                      const PiecewiseLinearLoss& loss,
                                      const InferenceConfig& config,
                                      const ErmStage& stage, Eigen::Index l) {
  GlobalKernel global = gaussian_global_kernel();
  DecorrelationProblem problem = build_decorrelation_problem(
      data, stage.folds, loss, global, stage.h_gb, l,
      config.decorrelation.unweighted);
  double mu;
  if (config.fixed_mu) {
    mu = *config.fixed_mu;
  } else {
    std::vector<double> grid =
        default_mu_grid(problem, config.mu_grid_size, config.mu_min_ratio);
    std::uint64_t cv_seed =
        mix_seed(config.seed, 0xB3, static_cast<std::uint64_t>(l));
    mu = cross_validate_mu(problem, grid, config.mu_cv_folds, cv_seed,
                           config.decorrelation)
             .value;
  }

  CoordinateAnalysis out;
  out.coordinate = l;
  out.decorrelation = fit_decorrelation(problem, mu, config.decorrelation);

  LocalKernel local = quintic_local_kernel();
  ScoreResult null_score = decorrelated_score(
      data, stage.folds, out.decorrelation.w, loss, local, stage.h_lo, l, true);
  ScoreResult free_score = decorrelated_score(
      data, stage.folds, out.decorrelation.w, loss, local, stage.h_lo, l, false);
  out.score_null = null_score.score;
  out.score_free = free_score.score;
  out.sigma_hat = null_score.sigma_hat;
  out.info_hat = information_estimate(data, stage.folds, out.decorrelation.w,
                                      loss, global, stage.h_gb, l);
  double bar = 0.0;
  for (const auto& fold : stage.folds) bar += fold.beta(l);
  out.beta_bar = bar / static_cast<double>(stage.folds.size());
  return out;
}

CoordinateInference make_inference_record(const CoordinateAnalysis& a,
                                          Eigen::Index n, double alpha,
                                          double info_floor, bool p_from_null) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw InvalidArgument("inference: alpha must lie in (0,1)");
  }
  if (!(a.sigma_hat > 0.0)) {
    throw DegenerateVariance("inference: estimated score variance is zero");
  }
  if (a.info_hat < info_floor) {
    throw NearSingularInformation(
        "inference: information estimate below floor, refusing to divide");
  }
  const double root_n = std::sqrt(static_cast<double>(n));
  CoordinateInference rec;
  rec.coordinate = a.coordinate;
  rec.alpha = alpha;
  rec.sigma_hat = a.sigma_hat;
  rec.info_hat = a.info_hat;
  rec.beta_bar = a.beta_bar;
  rec.score = p_from_null ? a.score_null : a.score_free;
  rec.z = root_n * std::fabs(rec.score) / a.sigma_hat;
  rec.p_value = 2.0 * (1.0 - normal_cdf(rec.z));
  rec.beta_tilde = a.beta_bar - a.score_free / a.info_hat;
  double half =
      normal_quantile(1.0 - alpha / 2.0) * a.sigma_hat / (root_n * a.info_hat);
  rec.ci_low = rec.beta_tilde - half;
  rec.ci_high = rec.beta_tilde + half;
  return rec;
}

CoordinateInference test_coordinate(const Dataset& data,
                                    const PiecewiseLinearLoss& loss,
                                    const InferenceConfig& config,
                                    Eigen::Index l) {
  ErmStage stage = run_erm_stage(data, loss, config);
  CoordinateAnalysis a = analyze_coordinate(data, loss, config, stage, l);
  return make_inference_record(a, data.n(), config.alpha, config.info_floor, true);
}

CoordinateInference debiased_estimate(const Dataset& data,
                                      const PiecewiseLinearLoss& loss,
                                      const InferenceConfig& config,
                                      Eigen::Index l, double alpha) {
  ErmStage stage = run_erm_stage(data, loss, config);
  CoordinateAnalysis a = analyze_coordinate(data, loss, config, stage, l);
  return make_inference_record(a, data.n(), alpha, config.info_floor, false);
}

std::vector<CoordinateInference> test_all_coordinates(
    const Dataset& data, const PiecewiseLinearLoss& loss,
    const InferenceConfig& config, const std::vector<Eigen::Index>& targets,
    double alpha, BatchDiagnostics* diagnostics, int jobs) {
  if (targets.empty()) return {};
  data.validate();
  for (Eigen::Index l : targets) {
    if (l < 0 || l >= data.p()) {
      throw InvalidArgument("inference: target coordinate out of range");
    }
  }
  ErmStage stage = run_erm_stage(data, loss, config);
  std::vector<CoordinateAnalysis> analyses(targets.size());
  parallel_for(targets.size(), jobs, [&](std::size_t i) {
    analyses[i] = analyze_coordinate(data, loss, config, stage, targets[i]);
  });
  std::vector<CoordinateInference> records;
  records.reserve(targets.size());
  for (const auto& a : analyses) {
    records.push_back(
        make_inference_record(a, data.n(), alpha, config.info_floor, true));
  }
  if (diagnostics) {
    diagnostics->stage = std::move(stage);
    diagnostics->analyses = std::move(analyses);
  }
  return records;
}

}  // namespace kdscore
