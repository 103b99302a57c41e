#include "kdscore/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kdscore/errors.hpp"
#include "kdscore/stats.hpp"

namespace kdscore {

namespace {

double soft_threshold(double x, double tau) {
  if (x > tau) return x - tau;
  if (x < -tau) return x + tau;
  return 0.0;
}

// Everything the proximal loop needs, materialised once per fit.
struct RiskContext {
  const Eigen::MatrixXd* X;
  Eigen::VectorXd wp;
  Eigen::VectorXd wm;
  const PiecewiseLinearLoss* loss;
  double inv_n;
};

RiskContext make_context(const Dataset& data, const PiecewiseLinearLoss& loss) {
  RiskContext ctx;
  ctx.X = &data.X;
  ctx.wp = data.effective_w_plus();
  ctx.wm = data.effective_w_minus();
  ctx.loss = &loss;
  ctx.inv_n = 1.0 / static_cast<double>(data.n());
  return ctx;
}

// Upper-bound smoothing pinned to the exact loss: value plus the
// per-knot gap h (HA(u) - u_+), which is nonnegative, local, and
// monotone in h.  The pinning keeps the objective comparable across
// bandwidth stages; it cannot move any minimiser.
double smoothed_phi(const PiecewiseLinearLoss& loss, double h, double t) {
  const auto& knots = loss.knots();
  const auto& jumps = loss.jumps();
  double f = loss.value(t);
  for (std::size_t j = 0; j < knots.size(); ++j) {
    double u = (t - knots[j]) / h;
    if (u <= -1.0 || u >= 1.0) continue;
    f += jumps[j] * h * (quintic_kernel_antideriv(u) - std::max(u, 0.0));
  }
  return f;
}

double smoothed_phi_slope(const PiecewiseLinearLoss& loss, double h, double t) {
  double g = loss.base_slope();
  const auto& knots = loss.knots();
  const auto& jumps = loss.jumps();
  for (std::size_t j = 0; j < knots.size(); ++j) {
    g += jumps[j] * quintic_kernel((t - knots[j]) / h);
  }
  return g;
}

double smoothed_risk(const RiskContext& ctx, const Eigen::VectorXd& margins,
                     double h) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < margins.size(); ++i) {
    double wp = ctx.wp(i);
    double wm = ctx.wm(i);
    if (wp != 0.0) s += wp * smoothed_phi(*ctx.loss, h, margins(i));
    if (wm != 0.0) s += wm * smoothed_phi(*ctx.loss, h, -margins(i));
  }
  return s * ctx.inv_n;
}

// Risk and its derivative with respect to each margin in one pass.
double smoothed_risk_dmargin(const RiskContext& ctx,
                             const Eigen::VectorXd& margins, double h,
                             Eigen::VectorXd& dmargin) {
  double s = 0.0;
  dmargin.resize(margins.size());
  for (Eigen::Index i = 0; i < margins.size(); ++i) {
    double wp = ctx.wp(i);
    double wm = ctx.wm(i);
    double d = 0.0;
    if (wp != 0.0) {
      s += wp * smoothed_phi(*ctx.loss, h, margins(i));
      d += wp * smoothed_phi_slope(*ctx.loss, h, margins(i));
    }
    if (wm != 0.0) {
      s += wm * smoothed_phi(*ctx.loss, h, -margins(i));
      d -= wm * smoothed_phi_slope(*ctx.loss, h, -margins(i));
    }
    dmargin(i) = d * ctx.inv_n;
  }
  return s * ctx.inv_n;
}

double exact_risk(const RiskContext& ctx, const Eigen::VectorXd& margins) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < margins.size(); ++i) {
    double wp = ctx.wp(i);
    double wm = ctx.wm(i);
    if (wp != 0.0) s += wp * ctx.loss->value(margins(i));
    if (wm != 0.0) s += wm * ctx.loss->value(-margins(i));
  }
  return s * ctx.inv_n;
}

double kkt_residual_from(const Eigen::VectorXd& grad,
                         const Eigen::VectorXd& coef, double penalty) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < coef.size(); ++j) {
    double r;
    if (coef(j) > 0.0) {
      r = std::fabs(grad(j) + penalty);
    } else if (coef(j) < 0.0) {
      r = std::fabs(grad(j) - penalty);
    } else {
      r = std::max(0.0, std::fabs(grad(j)) - penalty);
    }
    worst = std::max(worst, r);
  }
  return worst;
}

std::vector<double> log_grid(double top, int size, double min_ratio) {
  if (size < 1) throw InvalidArgument("penalty grid: size must be positive");
  if (!(min_ratio > 0.0 && min_ratio <= 1.0)) {
    throw InvalidArgument("penalty grid: min_ratio must be in (0,1]");
  }
  std::vector<double> grid(static_cast<std::size_t>(size));
  if (size == 1) {
    grid[0] = top;
    return grid;
  }
  double lt = std::log(top);
  double lb = std::log(top * min_ratio);
  for (int g = 0; g < size; ++g) {
    grid[static_cast<std::size_t>(g)] =
        std::exp(lt + (lb - lt) * static_cast<double>(g) /
                          static_cast<double>(size - 1));
  }
  return grid;
}

}  // namespace

std::vector<int> random_assignment(std::size_t n, int k, std::uint64_t seed) {
  if (k < 1) throw InvalidK("fold count must be at least 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RngStream rng(seed, 0xF01D5EEDULL);
  rng.shuffle(perm);
  std::vector<int> assignment(n);
  for (std::size_t j = 0; j < n; ++j) {
    assignment[perm[j]] = static_cast<int>(j % static_cast<std::size_t>(k));
  }
  return assignment;
}

double penalized_objective(const Dataset& data, const PiecewiseLinearLoss& loss,
                           const Eigen::VectorXd& beta, double lambda) {
  if (beta.size() != data.p()) throw DimensionMismatch("objective: beta length != p");
  RiskContext ctx = make_context(data, loss);
  Eigen::VectorXd margins = data.X * beta;
  return exact_risk(ctx, margins) + lambda * beta.lpNorm<1>();
}

double surrogate_risk(const Dataset& data, const PiecewiseLinearLoss& loss,
                      const Eigen::VectorXd& beta) {
  if (beta.size() != data.p()) throw DimensionMismatch("risk: beta length != p");
  RiskContext ctx = make_context(data, loss);
  Eigen::VectorXd margins = data.X * beta;
  return exact_risk(ctx, margins);
}

Eigen::VectorXd smoothed_risk_gradient(const Dataset& data,
                                       const PiecewiseLinearLoss& loss,
                                       const Eigen::VectorXd& beta, double h) {
  if (beta.size() != data.p()) throw DimensionMismatch("gradient: beta length != p");
  RiskContext ctx = make_context(data, loss);
  Eigen::VectorXd margins = data.X * beta;
  Eigen::VectorXd dmargin;
  smoothed_risk_dmargin(ctx, margins, h, dmargin);
  return data.X.transpose() * dmargin;
}

ErmFit fit_penalized_erm(const Dataset& data, const PiecewiseLinearLoss& loss,
                         double lambda, const SolverOptions& opts,
                         const Eigen::VectorXd* warm_start) {
  data.validate();
  // lambda = 0 is permitted for unpenalised refits on a restricted design.
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw InvalidArgument("fit: lambda must be nonnegative and finite");
  }
  const Eigen::Index p = data.p();
  if (warm_start && warm_start->size() != p) {
    throw DimensionMismatch("fit: warm start length != p");
  }

  RiskContext ctx = make_context(data, loss);
  const double scale = std::max(loss.knot_span(), 1.0);
  const double stages[] = {1e-1 * scale, 1e-2 * scale, 1e-3 * scale,
                           1e-4 * scale};
  const double h_final = stages[3];
  // Estimated arm weights may be negative, and then the weighted surrogate
  // can lose coercivity: the iterates run off along a descent ray.  A fit
  // that far out carries no usable information, so stop burning iterations
  // and let the caller see converged == false.
  const double runaway = 1e4 * scale;

  Eigen::VectorXd beta = warm_start ? *warm_start : Eigen::VectorXd::Zero(p);
  Eigen::VectorXd margins_beta = data.X * beta;
  bool runaway_hit = false;

  int used = 0;
  double step_l = 1.0;
  Eigen::VectorXd grad_y(p), dmargin(data.n());
  Eigen::VectorXd y = beta, margins_y = margins_beta;
  Eigen::VectorXd z(p), margins_z(data.n());
  Eigen::VectorXd beta_prev(p);

  for (double h : stages) {
    if (runaway_hit) break;
    const bool final_stage = h == h_final;
    double f_beta = smoothed_risk(ctx, margins_beta, h) + lambda * beta.lpNorm<1>();
    if (opts.objective_trace) opts.objective_trace->push_back(f_beta);
    y = beta;
    margins_y = margins_beta;
    double t = 1.0;
    step_l = std::max(step_l * 0.25, 1e-8);
    int rejects = 0;

    while (used < opts.max_iterations) {
      ++used;
      double fy = smoothed_risk_dmargin(ctx, margins_y, h, dmargin);
      grad_y.noalias() = data.X.transpose() * dmargin;

      double fz = 0.0;
      while (true) {
        for (Eigen::Index j = 0; j < p; ++j) {
          z(j) = soft_threshold(y(j) - grad_y(j) / step_l, lambda / step_l);
        }
        margins_z.noalias() = data.X * z;
        fz = smoothed_risk(ctx, margins_z, h);
        Eigen::VectorXd dz = z - y;
        double bound = fy + grad_y.dot(dz) + 0.5 * step_l * dz.squaredNorm();
        if (fz <= bound + 1e-12 * std::max(1.0, std::fabs(bound))) break;
        if (step_l > 1e18) break;
        step_l *= 2.0;
      }

      double f_z = fz + lambda * z.lpNorm<1>();
      beta_prev = beta;
      Eigen::VectorXd margins_prev = margins_beta;
      bool accepted = f_z <= f_beta;
      double decrease = 0.0;
      if (accepted) {
        rejects = 0;
        decrease = f_beta - f_z;
        beta = z;
        margins_beta = margins_z;
        f_beta = f_z;
        double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        double mom = (t - 1.0) / t_next;
        // Gradient-mapping restart keeps the momentum from overshooting.
        if ((y - z).dot(z - beta_prev) > 0.0) {
          t_next = 1.0;
          mom = 0.0;
        }
        y = beta + mom * (beta - beta_prev);
        margins_y = margins_beta + mom * (margins_beta - margins_prev);
        t = t_next;
      } else {
        // Monotone safeguard: discard the candidate, restart momentum from
        // the incumbent.  The next plain proximal step is a descent step up
        // to rounding; a second straight rejection means the incumbent sits
        // at the floating-point floor of this stage.
        t = 1.0;
        y = beta;
        margins_y = margins_beta;
        if (++rejects >= 2) break;
      }
      if (opts.objective_trace) opts.objective_trace->push_back(f_beta);
      if (!accepted) continue;
      if (beta.lpNorm<1>() > runaway) {
        runaway_hit = true;
        break;
      }
      if (final_stage) {
        // The stage that backs the certificate stops on the certificate
        // itself: objective decrements shrink quadratically in the residual
        // and fall below any fixed tolerance long before the residual does.
        smoothed_risk_dmargin(ctx, margins_beta, h, dmargin);
        grad_y.noalias() = data.X.transpose() * dmargin;
        if (kkt_residual_from(grad_y, beta, lambda) <= opts.kkt_tol) break;
        if (decrease <= 1e-15 * std::max(1.0, std::fabs(f_beta))) break;
      } else if (decrease <= opts.opt_tol * std::max(1.0, std::fabs(f_beta))) {
        break;
      }
    }
  }

  ErmFit fit;
  fit.beta = beta;
  fit.lambda = lambda;
  fit.iterations = used;
  fit.runaway = runaway_hit;
  margins_beta.noalias() = data.X * beta;
  fit.objective = exact_risk(ctx, margins_beta) + lambda * beta.lpNorm<1>();
  smoothed_risk_dmargin(ctx, margins_beta, h_final, dmargin);
  Eigen::VectorXd grad = data.X.transpose() * dmargin;
  fit.kkt_residual = kkt_residual_from(grad, beta, lambda);
  fit.converged = fit.kkt_residual <= opts.kkt_tol;
  return fit;
}

std::vector<double> default_lambda_grid(const Dataset& data,
                                        const PiecewiseLinearLoss& loss,
                                        int size, double min_ratio) {
  data.validate();
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(data.p());
  double scale = std::max(loss.knot_span(), 1.0);
  Eigen::VectorXd g = smoothed_risk_gradient(data, loss, zero, 1e-4 * scale);
  double lambda_max = std::max(g.lpNorm<Eigen::Infinity>(), 1e-10);
  return log_grid(lambda_max, size, min_ratio);
}

CvChoice cross_validate_lambda(const Dataset& data,
                               const PiecewiseLinearLoss& loss,
                               const std::vector<double>& grid, int folds,
                               std::uint64_t seed, const SolverOptions& opts) {
  data.validate();
  if (grid.empty()) throw InvalidArgument("lambda cv: empty grid");
  for (double v : grid) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidArgument("lambda cv: grid values must be positive");
    }
  }
  if (folds < 2) throw InvalidK("lambda cv: need at least 2 folds");
  const auto n = static_cast<std::size_t>(data.n());
  if (static_cast<std::size_t>(folds) > n) {
    throw DegenerateFolds("lambda cv: more folds than samples");
  }
  std::vector<int> assignment = random_assignment(n, folds, seed);

  std::vector<double> mean_err(grid.size(), 0.0);
  SolverOptions path_opts = opts;
  path_opts.objective_trace = nullptr;
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train, val;
    for (std::size_t i = 0; i < n; ++i) {
      (assignment[i] == f ? val : train).push_back(static_cast<Eigen::Index>(i));
    }
    if (train.size() < 2 || val.empty()) {
      throw DegenerateFolds("lambda cv: fold leaves too few samples");
    }
    Dataset train_data = data.subset(train);
    Dataset val_data = data.subset(val);
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(data.p());
    for (std::size_t g = 0; g < grid.size(); ++g) {
      ErmFit fit = fit_penalized_erm(train_data, loss, grid[g], path_opts, &warm);
      if (fit.runaway) {
        // A fit that escaped to infinity certifies nothing; with negative
        // estimated weights its held-out risk can even reward the escape,
        // so score the penalty level as unusable rather than trust it.
        mean_err[g] = std::numeric_limits<double>::infinity();
        warm.setZero();
        continue;
      }
      warm = fit.beta;
      mean_err[g] += surrogate_risk(val_data, loss, fit.beta);
    }
  }
  for (double& e : mean_err) e /= static_cast<double>(folds);

  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (mean_err[g] < mean_err[best]) best = g;
  }
  return CvChoice{grid[best], mean_err};
}

DecorrelationProblem build_decorrelation_problem(
    const Dataset& data, const std::vector<FoldFit>& folds,
    const PiecewiseLinearLoss& loss, const GlobalKernel& kernel, double h_gb,
    Eigen::Index l, bool unweighted) {
  data.validate();
  const Eigen::Index n = data.n();
  const Eigen::Index p = data.p();
  if (p < 2) throw InvalidArgument("decorrelation: need at least two covariates");
  if (l < 0 || l >= p) throw DimensionMismatch("decorrelation: target out of range");
  if (folds.empty()) throw InvalidK("decorrelation: no folds supplied");
  if (!(h_gb > 0.0)) throw InvalidArgument("decorrelation: h_gb must be positive");

  std::vector<int> fold_of(static_cast<std::size_t>(n), -1);
  std::vector<double> fold_size(folds.size(), 0.0);
  for (std::size_t k = 0; k < folds.size(); ++k) {
    if (folds[k].beta.size() != p) {
      throw DimensionMismatch("decorrelation: fold coefficient length != p");
    }
    if (folds[k].indices.empty()) {
      throw DegenerateFolds("decorrelation: empty fold");
    }
    for (Eigen::Index i : folds[k].indices) {
      if (i < 0 || i >= n) throw DimensionMismatch("decorrelation: row out of range");
      if (fold_of[static_cast<std::size_t>(i)] != -1) {
        throw DegenerateFolds("decorrelation: row assigned to two folds");
      }
      fold_of[static_cast<std::size_t>(i)] = static_cast<int>(k);
    }
    fold_size[k] = static_cast<double>(folds[k].indices.size());
  }
  for (int f : fold_of) {
    if (f == -1) throw DegenerateFolds("decorrelation: folds do not cover the data");
  }

  const double kf = static_cast<double>(folds.size());
  const bool weighted = data.has_weights();
  Eigen::VectorXd wp, wm;
  if (weighted) {
    wp = *data.w_plus;
    wm = *data.w_minus;
  }

  DecorrelationProblem prob;
  prob.l = l;
  prob.y = data.X.col(l);
  prob.Z.resize(n, p - 1);
  if (l > 0) prob.Z.leftCols(l) = data.X.leftCols(l);
  if (l < p - 1) prob.Z.rightCols(p - 1 - l) = data.X.rightCols(p - 1 - l);
  prob.omega.resize(n);
  prob.c.resize(n);

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int k = fold_of[static_cast<std::size_t>(i)];
    double margin = data.X.row(i).dot(folds[static_cast<std::size_t>(k)].beta);
    double om;
    if (unweighted) {
      om = 1.0;
    } else if (weighted) {
      om = std::max(wp(i), 0.0) * hessian_weight(loss, kernel, h_gb, margin) +
           std::max(wm(i), 0.0) * hessian_weight(loss, kernel, h_gb, -margin);
    } else {
      om = hessian_weight(loss, kernel, h_gb, data.A(i) * margin);
    }
    prob.omega(i) = om;
    prob.c(i) = om / (kf * fold_size[static_cast<std::size_t>(k)]);
    total += om;
  }
  if (!(total > 0.0)) {
    throw AllZeroWeights("decorrelation: every curvature weight is zero");
  }
  return prob;
}

double decorrelation_objective(const DecorrelationProblem& problem,
                               const Eigen::VectorXd& w, double mu) {
  if (w.size() != problem.Z.cols()) {
    throw DimensionMismatch("decorrelation objective: wrong coefficient length");
  }
  Eigen::VectorXd r = problem.y - problem.Z * w;
  return r.cwiseProduct(r).dot(problem.c) + mu * w.lpNorm<1>();
}

DecorrelationFit fit_decorrelation(const DecorrelationProblem& problem,
                                   double mu, const DecorrelationOptions& opts,
                                   const Eigen::VectorXd* warm_start) {
  if (!(mu > 0.0) || !std::isfinite(mu)) {
    throw InvalidArgument("decorrelation: mu must be positive and finite");
  }
  const Eigen::Index m = problem.Z.cols();
  if (warm_start && warm_start->size() != m) {
    throw DimensionMismatch("decorrelation: warm start length != p-1");
  }

  // Columns pre-scaled by the weights: CZ_j . r gives the weighted inner
  // product in one pass.
  Eigen::MatrixXd cz = problem.c.asDiagonal() * problem.Z;
  Eigen::VectorXd a(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    a(j) = 2.0 * cz.col(j).dot(problem.Z.col(j));
  }

  Eigen::VectorXd w = warm_start ? *warm_start : Eigen::VectorXd::Zero(m);
  Eigen::VectorXd r = problem.y - problem.Z * w;

  auto sweep = [&](const std::vector<Eigen::Index>& cols) {
    for (Eigen::Index j : cols) {
      if (a(j) <= 0.0) {
        if (w(j) != 0.0) {
          r += w(j) * problem.Z.col(j);
          w(j) = 0.0;
        }
        continue;
      }
      double b = a(j) * w(j) + 2.0 * cz.col(j).dot(r);
      double wn = soft_threshold(b, mu) / a(j);
      double delta = wn - w(j);
      if (delta != 0.0) {
        r -= delta * problem.Z.col(j);
        w(j) = wn;
      }
    }
  };
  auto objective = [&]() {
    return r.cwiseProduct(r).dot(problem.c) + mu * w.lpNorm<1>();
  };

  std::vector<Eigen::Index> all(static_cast<std::size_t>(m));
  std::iota(all.begin(), all.end(), Eigen::Index{0});

  int sweeps = 0;
  double obj = objective();
  while (sweeps < opts.max_sweeps) {
    double before = obj;
    sweep(all);
    ++sweeps;
    obj = objective();
    if (before - obj <= opts.opt_tol * std::max(1.0, std::fabs(before))) break;

    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (w(j) != 0.0) active.push_back(j);
    }
    while (sweeps < opts.max_sweeps && !active.empty()) {
      double inner_before = obj;
      sweep(active);
      ++sweeps;
      obj = objective();
      if (inner_before - obj <=
          opts.opt_tol * std::max(1.0, std::fabs(inner_before))) {
        break;
      }
    }
  }

  DecorrelationFit fit;
  r = problem.y - problem.Z * w;  // drop accumulated drift before certifying
  fit.w = w;
  fit.mu = mu;
  fit.iterations = sweeps;
  fit.objective = r.cwiseProduct(r).dot(problem.c) + mu * w.lpNorm<1>();
  Eigen::VectorXd grad = -2.0 * (cz.transpose() * r);
  fit.kkt_residual = kkt_residual_from(grad, w, mu);
  fit.converged = fit.kkt_residual <= opts.kkt_tol;
  return fit;
}

DecorrelationFit fit_decorrelation(const Dataset& data,
                                   const std::vector<FoldFit>& folds,
                                   const PiecewiseLinearLoss& loss,
                                   const GlobalKernel& kernel, double h_gb,
                                   Eigen::Index l, double mu,
                                   const DecorrelationOptions& opts) {
  DecorrelationProblem prob = build_decorrelation_problem(
      data, folds, loss, kernel, h_gb, l, opts.unweighted);
  return fit_decorrelation(prob, mu, opts);
}

std::vector<double> default_mu_grid(const DecorrelationProblem& problem,
                                    int size, double min_ratio) {
  Eigen::VectorXd g0 =
      2.0 * (problem.Z.transpose() * problem.c.cwiseProduct(problem.y));
  double mu_max = std::max(g0.lpNorm<Eigen::Infinity>(), 1e-10);
  return log_grid(mu_max, size, min_ratio);
}

CvChoice cross_validate_mu(const DecorrelationProblem& problem,
                           const std::vector<double>& grid, int folds,
                           std::uint64_t seed,
                           const DecorrelationOptions& opts) {
  if (grid.empty()) throw InvalidArgument("mu cv: empty grid");
  for (double v : grid) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidArgument("mu cv: grid values must be positive");
    }
  }
  if (folds < 2) throw InvalidK("mu cv: need at least 2 folds");
  const auto n = static_cast<std::size_t>(problem.Z.rows());
  if (static_cast<std::size_t>(folds) > n) {
    throw DegenerateFolds("mu cv: more folds than samples");
  }
  std::vector<int> assignment = random_assignment(n, folds, seed);
  const double nn = static_cast<double>(n);

  std::vector<double> mean_err(grid.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train, val;
    for (std::size_t i = 0; i < n; ++i) {
      (assignment[i] == f ? val : train).push_back(static_cast<Eigen::Index>(i));
    }
    if (train.empty() || val.empty()) {
      throw DegenerateFolds("mu cv: fold leaves no samples");
    }
    DecorrelationProblem sub;
    sub.l = problem.l;
    sub.Z.resize(static_cast<Eigen::Index>(train.size()), problem.Z.cols());
    sub.y.resize(static_cast<Eigen::Index>(train.size()));
    sub.c.resize(static_cast<Eigen::Index>(train.size()));
    sub.omega.resize(static_cast<Eigen::Index>(train.size()));
    for (std::size_t i = 0; i < train.size(); ++i) {
      auto k = static_cast<Eigen::Index>(i);
      sub.Z.row(k) = problem.Z.row(train[i]);
      sub.y(k) = problem.y(train[i]);
      // Rescaled so the training objective matches the full-data scale and
      // the same mu grid is meaningful.
      sub.c(k) = problem.c(train[i]) * nn / static_cast<double>(train.size());
      sub.omega(k) = problem.omega(train[i]);
    }

    Eigen::VectorXd warm = Eigen::VectorXd::Zero(problem.Z.cols());
    for (std::size_t g = 0; g < grid.size(); ++g) {
      DecorrelationFit fit = fit_decorrelation(sub, grid[g], opts, &warm);
      warm = fit.w;
      double err = 0.0;
      for (Eigen::Index vi : val) {
        double res = problem.y(vi) - problem.Z.row(vi).dot(fit.w);
        err += problem.c(vi) * res * res;
      }
      mean_err[g] += err * nn / static_cast<double>(val.size());
    }
  }
  for (double& e : mean_err) e /= static_cast<double>(folds);

  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (mean_err[g] < mean_err[best]) best = g;
  }
  return CvChoice{grid[best], mean_err};
}

}  // namespace kdscore
