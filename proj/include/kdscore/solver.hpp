#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "kdscore/dataset.hpp"
#include "kdscore/loss_kernel.hpp"

namespace kdscore {

// L1-penalised surrogate risk minimisation.  The nonsmooth loss is
// replaced by its kernel-smoothed version and tightened through a
// decreasing bandwidth schedule; the final bandwidth 1e-4 * scale (scale
// = knot span floored at one) also defines the gradient used in the KKT
// certificate.  Proximal gradient steps with backtracking and Nesterov
// momentum, with a monotone safeguard so the recorded objective never
// increases; the safeguard also keeps the solver stable when supplied
// arm weights are negative and the objective is only piecewise convex.
struct SolverOptions {
  double opt_tol = 1e-8;        // relative objective change to end a stage
  double kkt_tol = 1e-4;        // certificate threshold for `converged`
  int max_iterations = 10000;   // total across all bandwidth stages
  std::vector<double>* objective_trace = nullptr;  // optional per-step record
};

struct ErmFit {
  Eigen::VectorXd beta;
  double lambda = 0.0;
  double objective = 0.0;  // exact (unsmoothed) penalised objective at beta
  int iterations = 0;
  bool converged = false;
  bool runaway = false;  // iterates escaped along an unbounded descent ray
  double kkt_residual = 0.0;
};

ErmFit fit_penalized_erm(const Dataset& data, const PiecewiseLinearLoss& loss,
                         double lambda, const SolverOptions& opts = {},
                         const Eigen::VectorXd* warm_start = nullptr);

// Exact penalised objective (1/n) sum_i [wp_i phi(m_i) + wm_i phi(-m_i)]
// + lambda * ||beta||_1 with m = X beta.
double penalized_objective(const Dataset& data, const PiecewiseLinearLoss& loss,
                           const Eigen::VectorXd& beta, double lambda);

// Unpenalised weighted surrogate risk; the cross-validation criterion.
double surrogate_risk(const Dataset& data, const PiecewiseLinearLoss& loss,
                      const Eigen::VectorXd& beta);

// Gradient of the smoothed risk at bandwidth h (no penalty term).
Eigen::VectorXd smoothed_risk_gradient(const Dataset& data,
                                       const PiecewiseLinearLoss& loss,
                                       const Eigen::VectorXd& beta, double h);

// 50 log-spaced values descending from lambda_max, the sup-norm of the
// smoothed-risk gradient at zero, down to min_ratio * lambda_max.
std::vector<double> default_lambda_grid(const Dataset& data,
                                        const PiecewiseLinearLoss& loss,
                                        int size = 50, double min_ratio = 0.01);

struct CvChoice {
  double value = 0.0;               // selected penalty
  std::vector<double> cv_error;     // mean held-out risk per grid entry
};

// K-fold cross-validation over the supplied grid, warm-starting along it
// in the given order.  Held-out criterion is the exact weighted surrogate
// risk.  Ties pick the earliest grid entry.  Deterministic given seed.
CvChoice cross_validate_lambda(const Dataset& data,
                               const PiecewiseLinearLoss& loss,
                               const std::vector<double>& grid, int folds,
                               std::uint64_t seed,
                               const SolverOptions& opts = {});

// ---------------------------------------------------------------------
// Decorrelation: weighted L1 regression of the target column on the rest.
// ---------------------------------------------------------------------

// One cross-fitting fold: its row indices and the coefficient vector that
// was estimated on the complement of those rows.
struct FoldFit {
  std::vector<Eigen::Index> indices;
  Eigen::VectorXd beta;
};

struct DecorrelationOptions {
  double opt_tol = 1e-8;
  double kkt_tol = 1e-4;
  int max_sweeps = 10000;
  bool unweighted = false;  // ablation: drop the curvature weights
};

struct DecorrelationFit {
  Eigen::VectorXd w;  // length p-1, coefficients on the remaining columns
  double mu = 0.0;
  double objective = 0.0;
  int iterations = 0;  // coordinate sweeps
  bool converged = false;
  double kkt_residual = 0.0;
};

// The pooled weighted least-squares design shared by every mu on the
// path: rows stay in dataset order so the result does not depend on how
// fold labels are numbered.  c_i = omega_i / (K n_k) where omega_i is the
// curvature weight at sample i's own-fold-complement margin.  Negative
// arm weights are floored at zero inside omega (the curvature proxy must
// stay nonnegative); the score and information computations elsewhere do
// not floor.
struct DecorrelationProblem {
  Eigen::MatrixXd Z;      // n x (p-1), covariates without column l
  Eigen::VectorXd y;      // column l
  Eigen::VectorXd c;      // fold-scaled quadratic weights
  Eigen::VectorXd omega;  // raw curvature weights
  Eigen::Index l = 0;
};

DecorrelationProblem build_decorrelation_problem(
    const Dataset& data, const std::vector<FoldFit>& folds,
    const PiecewiseLinearLoss& loss, const GlobalKernel& kernel, double h_gb,
    Eigen::Index l, bool unweighted = false);

// Cyclic coordinate descent with an active-set schedule and residual
// maintenance; subgradient certificate at the exact quadratic gradient.
DecorrelationFit fit_decorrelation(const DecorrelationProblem& problem,
                                   double mu,
                                   const DecorrelationOptions& opts = {},
                                   const Eigen::VectorXd* warm_start = nullptr);

// Convenience overload building the problem and fitting in one call.
DecorrelationFit fit_decorrelation(const Dataset& data,
                                   const std::vector<FoldFit>& folds,
                                   const PiecewiseLinearLoss& loss,
                                   const GlobalKernel& kernel, double h_gb,
                                   Eigen::Index l, double mu,
                                   const DecorrelationOptions& opts = {});

double decorrelation_objective(const DecorrelationProblem& problem,
                               const Eigen::VectorXd& w, double mu);

std::vector<double> default_mu_grid(const DecorrelationProblem& problem,
                                    int size = 50, double min_ratio = 0.01);

// Cross-validation over mu: random row folds of the pooled design,
// training weights rescaled by n/|train| so the penalty keeps the same
// relative scale, held-out weighted squared error as the criterion.
CvChoice cross_validate_mu(const DecorrelationProblem& problem,
                           const std::vector<double>& grid, int folds,
                           std::uint64_t seed,
                           const DecorrelationOptions& opts = {});

// Balanced random partition into K groups (sizes differ by at most one),
// returned as a fold id per row.  Shared by every cross-validation and
// cross-fitting split in the library.
std::vector<int> random_assignment(std::size_t n, int k, std::uint64_t seed);

}  // namespace kdscore
