#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "kdscore/dataset.hpp"
#include "kdscore/loss_kernel.hpp"
#include "kdscore/solver.hpp"

namespace kdscore {

// Balanced random K-way split of the sample.  The assignment is a pure
// function of (n, K, seed); fold ids are 0-based and arbitrary labels;
// every downstream computation is invariant to relabeling.
struct FoldPlan {
  int k = 2;
  std::uint64_t seed = 0;
  std::vector<int> assignment;

  std::vector<std::vector<Eigen::Index>> folds() const;
};

FoldPlan make_fold_plan(std::size_t n, int k, std::uint64_t seed);

struct InferenceConfig {
  int k_folds = 2;
  double alpha = 0.05;
  BandwidthConfig bandwidths{};

  int lambda_grid_size = 50;
  double lambda_min_ratio = 0.01;
  int lambda_cv_folds = 5;
  std::optional<double> fixed_lambda;  // skip lambda cross-validation

  int mu_grid_size = 50;
  double mu_min_ratio = 0.01;
  int mu_cv_folds = 5;
  std::optional<double> fixed_mu;  // skip mu cross-validation

  std::uint64_t seed = 0;
  SolverOptions solver{};
  DecorrelationOptions decorrelation{};
  double info_floor = 1e-8;
};

// Inference result for one coordinate.  `score` is the statistic the
// p-value was computed from, so p_value == 2(1 - Phi(sqrt(n)|score|/sigma_hat))
// holds for every emitted record.  The coordinate test evaluates the
// score with the tested coordinate zeroed out; the confidence interval
// always comes from the one-step corrected estimate.
struct CoordinateInference {
  Eigen::Index coordinate = 0;  // 0-based
  double score = 0.0;
  double sigma_hat = 0.0;
  double info_hat = 0.0;
  double beta_bar = 0.0;
  double beta_tilde = 0.0;
  double z = 0.0;  // sqrt(n) |score| / sigma_hat
  double p_value = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double alpha = 0.05;
};

struct ScoreResult {
  double score = 0.0;
  double sigma_hat = 0.0;
};

// Fold-averaged decorrelated score.  Per sample, with effective arm
// weights (wp, wm) and margin m_i = x_i' beta_eval,
//   psi_i = (wp_i phit'(m_i) - wm_i phit'(-m_i)) (x_il - x_{i,-l}' w)
// where phit' is the kernel-smoothed slope at bandwidth h_lo and
// beta_eval is the fold's complement fit, with coordinate l zeroed when
// null_at_zero.  sigma_hat is the square root of the analogous average of
// psi_i^2, always evaluated at the un-zeroed complement fits.
ScoreResult decorrelated_score(const Dataset& data,
                               const std::vector<FoldFit>& folds,
                               const Eigen::VectorXd& w,
                               const PiecewiseLinearLoss& loss,
                               const LocalKernel& kernel, double h_lo,
                               Eigen::Index l, bool null_at_zero);

// Fold-averaged curvature at the residualised coordinate:
//   (1/K) sum_k mean_{i in k} omega_i (x_il - x_{i,-l}' w)^2
// with omega_i = hessian_weight at the sample's margin (both arms,
// weighted by the raw arm weights, no flooring here).
double information_estimate(const Dataset& data,
                            const std::vector<FoldFit>& folds,
                            const Eigen::VectorXd& w,
                            const PiecewiseLinearLoss& loss,
                            const GlobalKernel& kernel, double h_gb,
                            Eigen::Index l);

// The shared first stage: fold plan plus one penalised fit per fold
// complement (lambda cross-validated unless fixed).
struct ErmStage {
  FoldPlan plan;
  std::vector<FoldFit> folds;
  std::vector<double> lambdas;
  std::vector<bool> converged;
  double h_lo = 0.0;
  double h_gb = 0.0;
};

ErmStage run_erm_stage(const Dataset& data, const PiecewiseLinearLoss& loss,
                       const InferenceConfig& config);

// Everything the second stage produces for one coordinate; the different
// record flavours below are assembled from these numbers.
struct CoordinateAnalysis {
  Eigen::Index coordinate = 0;
  DecorrelationFit decorrelation;
  double score_null = 0.0;   // coordinate zeroed in the evaluation point
  double score_free = 0.0;   // evaluation at the un-zeroed fits
  double sigma_hat = 0.0;
  double info_hat = 0.0;
  double beta_bar = 0.0;
};

CoordinateAnalysis analyze_coordinate(const Dataset& data,
                                      const PiecewiseLinearLoss& loss,
                                      const InferenceConfig& config,
                                      const ErmStage& stage, Eigen::Index l);

// Turns analysis numbers into a test/estimate record at sample size n.
// p_from_null selects which score feeds the p-value; the interval always
// comes from the one-step estimate.  Throws DegenerateVariance on a zero
// score variance and NearSingularInformation below info_floor.
CoordinateInference make_inference_record(const CoordinateAnalysis& analysis,
                                          Eigen::Index n, double alpha,
                                          double info_floor, bool p_from_null);

// Null coordinate test: p-value from the score with coordinate l zeroed.
CoordinateInference test_coordinate(const Dataset& data,
                                    const PiecewiseLinearLoss& loss,
                                    const InferenceConfig& config,
                                    Eigen::Index l);

// One-step corrected estimate and confidence interval; the p-value here
// is for the un-restricted score.
CoordinateInference debiased_estimate(const Dataset& data,
                                      const PiecewiseLinearLoss& loss,
                                      const InferenceConfig& config,
                                      Eigen::Index l, double alpha);

struct BatchDiagnostics {
  ErmStage stage;
  std::vector<CoordinateAnalysis> analyses;
};

// Batched driver: the fold plan and the per-fold penalised fits are
// computed once and shared; each target coordinate then gets its own
// decorrelation fit, scores, and record.  Records combine the null test
// (score, p_value) with the one-step estimate (beta_tilde, ci).
std::vector<CoordinateInference> test_all_coordinates(
    const Dataset& data, const PiecewiseLinearLoss& loss,
    const InferenceConfig& config, const std::vector<Eigen::Index>& targets,
    double alpha, BatchDiagnostics* diagnostics = nullptr, int jobs = 1);

}  // namespace kdscore
