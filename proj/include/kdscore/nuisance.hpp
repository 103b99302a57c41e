#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <vector>

#include "kdscore/dataset.hpp"
#include "kdscore/inference.hpp"

namespace kdscore {

using Predictor = std::function<double(const Eigen::RowVectorXd&)>;

// Nadaraya-Watson regression on the screen_k covariates most correlated
// (absolute Pearson) with the response, product Gaussian kernel with a
// Scott-style bandwidth m^{-1/(4+d)} scaled by each retained dimension's
// standard deviation.  Propensity-type models clip predictions into
// [clip_low, clip_high].
struct NuisanceModel {
  std::vector<Eigen::Index> screening_indices;
  double bandwidth = 0.0;      // the m^{-1/(4+d)} factor
  Eigen::VectorXd dim_scale;   // per retained dimension standard deviation
  Eigen::MatrixXd train_x;     // training snapshot, retained columns only
  Eigen::VectorXd train_y;
  bool clip = false;
  double clip_low = 0.05;
  double clip_high = 0.95;

  double predict(const Eigen::RowVectorXd& x_full) const;
  Predictor predictor() const;  // owning copy, safe to outlive the model
};

NuisanceModel fit_nuisance_kernel_regression(const Eigen::MatrixXd& x,
                                             const Eigen::VectorXd& response,
                                             int screen_k, bool propensity,
                                             double clip_low = 0.05,
                                             double clip_high = 0.95);

struct WeightPair {
  Eigen::VectorXd w_plus;
  Eigen::VectorXd w_minus;
};

// Missing-label weights: for each sample and arm a,
//   W_a = 1{R=1, A=a}/pi(x) - (1{R=1} - pi(x))/pi(x) * p_a(x).
// Unlabeled rows fall back to the label model p_a alone; labeled rows get
// the inverse-probability term with its augmentation.  pi at or below
// overlap_floor raises OverlapViolation; |W_a| above weight_cap (default
// 2/overlap_floor) raises InvalidWeights.
WeightPair weights_missing_labels(const Dataset& data, const Predictor& pi_hat,
                                  const Predictor& p_plus,
                                  const Predictor& p_minus,
                                  double overlap_floor = 0.01,
                                  double weight_cap = 0.0);

// Treatment-rule weights: for each sample and arm a,
//   W_a = Y 1{A=a}/p_a(x) + (1{A=a} - p_a(x))/p_a(x) * Q_a(x).
// p_a outside [overlap_floor, 1-overlap_floor] raises OverlapViolation.
WeightPair weights_itr(const Dataset& data, const Predictor& p_plus,
                       const Predictor& p_minus, const Predictor& q_plus,
                       const Predictor& q_minus, double overlap_floor = 0.01);

enum class Application { MissingLabels, Itr };

struct Algorithm2Config {
  InferenceConfig inference{};
  int screen_k = 0;  // 0 resolves to min(20, p)
  double clip_low = 0.05;
  double clip_high = 0.95;
  double overlap_floor = 0.01;
  double weight_cap = 0.0;  // 0 resolves to 2/overlap_floor
  Eigen::Index min_half = 10;
};

struct Algorithm2Diagnostics {
  struct Half {
    std::vector<Eigen::Index> rows;  // rows evaluated (nuisance fit on the other half)
    Dataset weighted;                // evaluation subset with attached weights
    ErmStage stage;
    std::vector<CoordinateAnalysis> analyses;
  };
  std::array<Half, 2> halves;
};

// Cross-fitted two-half driver: nuisance models are fit on one half and
// the score machinery runs on the other with the estimated weights
// attached, then the roles swap.  Scores and squared variances are
// averaged across the halves, as are the fold-averaged coefficients and
// information estimates feeding the confidence interval; the p-value uses
// the full sample size.
std::vector<CoordinateInference> run_algorithm2(
    const Dataset& data, Application application,
    const PiecewiseLinearLoss& loss, const Algorithm2Config& config,
    const std::vector<Eigen::Index>& targets, double alpha,
    Algorithm2Diagnostics* diagnostics = nullptr, int jobs = 1);

// Weight construction for one evaluation subset given models trained
// elsewhere; shared by run_algorithm2 and the simulation truth pipeline.
WeightPair build_application_weights(const Dataset& eval,
                                     const Dataset& train,
                                     Application application,
                                     const Algorithm2Config& config);

}  // namespace kdscore
