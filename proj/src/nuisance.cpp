#include "kdscore/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdscore/errors.hpp"
#include "kdscore/parallel.hpp"
#include "kdscore/stats.hpp"

namespace kdscore {

namespace {

double clip_to(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

Eigen::VectorXd column_sd(const Eigen::MatrixXd& x) {
  const double m = static_cast<double>(x.rows());
  Eigen::VectorXd sd = Eigen::VectorXd::Zero(x.cols());
  if (x.rows() < 2) return sd;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double mean = x.col(j).mean();
    double ss = (x.col(j).array() - mean).square().sum();
    sd(j) = std::sqrt(ss / (m - 1.0));
  }
  return sd;
}

}  // namespace

double NuisanceModel::predict(const Eigen::RowVectorXd& x_full) const {
  const Eigen::Index m = train_x.rows();
  const auto d = static_cast<Eigen::Index>(screening_indices.size());
  Eigen::VectorXd query(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::Index src = screening_indices[static_cast<std::size_t>(j)];
    if (src >= x_full.size()) {
      throw DimensionMismatch("nuisance predict: query row too short");
    }
    query(j) = x_full(src);
  }
  // Log-weights with the max subtracted keep the exponentials finite even
  // far from the training cloud.
  Eigen::VectorXd logw(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double dist = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      double width = bandwidth * dim_scale(j);
      if (width <= 0.0) continue;  // constant dimension carries no signal
      double u = (query(j) - train_x(i, j)) / width;
      dist += u * u;
    }
    logw(i) = -0.5 * dist;
  }
  double top = logw.maxCoeff();
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    double w = std::exp(logw(i) - top);
    num += w * train_y(i);
    den += w;
  }
  double value = num / den;
  return clip ? clip_to(value, clip_low, clip_high) : value;
}

Predictor NuisanceModel::predictor() const {
  NuisanceModel copy = *this;
  return [copy](const Eigen::RowVectorXd& x) { return copy.predict(x); };
}

NuisanceModel fit_nuisance_kernel_regression(const Eigen::MatrixXd& x,
                                             const Eigen::VectorXd& response,
                                             int screen_k, bool propensity,
                                             double clip_low,
                                             double clip_high) {
  if (x.rows() == 0) {
    throw InsufficientData("kernel regression: empty training stratum");
  }
  if (response.size() != x.rows()) {
    throw DimensionMismatch("kernel regression: response length != rows");
  }
  if (screen_k < 1 || screen_k > x.cols()) {
    throw InvalidArgument("kernel regression: screen_k must be in [1, p]");
  }

  const Eigen::Index m = x.rows();
  const Eigen::Index p = x.cols();
  Eigen::VectorXd corr = Eigen::VectorXd::Zero(p);
  if (m >= 2) {
    double ymean = response.mean();
    double yss = (response.array() - ymean).square().sum();
    if (yss > 0.0) {
      for (Eigen::Index j = 0; j < p; ++j) {
        double xmean = x.col(j).mean();
        double xss = (x.col(j).array() - xmean).square().sum();
        if (xss > 0.0) {
          double cov =
              ((x.col(j).array() - xmean) * (response.array() - ymean)).sum();
          corr(j) = cov / std::sqrt(xss * yss);
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    double ca = std::fabs(corr(a));
    double cb = std::fabs(corr(b));
    if (ca != cb) return ca > cb;
    return a < b;
  });
  order.resize(static_cast<std::size_t>(screen_k));
  std::sort(order.begin(), order.end());

  NuisanceModel model;
  model.screening_indices = order;
  model.train_x.resize(m, screen_k);
  for (int j = 0; j < screen_k; ++j) {
    model.train_x.col(j) = x.col(order[static_cast<std::size_t>(j)]);
  }
  model.train_y = response;
  model.dim_scale = column_sd(model.train_x);
  model.bandwidth =
      std::pow(static_cast<double>(m), -1.0 / (4.0 + static_cast<double>(screen_k)));
  model.clip = propensity;
  model.clip_low = clip_low;
  model.clip_high = clip_high;
  return model;
}

WeightPair weights_missing_labels(const Dataset& data, const Predictor& pi_hat,
                                  const Predictor& p_plus,
                                  const Predictor& p_minus,
                                  double overlap_floor, double weight_cap) {
  data.validate();
  if (!data.R) {
    throw InvalidArgument("missing-label weights: observation indicator required");
  }
  if (!(overlap_floor > 0.0)) {
    throw InvalidArgument("missing-label weights: overlap floor must be positive");
  }
  double cap = weight_cap > 0.0 ? weight_cap : 2.0 / overlap_floor;

  const Eigen::Index n = data.n();
  WeightPair out{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::RowVectorXd xi = data.X.row(i);
    double pi = pi_hat(xi);
    if (!(pi > overlap_floor)) {
      throw OverlapViolation("missing-label weights: pi at or below floor");
    }
    if (!(pi <= 1.0)) {
      throw InvalidArgument("missing-label weights: pi must lie in (0,1]");
    }
    double pp = p_plus(xi);
    double pm = p_minus(xi);
    if (!(pp >= 0.0 && pp <= 1.0 && pm >= 0.0 && pm <= 1.0)) {
      throw InvalidArgument("missing-label weights: p_a must lie in [0,1]");
    }
    double r = (*data.R)(i);
    double aug = (r - pi) / pi;
    out.w_plus(i) = (r != 0.0 && data.A(i) > 0.0 ? 1.0 / pi : 0.0) - aug * pp;
    out.w_minus(i) = (r != 0.0 && data.A(i) < 0.0 ? 1.0 / pi : 0.0) - aug * pm;
    if (!std::isfinite(out.w_plus(i)) || !std::isfinite(out.w_minus(i)) ||
        std::fabs(out.w_plus(i)) > cap || std::fabs(out.w_minus(i)) > cap) {
      throw InvalidWeights("missing-label weights: weight beyond configured cap");
    }
  }
  return out;
}

WeightPair weights_itr(const Dataset& data, const Predictor& p_plus,
                       const Predictor& p_minus, const Predictor& q_plus,
                       const Predictor& q_minus, double overlap_floor) {
  data.validate();
  if (!data.Y) throw InvalidArgument("treatment weights: outcome required");
  if (!(overlap_floor > 0.0 && overlap_floor < 0.5)) {
    throw InvalidArgument("treatment weights: overlap floor must be in (0, 0.5)");
  }

  const Eigen::Index n = data.n();
  WeightPair out{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::RowVectorXd xi = data.X.row(i);
    double y = (*data.Y)(i);
    for (int arm = 0; arm < 2; ++arm) {
      double a = arm == 0 ? 1.0 : -1.0;
      double pa = arm == 0 ? p_plus(xi) : p_minus(xi);
      if (pa <= overlap_floor || pa >= 1.0 - overlap_floor) {
        throw OverlapViolation("treatment weights: propensity outside overlap band");
      }
      double qa = arm == 0 ? q_plus(xi) : q_minus(xi);
      double ind = data.A(i) == a ? 1.0 : 0.0;
      double w = y * ind / pa + (ind - pa) / pa * qa;
      if (!std::isfinite(w)) {
        throw InvalidWeights("treatment weights: non-finite weight");
      }
      (arm == 0 ? out.w_plus : out.w_minus)(i) = w;
    }
  }
  return out;
}

WeightPair build_application_weights(const Dataset& eval, const Dataset& train,
                                     Application application,
                                     const Algorithm2Config& config) {
  int screen_k = config.screen_k > 0
                     ? config.screen_k
                     : static_cast<int>(std::min<Eigen::Index>(20, train.p()));

  if (application == Application::MissingLabels) {
    if (!train.R) {
      throw InvalidArgument("weights: observation indicator required");
    }
    NuisanceModel pi = fit_nuisance_kernel_regression(
        train.X, *train.R, screen_k, true, config.clip_low, config.clip_high);
    std::vector<Eigen::Index> labeled;
    for (Eigen::Index i = 0; i < train.n(); ++i) {
      if ((*train.R)(i) == 1.0) labeled.push_back(i);
    }
    if (labeled.empty()) {
      throw InsufficientData("weights: no labeled rows to fit label model");
    }
    Dataset lab = train.subset(labeled);
    Eigen::VectorXd is_plus(lab.n()), is_minus(lab.n());
    for (Eigen::Index i = 0; i < lab.n(); ++i) {
      is_plus(i) = lab.A(i) > 0.0 ? 1.0 : 0.0;
      is_minus(i) = 1.0 - is_plus(i);
    }
    NuisanceModel pp = fit_nuisance_kernel_regression(
        lab.X, is_plus, screen_k, true, config.clip_low, config.clip_high);
    NuisanceModel pm = fit_nuisance_kernel_regression(
        lab.X, is_minus, screen_k, true, config.clip_low, config.clip_high);
    return weights_missing_labels(eval, pi.predictor(), pp.predictor(),
                                  pm.predictor(), config.overlap_floor,
                                  config.weight_cap);
  }

  if (!train.Y) throw InvalidArgument("weights: outcome required");
  Eigen::VectorXd is_plus(train.n());
  for (Eigen::Index i = 0; i < train.n(); ++i) {
    is_plus(i) = train.A(i) > 0.0 ? 1.0 : 0.0;
  }
  NuisanceModel pp = fit_nuisance_kernel_regression(
      train.X, is_plus, screen_k, true, config.clip_low, config.clip_high);
  NuisanceModel pm = fit_nuisance_kernel_regression(
      train.X, Eigen::VectorXd::Ones(train.n()) - is_plus, screen_k, true,
      config.clip_low, config.clip_high);
  std::vector<Eigen::Index> arm_plus, arm_minus;
  for (Eigen::Index i = 0; i < train.n(); ++i) {
    (train.A(i) > 0.0 ? arm_plus : arm_minus).push_back(i);
  }
  if (arm_plus.empty() || arm_minus.empty()) {
    throw InsufficientData("weights: an arm stratum is empty");
  }
  Dataset dplus = train.subset(arm_plus);
  Dataset dminus = train.subset(arm_minus);
  NuisanceModel qp = fit_nuisance_kernel_regression(dplus.X, *dplus.Y, screen_k,
                                                    false);
  NuisanceModel qm = fit_nuisance_kernel_regression(dminus.X, *dminus.Y,
                                                    screen_k, false);
  return weights_itr(eval, pp.predictor(), pm.predictor(), qp.predictor(),
                     qm.predictor(), config.overlap_floor);
}

std::vector<CoordinateInference> run_algorithm2(
    const Dataset& data, Application application,
    const PiecewiseLinearLoss& loss, const Algorithm2Config& config,
    const std::vector<Eigen::Index>& targets, double alpha,
    Algorithm2Diagnostics* diagnostics, int jobs) {
  if (targets.empty()) return {};
  data.validate();
  for (Eigen::Index l : targets) {
    if (l < 0 || l >= data.p()) {
      throw InvalidArgument("algorithm2: target coordinate out of range");
    }
  }
  if (application == Application::MissingLabels && !data.R) {
    throw InvalidArgument("algorithm2: observation indicator required");
  }
  if (application == Application::Itr && !data.Y) {
    throw InvalidArgument("algorithm2: outcome required");
  }

  const auto n = static_cast<std::size_t>(data.n());
  FoldPlan halves =
      make_fold_plan(n, 2, mix_seed(config.inference.seed, 0xA55));
  auto half_rows = halves.folds();
  if (static_cast<Eigen::Index>(half_rows[0].size()) < config.min_half ||
      static_cast<Eigen::Index>(half_rows[1].size()) < config.min_half) {
    throw HalfTooSmall("algorithm2: a data half is below the configured minimum");
  }

  struct HalfResult {
    Dataset weighted;
    ErmStage stage;
    std::vector<CoordinateAnalysis> analyses;
  };
  std::array<HalfResult, 2> result;
  for (int h = 0; h < 2; ++h) {
    const std::vector<Eigen::Index>& eval_rows = half_rows[static_cast<std::size_t>(h)];
    const std::vector<Eigen::Index>& train_rows = half_rows[static_cast<std::size_t>(1 - h)];
    Dataset train = data.subset(train_rows);
    Dataset eval = data.subset(eval_rows);
    WeightPair weights = build_application_weights(eval, train, application, config);
    eval.w_plus = weights.w_plus;
    eval.w_minus = weights.w_minus;

    InferenceConfig inner = config.inference;
    inner.seed = mix_seed(config.inference.seed, 0xA56,
                          static_cast<std::uint64_t>(h));
    HalfResult& hr = result[static_cast<std::size_t>(h)];
    hr.weighted = std::move(eval);
    hr.stage = run_erm_stage(hr.weighted, loss, inner);
    hr.analyses.resize(targets.size());
    parallel_for(targets.size(), jobs, [&](std::size_t i) {
      hr.analyses[i] =
          analyze_coordinate(hr.weighted, loss, inner, hr.stage, targets[i]);
    });
  }

  std::vector<CoordinateInference> records;
  records.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const CoordinateAnalysis& a = result[0].analyses[i];
    const CoordinateAnalysis& b = result[1].analyses[i];
    CoordinateAnalysis agg;
    agg.coordinate = targets[i];
    agg.score_null = 0.5 * (a.score_null + b.score_null);
    agg.score_free = 0.5 * (a.score_free + b.score_free);
    agg.sigma_hat = std::sqrt(
        0.5 * (a.sigma_hat * a.sigma_hat + b.sigma_hat * b.sigma_hat));
    agg.info_hat = 0.5 * (a.info_hat + b.info_hat);
    agg.beta_bar = 0.5 * (a.beta_bar + b.beta_bar);
    records.push_back(make_inference_record(agg, data.n(), alpha,
                                            config.inference.info_floor, true));
  }

  if (diagnostics) {
    for (int h = 0; h < 2; ++h) {
      auto& slot = diagnostics->halves[static_cast<std::size_t>(h)];
      auto& hr = result[static_cast<std::size_t>(h)];
      slot.rows = half_rows[static_cast<std::size_t>(h)];
      slot.weighted = std::move(hr.weighted);
      slot.stage = std::move(hr.stage);
      slot.analyses = std::move(hr.analyses);
    }
  }
  return records;
}

}  // namespace kdscore
