#include <cmath>
#include <vector>

#include "doctest.h"
#include "kdscore/dataset.hpp"
#include "kdscore/errors.hpp"
#include "kdscore/nuisance.hpp"
#include "kdscore/stats.hpp"

using namespace kdscore;

namespace {

Predictor constant(double v) {
  return [v](const Eigen::RowVectorXd&) { return v; };
}

Dataset missing_label_fixture() {
  Dataset d;
  d.X.resize(4, 2);
  d.X << 0.1, -0.2, 0.4, 0.3, -0.5, 0.9, 1.2, -1.1;
  d.A.resize(4);
  d.A << 1.0, -1.0, 1.0, -1.0;
  d.R = Eigen::VectorXd(4);
  *d.R << 1.0, 1.0, 0.0, 1.0;
  return d;
}

Dataset synthetic_missing(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  RngStream rng(seed, 0x0A11);
  Dataset d;
  d.X.resize(n, p);
  d.A.resize(n);
  d.R = Eigen::VectorXd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) d.X(i, j) = rng.normal();
    d.A(i) = d.X(i, 0) + 0.8 * rng.normal() >= 0.0 ? 1.0 : -1.0;
    (*d.R)(i) = rng.uniform01() < 0.7 ? 1.0 : 0.0;
  }
  if ((*d.R)(0) == 0.0) (*d.R)(0) = 1.0;  // keep at least one labeled row
  return d;
}

Dataset synthetic_itr(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  RngStream rng(seed, 0x0A12);
  Dataset d;
  d.X.resize(n, p);
  d.A.resize(n);
  d.Y = Eigen::VectorXd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) d.X(i, j) = rng.normal();
    d.A(i) = rng.uniform01() < 0.5 ? 1.0 : -1.0;
    (*d.Y)(i) = 1.5 + d.X(i, 0) + 0.8 * d.A(i) * d.X(i, 1) + rng.normal();
  }
  return d;
}

bool same_record(const CoordinateInference& a, const CoordinateInference& b) {
  return a.coordinate == b.coordinate && a.score == b.score &&
         a.sigma_hat == b.sigma_hat && a.info_hat == b.info_hat &&
         a.beta_bar == b.beta_bar && a.beta_tilde == b.beta_tilde &&
         a.z == b.z && a.p_value == b.p_value && a.ci_low == b.ci_low &&
         a.ci_high == b.ci_high && a.alpha == b.alpha;
}

}  // namespace

TEST_CASE("kernel regression screens on absolute correlation") {
  const Eigen::Index m = 40;
  RngStream rng(1, 0x5C2E);
  Eigen::VectorXd y(m);
  Eigen::MatrixXd x(m, 5);
  for (Eigen::Index i = 0; i < m; ++i) {
    y(i) = rng.normal();
    x(i, 0) = rng.normal();
    x(i, 1) = -0.9 * y(i) + 0.2 * rng.normal();
    x(i, 2) = rng.normal();
    x(i, 3) = y(i) + 0.05 * rng.normal();
    x(i, 4) = rng.normal();
  }
  NuisanceModel model = fit_nuisance_kernel_regression(x, y, 2, false);
  REQUIRE(model.screening_indices.size() == 2);
  CHECK(model.screening_indices[0] == 1);
  CHECK(model.screening_indices[1] == 3);
  CHECK(model.bandwidth ==
        doctest::Approx(std::pow(40.0, -1.0 / 6.0)).epsilon(1e-15));

  double mean1 = x.col(1).mean();
  double sd1 = std::sqrt((x.col(1).array() - mean1).square().sum() / 39.0);
  CHECK(model.dim_scale(0) == doctest::Approx(sd1).epsilon(1e-14));
}

TEST_CASE("constant responses predict the constant") {
  Eigen::MatrixXd x(5, 3);
  RngStream rng(2, 0x5C2E);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal();
  Eigen::VectorXd y = Eigen::VectorXd::Constant(5, 0.4);
  NuisanceModel model = fit_nuisance_kernel_regression(x, y, 2, false);
  // zero correlations everywhere: ties resolve to the lowest indices
  CHECK(model.screening_indices == std::vector<Eigen::Index>{0, 1});
  Eigen::RowVectorXd q(3);
  q << 100.0, -50.0, 3.0;
  CHECK(model.predict(q) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("a single training row predicts its own response everywhere") {
  Eigen::MatrixXd x(1, 2);
  x << 3.0, -1.0;
  Eigen::VectorXd y(1);
  y << 0.99;
  NuisanceModel model = fit_nuisance_kernel_regression(x, y, 2, false);
  Eigen::RowVectorXd q(2);
  q << -40.0, 12.0;
  CHECK(model.predict(q) == 0.99);

  NuisanceModel clipped = fit_nuisance_kernel_regression(x, y, 2, true);
  CHECK(clipped.predict(q) == 0.95);
}

TEST_CASE("constant dimensions carry no kernel weight") {
  Eigen::MatrixXd x(4, 2);
  x << 1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0;
  Eigen::VectorXd y(4);
  y << 0.0, 1.0, 2.0, 3.0;
  NuisanceModel model = fit_nuisance_kernel_regression(x, y, 2, false);
  Eigen::RowVectorXd near(2), far(2);
  near << 1.0, 1.5;
  far << 1e6, 1.5;
  CHECK(model.predict(near) == model.predict(far));
}

TEST_CASE("predictions interpolate toward the nearest neighbours") {
  Eigen::MatrixXd x(30, 1);
  Eigen::VectorXd y(30);
  for (Eigen::Index i = 0; i < 30; ++i) {
    x(i, 0) = static_cast<double>(i) / 29.0;
    y(i) = x(i, 0) < 0.5 ? 0.0 : 1.0;
  }
  NuisanceModel model = fit_nuisance_kernel_regression(x, y, 1, false);
  Eigen::RowVectorXd lo(1), hi(1);
  lo << 0.05;
  hi << 0.95;
  CHECK(model.predict(lo) < 0.2);
  CHECK(model.predict(hi) > 0.8);
  CHECK(model.predict(lo) > 0.0);
  CHECK(model.predict(hi) < 1.0);

  Predictor fn = model.predictor();
  CHECK(fn(lo) == model.predict(lo));
}

TEST_CASE("kernel regression validation") {
  Eigen::MatrixXd x(0, 2);
  Eigen::VectorXd y(0);
  CHECK_THROWS_AS(fit_nuisance_kernel_regression(x, y, 1, false),
                  InsufficientData);
  Eigen::MatrixXd x2(3, 2);
  x2.setZero();
  Eigen::VectorXd y2(2);
  y2.setZero();
  CHECK_THROWS_AS(fit_nuisance_kernel_regression(x2, y2, 1, false),
                  DimensionMismatch);
  Eigen::VectorXd y3(3);
  y3.setZero();
  CHECK_THROWS_AS(fit_nuisance_kernel_regression(x2, y3, 0, false),
                  InvalidArgument);
  CHECK_THROWS_AS(fit_nuisance_kernel_regression(x2, y3, 3, false),
                  InvalidArgument);
}

TEST_CASE("missing-label weights follow the augmented inverse formula") {
  Dataset d = missing_label_fixture();
  WeightPair w = weights_missing_labels(d, constant(0.5), constant(0.3),
                                        constant(0.7));
  // labeled A=+1: 1/pi - aug*p = 2 - 0.3
  CHECK(w.w_plus(0) == doctest::Approx(1.7).epsilon(1e-15));
  CHECK(w.w_minus(0) == doctest::Approx(-0.7).epsilon(1e-15));
  // labeled A=-1 picks up only the augmentation on the plus arm
  CHECK(w.w_plus(1) == doctest::Approx(-0.3).epsilon(1e-15));
  CHECK(w.w_minus(1) == doctest::Approx(1.3).epsilon(1e-15));
  // unlabeled rows fall back to the label model
  CHECK(w.w_plus(2) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(w.w_minus(2) == doctest::Approx(0.7).epsilon(1e-15));

  SUBCASE("certain observation drops the augmentation") {
    Dataset all = missing_label_fixture();
    (*all.R).setOnes();
    WeightPair u = weights_missing_labels(all, constant(1.0), constant(0.3),
                                          constant(0.7));
    CHECK(u.w_plus(0) == 1.0);
    CHECK(u.w_minus(0) == 0.0);
    CHECK(u.w_minus(1) == 1.0);
  }

  SUBCASE("violations raise typed errors") {
    CHECK_THROWS_AS(weights_missing_labels(d, constant(0.005), constant(0.3),
                                           constant(0.7)),
                    OverlapViolation);
    CHECK_THROWS_AS(weights_missing_labels(d, constant(1.2), constant(0.3),
                                           constant(0.7)),
                    InvalidArgument);
    CHECK_THROWS_AS(weights_missing_labels(d, constant(0.5), constant(1.5),
                                           constant(0.7)),
                    InvalidArgument);
    CHECK_THROWS_AS(weights_missing_labels(d, constant(0.5), constant(0.3),
                                           constant(0.7), 0.01, 1.0),
                    InvalidWeights);
    CHECK_THROWS_AS(weights_missing_labels(d, constant(0.5), constant(0.3),
                                           constant(0.7), 0.0),
                    InvalidArgument);
    Dataset no_r = d;
    no_r.R.reset();
    CHECK_THROWS_AS(weights_missing_labels(no_r, constant(0.5), constant(0.3),
                                           constant(0.7)),
                    InvalidArgument);
  }
}

TEST_CASE("treatment weights follow the augmented outcome formula") {
  Dataset d;
  d.X.resize(2, 2);
  d.X << 0.2, -0.1, 0.5, 0.4;
  d.A.resize(2);
  d.A << 1.0, -1.0;
  d.Y = Eigen::VectorXd(2);
  *d.Y << 2.0, -1.0;

  WeightPair w = weights_itr(d, constant(0.5), constant(0.5), constant(1.0),
                             constant(-2.0));
  CHECK(w.w_plus(0) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(w.w_minus(0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(w.w_plus(1) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(w.w_minus(1) == doctest::Approx(-4.0).epsilon(1e-15));

  SUBCASE("violations raise typed errors") {
    CHECK_THROWS_AS(weights_itr(d, constant(0.005), constant(0.5),
                                constant(1.0), constant(-2.0)),
                    OverlapViolation);
    CHECK_THROWS_AS(weights_itr(d, constant(0.999), constant(0.5),
                                constant(1.0), constant(-2.0)),
                    OverlapViolation);
    CHECK_THROWS_AS(weights_itr(d, constant(0.5), constant(0.5), constant(1.0),
                                constant(-2.0), 0.6),
                    InvalidArgument);
    Dataset no_y = d;
    no_y.Y.reset();
    CHECK_THROWS_AS(weights_itr(no_y, constant(0.5), constant(0.5),
                                constant(1.0), constant(-2.0)),
                    InvalidArgument);
  }
}

TEST_CASE("application weights are finite out of sample") {
  SUBCASE("missing labels") {
    Dataset train = synthetic_missing(60, 3, 31);
    Dataset eval = synthetic_missing(20, 3, 32);
    Algorithm2Config config;
    WeightPair w = build_application_weights(eval, train,
                                             Application::MissingLabels, config);
    REQUIRE(w.w_plus.size() == 20);
    CHECK(w.w_plus.allFinite());
    CHECK(w.w_minus.allFinite());

    Dataset no_r = train;
    no_r.R.reset();
    CHECK_THROWS_AS(build_application_weights(eval, no_r,
                                              Application::MissingLabels, config),
                    InvalidArgument);
    Dataset unlabeled = train;
    unlabeled.R->setZero();
    CHECK_THROWS_AS(build_application_weights(eval, unlabeled,
                                              Application::MissingLabels, config),
                    InsufficientData);
  }

  SUBCASE("treatment rules") {
    Dataset train = synthetic_itr(60, 3, 33);
    Dataset eval = synthetic_itr(20, 3, 34);
    Algorithm2Config config;
    WeightPair w =
        build_application_weights(eval, train, Application::Itr, config);
    CHECK(w.w_plus.allFinite());
    CHECK(w.w_minus.allFinite());

    Dataset one_arm = train;
    one_arm.A.setOnes();
    CHECK_THROWS_AS(
        build_application_weights(eval, one_arm, Application::Itr, config),
        InsufficientData);
  }
}

TEST_CASE("cross-fitted driver aggregates its halves exactly") {
  Dataset d = synthetic_missing(120, 4, 35);
  PiecewiseLinearLoss hinge = PiecewiseLinearLoss::hinge();
  Algorithm2Config config;
  config.inference.seed = 9;
  config.inference.fixed_lambda = 0.1;
  config.inference.fixed_mu = 0.05;
  std::vector<Eigen::Index> targets{0, 2};

  Algorithm2Diagnostics diag;
  std::vector<CoordinateInference> recs = run_algorithm2(
      d, Application::MissingLabels, hinge, config, targets, 0.05, &diag);
  REQUIRE(recs.size() == 2);

  for (int h = 0; h < 2; ++h) {
    const auto& half = diag.halves[static_cast<std::size_t>(h)];
    CHECK(half.rows.size() == 60);
    CHECK(half.weighted.has_weights());
    REQUIRE(half.analyses.size() == 2);
  }

  for (std::size_t i = 0; i < targets.size(); ++i) {
    const CoordinateAnalysis& a = diag.halves[0].analyses[i];
    const CoordinateAnalysis& b = diag.halves[1].analyses[i];
    CoordinateAnalysis agg;
    agg.coordinate = targets[i];
    agg.score_null = 0.5 * (a.score_null + b.score_null);
    agg.score_free = 0.5 * (a.score_free + b.score_free);
    agg.sigma_hat =
        std::sqrt(0.5 * (a.sigma_hat * a.sigma_hat + b.sigma_hat * b.sigma_hat));
    agg.info_hat = 0.5 * (a.info_hat + b.info_hat);
    agg.beta_bar = 0.5 * (a.beta_bar + b.beta_bar);
    CoordinateInference redo = make_inference_record(
        agg, d.n(), 0.05, config.inference.info_floor, true);
    CHECK(same_record(recs[i], redo));
    CHECK(recs[i].coordinate == targets[i]);
    CHECK(recs[i].p_value >= 0.0);
    CHECK(recs[i].p_value <= 1.0);
  }

  SUBCASE("determinism and parallel invariance") {
    std::vector<CoordinateInference> again = run_algorithm2(
        d, Application::MissingLabels, hinge, config, targets, 0.05);
    std::vector<CoordinateInference> parallel = run_algorithm2(
        d, Application::MissingLabels, hinge, config, targets, 0.05, nullptr, 3);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      CHECK(same_record(recs[i], again[i]));
      CHECK(same_record(recs[i], parallel[i]));
    }
  }

  SUBCASE("input validation") {
    CHECK(run_algorithm2(d, Application::MissingLabels, hinge, config, {}, 0.05)
              .empty());
    CHECK_THROWS_AS(run_algorithm2(d, Application::MissingLabels, hinge, config,
                                   {4}, 0.05),
                    InvalidArgument);
    Dataset no_r = d;
    no_r.R.reset();
    CHECK_THROWS_AS(run_algorithm2(no_r, Application::MissingLabels, hinge,
                                   config, targets, 0.05),
                    InvalidArgument);
    Algorithm2Config strict = config;
    strict.min_half = 100;
    CHECK_THROWS_AS(run_algorithm2(d, Application::MissingLabels, hinge, strict,
                                   targets, 0.05),
                    HalfTooSmall);
  }
}

TEST_CASE("cross-fitted driver handles treatment rules") {
  Dataset d = synthetic_itr(120, 4, 36);
  PiecewiseLinearLoss hinge = PiecewiseLinearLoss::hinge();
  Algorithm2Config config;
  config.inference.seed = 10;
  config.inference.fixed_mu = 0.05;
  std::vector<CoordinateInference> recs =
      run_algorithm2(d, Application::Itr, hinge, config, {1}, 0.05);
  REQUIRE(recs.size() == 1);
  CHECK(std::isfinite(recs[0].p_value));
  CHECK(recs[0].ci_low < recs[0].ci_high);

  Dataset no_y = d;
  no_y.Y.reset();
  CHECK_THROWS_AS(
      run_algorithm2(no_y, Application::Itr, hinge, config, {1}, 0.05),
      InvalidArgument);
}
