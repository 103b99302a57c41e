#include <cmath>
#include <vector>

#include "doctest.h"
#include "kdscore/dataset.hpp"
#include "kdscore/errors.hpp"
#include "kdscore/inference.hpp"
#include "kdscore/loss_kernel.hpp"
#include "kdscore/solver.hpp"
#include "kdscore/stats.hpp"

using namespace kdscore;

namespace {

struct TinyScoreCase {
  Dataset data;
  std::vector<FoldFit> folds;
  Eigen::VectorXd w;
};

TinyScoreCase tiny_case() {
  TinyScoreCase c;
  c.data.X.resize(4, 2);
  c.data.X << 1.0, 0.5, -0.5, 1.0, 2.0, -1.0, 0.25, 0.75;
  c.data.A.resize(4);
  c.data.A << 1.0, -1.0, 1.0, -1.0;
  c.folds.resize(2);
  c.folds[0].indices = {0, 1};
  c.folds[0].beta = Eigen::VectorXd(2);
  c.folds[0].beta << 0.8, -0.2;
  c.folds[1].indices = {2, 3};
  c.folds[1].beta = Eigen::VectorXd(2);
  c.folds[1].beta << 0.1, 0.4;
  c.w = Eigen::VectorXd(1);
  c.w << 0.5;
  return c;
}

Dataset random_dataset(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  RngStream rng(seed, 0x1AFE);
  Dataset d;
  d.X.resize(n, p);
  d.A.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) d.X(i, j) = rng.normal();
    double sig = d.X(i, 0) - 0.7 * d.X(i, 1) + rng.normal();
    d.A(i) = sig >= 0.0 ? 1.0 : -1.0;
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

TEST_CASE("fold plans are balanced partitions") {
  FoldPlan plan = make_fold_plan(11, 3, 5);
  REQUIRE(plan.assignment.size() == 11);
  auto folds = plan.folds();
  REQUIRE(folds.size() == 3);
  std::size_t total = 0;
  for (const auto& f : folds) {
    CHECK(f.size() >= 3);
    CHECK(f.size() <= 4);
    total += f.size();
  }
  CHECK(total == 11);

  FoldPlan again = make_fold_plan(11, 3, 5);
  CHECK(again.assignment == plan.assignment);
  CHECK_THROWS_AS(make_fold_plan(11, 1, 5), InvalidK);
  CHECK_THROWS_AS(make_fold_plan(3, 4, 5), InvalidK);
}

TEST_CASE("decorrelated score matches a direct per-sample computation") {
  TinyScoreCase c = tiny_case();
  PiecewiseLinearLoss hinge = PiecewiseLinearLoss::hinge();
  LocalKernel local = quintic_local_kernel();
  const double h_lo = 0.2;

  auto expected = [&](bool null_at_zero, double* sigma) {
    double s = 0.0, var = 0.0;
    for (Eigen::Index i = 0; i < 4; ++i) {
      std::size_t k = i < 2 ? 0 : 1;
      const Eigen::VectorXd& beta = c.folds[k].beta;
      double resid = c.data.X(i, 0) - c.w(0) * c.data.X(i, 1);
      double m_free = c.data.X.row(i).dot(beta);
      double m_eval = null_at_zero ? m_free - c.data.X(i, 0) * beta(0) : m_free;
      auto psi = [&](double m) {
        double g = c.data.A(i) > 0
                       ? smoothed_gradient(hinge, local, h_lo, m)
                       : -smoothed_gradient(hinge, local, h_lo, -m);
        return g * resid;
      };
      s += 0.25 * psi(m_eval);
      var += 0.25 * psi(m_free) * psi(m_free);
    }
    *sigma = std::sqrt(var);
    return s;
  };

  for (bool null_at_zero : {true, false}) {
    CAPTURE(null_at_zero);
    double sigma = 0.0;
    double want = expected(null_at_zero, &sigma);
    ScoreResult got = decorrelated_score(c.data, c.folds, c.w, hinge, local,
                                         h_lo, 0, null_at_zero);
    CHECK(got.score == doctest::Approx(want).epsilon(1e-14));
    CHECK(got.sigma_hat == doctest::Approx(sigma).epsilon(1e-14));
  }
}

TEST_CASE("weighted scores use raw arm weights without flooring") {
  TinyScoreCase c = tiny_case();
  c.data.w_plus = Eigen::VectorXd(4);
  *c.data.w_plus << 1.2, -0.4, 0.0, 0.6;
  c.data.w_minus = Eigen::VectorXd(4);
  *c.data.w_minus << 0.1, 1.5, 0.8, -0.2;
  PiecewiseLinearLoss hinge = PiecewiseLinearLoss::hinge();
  LocalKernel local = quintic_local_kernel();
  const double h_lo = 0.3;

  double s = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i) {
    std::size_t k = i < 2 ? 0 : 1;
    const Eigen::VectorXd& beta = c.folds[k].beta;
    double resid = c.data.X(i, 0) - c.w(0) * c.data.X(i, 1);
    double m = c.data.X.row(i).dot(beta) - c.data.X(i, 0) * beta(0);
    double g = (*c.data.w_plus)(i)*smoothed_gradient(hinge, local, h_lo, m) -
               (*c.data.w_minus)(i)*smoothed_gradient(hinge, local, h_lo, -m);
    s += 0.25 * g * resid;
  }
  ScoreResult got =
      decorrelated_score(c.data, c.folds, c.w, hinge, local, h_lo, 0, true);
  CHECK(got.score == doctest::Approx(s).epsilon(1e-14));
}

TEST_CASE("information estimate averages curvature times squared residuals") {
  TinyScoreCase c = tiny_case();
  PiecewiseLinearLoss hinge = PiecewiseLinearLoss::hinge();
  GlobalKernel global = gaussian_global_kernel();
  const double h_gb = 0.4;

  double info = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i) {
    std::size_t k = i < 2 ? 0 : 1;
    double resid = c.data.X(i, 0) - c.w(0) * c.data.X(i, 1);
    double m = c.data.X.row(i).dot(c.folds[k].beta);
    double omega = hessian_weight(hinge, global, h_gb, c.data.A(i) * m);
    info += 0.25 * omega * resid * resid;
  }
  double got = information_estimate(c.data, c.folds, c.w, hinge, global, h_gb, 0);
  CHECK(got == doctest::Approx(info).epsilon(1e-14));

  SUBCASE("raw weights enter the curvature, flooring does not") {
    c.data.w_plus = Eigen::VectorXd(4);
    *c.data.w_plus << 1.0, -0.5, 0.3, 0.0;
    c.data.w_minus = Eigen::VectorXd(4);
    *c.data.w_minus << 0.2, 0.9, -0.1, 1.1;
    double winfo = 0.0;
    for (Eigen::Index i = 0; i < 4; ++i) {
      std::size_t k = i < 2 ? 0 : 1;
      double resid = c.data.X(i, 0) - c.w(0) * c.data.X(i, 1);
      double m = c.data.X.row(i).dot(c.folds[k].beta);
      double omega =
          (*c.data.w_plus)(i)*hessian_weight(hinge, global, h_gb, m) +
          (*c.data.w_minus)(i)*hessian_weight(hinge, global, h_gb, -m);
      winfo += 0.25 * omega * resid * resid;
    }
    double wgot =
        information_estimate(c.data, c.folds, c.w, hinge, global, h_gb, 0);
    CHECK(wgot == doctest::Approx(winfo).epsilon(1e-14));
  }
}

TEST_CASE("fold order does not change score or information") {
  TinyScoreCase c = tiny_case();
  PiecewiseLinearLoss hinge = PiecewiseLinearLoss::hinge();
  LocalKernel local = quintic_local_kernel();
  GlobalKernel global = gaussian_global_kernel();
  ScoreResult s1 = decorrelated_score(c.data, c.folds, c.w, hinge, local, 0.2, 0, true);
  double i1 = information_estimate(c.data, c.folds, c.w, hinge, global, 0.4, 0);
  std::swap(c.folds[0], c.folds[1]);
  ScoreResult s2 = decorrelated_score(c.data, c.folds, c.w, hinge, local, 0.2, 0, true);
  double i2 = information_estimate(c.data, c.folds, c.w, hinge, global, 0.4, 0);
  CHECK(s1.score == s2.score);
  CHECK(s1.sigma_hat == s2.sigma_hat);
  CHECK(i1 == i2);
}

TEST_CASE("score and information validation") {
  TinyScoreCase c = tiny_case();
  PiecewiseLinearLoss hinge = PiecewiseLinearLoss::hinge();
  LocalKernel local = quintic_local_kernel();
  GlobalKernel global = gaussian_global_kernel();
  CHECK_THROWS_AS(decorrelated_score(c.data, c.folds, c.w, hinge, local, 0.0, 0, true),
                  InvalidArgument);
  CHECK_THROWS_AS(decorrelated_score(c.data, {}, c.w, hinge, local, 0.2, 0, true),
                  InvalidK);
  Eigen::VectorXd long_w(2);
  long_w.setZero();
  CHECK_THROWS_AS(decorrelated_score(c.data, c.folds, long_w, hinge, local, 0.2, 0, true),
                  DimensionMismatch);
  CHECK_THROWS_AS(decorrelated_score(c.data, c.folds, c.w, hinge, local, 0.2, 5, true),
                  DimensionMismatch);
  CHECK_THROWS_AS(information_estimate(c.data, c.folds, c.w, hinge, global, -1.0, 0),
                  InvalidArgument);
  c.folds[1].indices = {2};
  CHECK_THROWS_AS(decorrelated_score(c.data, c.folds, c.w, hinge, local, 0.2, 0, true),
                  DegenerateFolds);
}

TEST_CASE("record assembly follows the declared formulas") {
  CoordinateAnalysis a;
  a.coordinate = 3;
  a.score_null = 0.02;
  a.score_free = 0.05;
  a.sigma_hat = 1.3;
  a.info_hat = 0.5;
  a.beta_bar = 0.4;

  CoordinateInference rec = make_inference_record(a, 400, 0.05, 1e-8, true);
  CHECK(rec.coordinate == 3);
  CHECK(rec.score == 0.02);
  CHECK(rec.z == doctest::Approx(20.0 * 0.02 / 1.3).epsilon(1e-15));
  CHECK(rec.p_value == doctest::Approx(2.0 * (1.0 - normal_cdf(rec.z))).epsilon(1e-15));
  CHECK(rec.beta_tilde == doctest::Approx(0.4 - 0.05 / 0.5).epsilon(1e-15));
  double half = normal_quantile(0.975) * 1.3 / (20.0 * 0.5);
  CHECK(rec.ci_low == doctest::Approx(rec.beta_tilde - half).epsilon(1e-15));
  CHECK(rec.ci_high == doctest::Approx(rec.beta_tilde + half).epsilon(1e-15));
  CHECK(rec.alpha == 0.05);

  CoordinateInference free_rec = make_inference_record(a, 400, 0.05, 1e-8, false);
  CHECK(free_rec.score == 0.05);
  CHECK(free_rec.z == doctest::Approx(20.0 * 0.05 / 1.3).epsilon(1e-15));
  CHECK(free_rec.beta_tilde == rec.beta_tilde);
  CHECK(free_rec.ci_low == rec.ci_low);

  SUBCASE("intervals nest as alpha shrinks") {
    CoordinateInference wide = make_inference_record(a, 400, 0.01, 1e-8, true);
    CoordinateInference narrow = make_inference_record(a, 400, 0.20, 1e-8, true);
    CHECK(wide.ci_low < narrow.ci_low);
    CHECK(wide.ci_high > narrow.ci_high);
    CHECK(wide.ci_low + wide.ci_high ==
          doctest::Approx(narrow.ci_low + narrow.ci_high).epsilon(1e-12));
  }

  SUBCASE("degenerate inputs are refused") {
    CHECK_THROWS_AS(make_inference_record(a, 400, 0.0, 1e-8, true), InvalidArgument);
    CHECK_THROWS_AS(make_inference_record(a, 400, 1.0, 1e-8, true), InvalidArgument);
    CoordinateAnalysis flat = a;
    flat.sigma_hat = 0.0;
    CHECK_THROWS_AS(make_inference_record(flat, 400, 0.05, 1e-8, true),
                    DegenerateVariance);
    CoordinateAnalysis singular = a;
    singular.info_hat = 9e-9;
    CHECK_THROWS_AS(make_inference_record(singular, 400, 0.05, 1e-8, true),
                    NearSingularInformation);
  }
}

TEST_CASE("batched coordinate tests reuse one first stage") {
  Dataset d = random_dataset(120, 6, 21);
  PiecewiseLinearLoss hinge = PiecewiseLinearLoss::hinge();
  InferenceConfig config;
  config.seed = 11;
  config.fixed_lambda = 0.1;
  config.fixed_mu = 0.05;
  std::vector<Eigen::Index> targets{0, 2, 5};

  BatchDiagnostics diag;
  std::vector<CoordinateInference> recs =
      test_all_coordinates(d, hinge, config, targets, 0.05, &diag);
  REQUIRE(recs.size() == 3);
  REQUIRE(diag.analyses.size() == 3);
  REQUIRE(diag.stage.folds.size() == 2);

  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(recs[i].coordinate == targets[i]);
    CHECK(recs[i].p_value == doctest::Approx(2.0 * (1.0 - normal_cdf(recs[i].z))));
    CHECK(recs[i].ci_low < recs[i].ci_high);
    CoordinateInference redo =
        make_inference_record(diag.analyses[i], d.n(), 0.05, config.info_floor, true);
    CHECK(same_record(recs[i], redo));
  }

  SUBCASE("re-running and parallel scheduling change nothing") {
    std::vector<CoordinateInference> again =
        test_all_coordinates(d, hinge, config, targets, 0.05);
    std::vector<CoordinateInference> parallel =
        test_all_coordinates(d, hinge, config, targets, 0.05, nullptr, 3);
    REQUIRE(again.size() == 3);
    REQUIRE(parallel.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(same_record(recs[i], again[i]));
      CHECK(same_record(recs[i], parallel[i]));
    }
  }

  SUBCASE("single-coordinate entry points agree with the batch") {
    CoordinateInference one = test_coordinate(d, hinge, config, 2);
    CHECK(same_record(one, recs[1]));
    CoordinateInference est = debiased_estimate(d, hinge, config, 2, 0.05);
    CHECK(est.beta_tilde == recs[1].beta_tilde);
    CHECK(est.ci_low == recs[1].ci_low);
    CHECK(est.ci_high == recs[1].ci_high);
    CHECK(est.score == diag.analyses[1].score_free);
  }

  SUBCASE("bad targets are rejected, empty targets are a no-op") {
    CHECK(test_all_coordinates(d, hinge, config, {}, 0.05).empty());
    CHECK_THROWS_AS(test_all_coordinates(d, hinge, config, {6}, 0.05),
                    InvalidArgument);
    CHECK_THROWS_AS(test_all_coordinates(d, hinge, config, {-1}, 0.05),
                    InvalidArgument);
  }
}

TEST_CASE("the full cross-validated pipeline runs deterministically") {
  Dataset d = random_dataset(60, 4, 22);
  PiecewiseLinearLoss hinge = PiecewiseLinearLoss::hinge();
  InferenceConfig config;
  config.seed = 3;
  config.lambda_grid_size = 8;
  config.mu_grid_size = 8;
  config.lambda_cv_folds = 3;
  config.mu_cv_folds = 3;

  BatchDiagnostics diag;
  std::vector<CoordinateInference> recs =
      test_all_coordinates(d, hinge, config, {0, 1}, 0.05, &diag);
  REQUIRE(recs.size() == 2);
  for (bool ok : diag.stage.converged) CHECK(ok);
  for (const auto& r : recs) {
    CHECK(std::isfinite(r.p_value));
    CHECK(r.p_value >= 0.0);
    CHECK(r.p_value <= 1.0);
    CHECK(std::isfinite(r.ci_low));
    CHECK(std::isfinite(r.ci_high));
  }
  std::vector<CoordinateInference> again =
      test_all_coordinates(d, hinge, config, {0, 1}, 0.05, nullptr, 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(same_record(recs[i], again[i]));

  Dataset thin = random_dataset(10, 1, 23);
  CHECK_THROWS_AS(run_erm_stage(thin, hinge, config), InvalidArgument);
}
