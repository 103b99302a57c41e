#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "kdscore/csv_io.hpp"
#include "kdscore/dataset.hpp"
#include "kdscore/errors.hpp"

using namespace kdscore;

namespace {

Dataset tiny_dataset() {
  Dataset d;
  d.X.resize(3, 2);
  d.X << 1.0, 2.0, -0.5, 0.25, 3.0, -1.0;
  d.A.resize(3);
  d.A << 1.0, -1.0, 1.0;
  return d;
}

}  // namespace

TEST_CASE("dataset validation") {
  Dataset d = tiny_dataset();
  CHECK_NOTHROW(d.validate());

  SUBCASE("labels must be plus or minus one") {
    d.A(1) = 0.0;
    CHECK_THROWS_AS(d.validate(), InvalidArgument);
  }
  SUBCASE("covariates must be finite") {
    d.X(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(d.validate(), InvalidArgument);
  }
  SUBCASE("at least two rows") {
    d.X.conservativeResize(1, 2);
    d.A.conservativeResize(1);
    CHECK_THROWS_AS(d.validate(), InvalidArgument);
  }
  SUBCASE("weights come in pairs") {
    d.w_plus = Eigen::VectorXd::Ones(3);
    CHECK_THROWS_AS(d.validate(), InvalidWeights);
    d.w_minus = Eigen::VectorXd::Ones(3);
    CHECK_NOTHROW(d.validate());
  }
  SUBCASE("indicator column values") {
    d.R = Eigen::VectorXd::Ones(3);
    CHECK_NOTHROW(d.validate());
    (*d.R)(2) = 0.5;
    CHECK_THROWS_AS(d.validate(), InvalidArgument);
  }
}

TEST_CASE("effective weights fall back to label indicators") {
  Dataset d = tiny_dataset();
  Eigen::VectorXd wp = d.effective_w_plus();
  Eigen::VectorXd wm = d.effective_w_minus();
  CHECK(wp(0) == 1.0);
  CHECK(wp(1) == 0.0);
  CHECK(wm(1) == 1.0);
  CHECK(wm(2) == 0.0);

  d.w_plus = Eigen::VectorXd::Constant(3, 0.7);
  d.w_minus = Eigen::VectorXd::Constant(3, -0.2);
  CHECK(d.effective_w_plus()(1) == 0.7);
  CHECK(d.effective_w_minus()(0) == -0.2);
  CHECK(d.has_weights());
}

TEST_CASE("dataset subset keeps every field aligned") {
  Dataset d = tiny_dataset();
  d.Y = Eigen::VectorXd(3);
  *d.Y << 10.0, 20.0, 30.0;
  d.R = Eigen::VectorXd(3);
  *d.R << 1.0, 0.0, 1.0;
  Dataset s = d.subset({2, 0});
  CHECK(s.n() == 2);
  CHECK(s.X(0, 0) == 3.0);
  CHECK(s.X(1, 1) == 2.0);
  CHECK(s.A(0) == 1.0);
  CHECK((*s.Y)(0) == 30.0);
  CHECK((*s.R)(1) == 1.0);
  CHECK_THROWS_AS(d.subset({5}), DimensionMismatch);
}

TEST_CASE("dataset csv reader maps reserved and covariate columns") {
  std::istringstream in(
      "x1,A,Y,x2,R\n"
      "0.5,1,2.25,-1,1\n"
      "1.5,-1,0.125,4,0\n"
      "2.5,1,-3,9,1\n");
  NamedDataset nd = read_dataset_csv(in, "mem.csv");
  CHECK(nd.names == std::vector<std::string>{"x1", "x2"});
  CHECK(nd.data.n() == 3);
  CHECK(nd.data.p() == 2);
  CHECK(nd.data.X(1, 0) == 1.5);
  CHECK(nd.data.X(2, 1) == 9.0);
  CHECK(nd.data.A(1) == -1.0);
  CHECK((*nd.data.Y)(0) == 2.25);
  CHECK((*nd.data.R)(1) == 0.0);
}

TEST_CASE("dataset csv reader reports precise errors") {
  auto expect_throw = [](const std::string& text, const std::string& needle) {
    std::istringstream in(text);
    try {
      read_dataset_csv(in, "f.csv");
      FAIL_CHECK("expected ParseError for " << needle);
    } catch (const ParseError& e) {
      CAPTURE(e.what());
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_throw("x1,x2\n1,2\n3,4\n", "'A'");
  expect_throw("A\n1\n-1\n", "no covariate columns");
  expect_throw("A,x1\n1,2\n-1,oops\n", "line 3");
  expect_throw("A,x1\n1,2\n-1,oops\n", "'x1'");
  expect_throw("A,x1\n2,1\n-1,1\n", "must be -1 or 1");
  expect_throw("A,x1,R\n1,1,1\n-1,1,2\n", "'R'");
  expect_throw("A,x1\n1,2,9\n-1,3\n", "expected 2 fields, got 3");
  expect_throw("A,x1\n1,2\n", "at least two data rows");
  expect_throw("A,A,x1\n1,1,2\n", "duplicate column 'A'");
  expect_throw("A,x1\n1,inf\n-1,2\n", "non-finite");
  expect_throw("", "empty file");
}

TEST_CASE("fit csv round trip is exact") {
  FitOutput out;
  out.names = {"a", "b 2", "c"};
  out.fit.beta = Eigen::VectorXd(3);
  out.fit.beta << 0.1, -1.0 / 3.0, 0.0;
  out.fit.lambda = 0.05;
  out.fit.objective = 1.2345678901234567e-3;
  out.fit.kkt_residual = 9.87e-7;
  out.fit.iterations = 321;
  out.fit.converged = true;

  std::ostringstream os;
  write_fit_csv(os, out);
  std::string text = os.str();
  CHECK(text.rfind(kSchemaLine, 0) == 0);
  CHECK(text.find("#sparsity=2") != std::string::npos);

  std::istringstream is(text);
  FitOutput back = read_fit_csv(is, "roundtrip");
  CHECK(back.names == out.names);
  REQUIRE(back.fit.beta.size() == 3);
  for (int j = 0; j < 3; ++j) {
    CHECK(back.fit.beta(j) == out.fit.beta(j));
  }
  CHECK(back.fit.lambda == out.fit.lambda);
  CHECK(back.fit.objective == out.fit.objective);
  CHECK(back.fit.kkt_residual == out.fit.kkt_residual);
  CHECK(back.fit.iterations == out.fit.iterations);
  CHECK(back.fit.converged == out.fit.converged);
}

TEST_CASE("test csv round trip is exact") {
  TestOutput out;
  for (int i = 0; i < 2; ++i) {
    CoordinateInference r;
    r.coordinate = i == 0 ? 4 : 7;
    r.score = i == 0 ? 0.123456789123456789 : -3e-12;
    r.sigma_hat = 1.7;
    r.info_hat = 0.31;
    r.beta_bar = -0.25;
    r.beta_tilde = -0.26;
    r.z = 2.5;
    r.p_value = 0.0124;
    r.ci_low = -0.5;
    r.ci_high = 0.1;
    r.alpha = 0.05;
    out.records.push_back(r);
  }
  out.names = {"x5", "x8"};

  SUBCASE("without multiplicity column") {
    std::ostringstream os;
    write_test_csv(os, out);
    std::istringstream is(os.str());
    TestOutput back = read_test_csv(is, "roundtrip");
    REQUIRE(back.records.size() == 2);
    CHECK(back.names == out.names);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(back.records[i].coordinate == out.records[i].coordinate);
      CHECK(back.records[i].score == out.records[i].score);
      CHECK(back.records[i].sigma_hat == out.records[i].sigma_hat);
      CHECK(back.records[i].info_hat == out.records[i].info_hat);
      CHECK(back.records[i].beta_bar == out.records[i].beta_bar);
      CHECK(back.records[i].beta_tilde == out.records[i].beta_tilde);
      CHECK(back.records[i].z == out.records[i].z);
      CHECK(back.records[i].p_value == out.records[i].p_value);
      CHECK(back.records[i].ci_low == out.records[i].ci_low);
      CHECK(back.records[i].ci_high == out.records[i].ci_high);
      CHECK(back.records[i].alpha == out.records[i].alpha);
    }
  }

  SUBCASE("with multiplicity column") {
    out.bh_q = 0.1;
    out.reject_bh = {1, 0};
    std::ostringstream os;
    write_test_csv(os, out);
    CHECK(os.str().find("reject_bh") != std::string::npos);
    std::istringstream is(os.str());
    TestOutput back = read_test_csv(is, "roundtrip");
    CHECK(back.bh_q == 0.1);
    CHECK(back.reject_bh == std::vector<int>{1, 0});
  }
}

TEST_CASE("format_double survives awkward values") {
  for (double v : {0.1, -0.0, 1e-300, 123456789.123456789, 2.2250738585072014e-308}) {
    std::string s = format_double(v);
    double back = parse_double(s, "fmt", 1, "v");
    CHECK(back == v);
  }
}

TEST_CASE("result files reject a wrong schema line") {
  std::istringstream is("#schema=other/9\nname,beta\n");
  CHECK_THROWS_AS(read_fit_csv(is, "bad"), ParseError);
}

TEST_CASE("names with commas are quoted on output") {
  FitOutput out;
  out.names = {"x,1"};
  out.fit.beta = Eigen::VectorXd::Zero(1);
  std::ostringstream os;
  write_fit_csv(os, out);
  CHECK(os.str().find("\"x,1\",0") != std::string::npos);
}
