#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace kdscore {

// Sample container shared by the solver, the inference driver, and the
// nuisance machinery.  A is the +/-1 arm label.  Y (outcomes) and R
// (observation indicators) are optional and only consulted by the
// applications that need them.  w_plus / w_minus are per-sample weights
// attached to the two arms of the surrogate risk; when absent the
// indicator weights 1{A=+1}, 1{A=-1} are implied, which reproduces the
// plain classification risk (1/n) sum phi(A_i x_i' beta).
struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd A;
  std::optional<Eigen::VectorXd> Y;
  std::optional<Eigen::VectorXd> R;
  std::optional<Eigen::VectorXd> w_plus;
  std::optional<Eigen::VectorXd> w_minus;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }

  bool has_weights() const { return w_plus.has_value(); }

  // Materialised arm weights (implied indicators when none are stored).
  Eigen::VectorXd effective_w_plus() const;
  Eigen::VectorXd effective_w_minus() const;

  // Throws InputError subclasses when any invariant fails: X finite,
  // labels exactly +/-1, R binary, matching lengths, finite weights
  // supplied in pairs.
  void validate() const;

  Dataset subset(const std::vector<Eigen::Index>& rows) const;
};

}  // namespace kdscore
