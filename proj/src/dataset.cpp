#include "kdscore/dataset.hpp"

#include <cmath>

#include "kdscore/errors.hpp"

namespace kdscore {

Eigen::VectorXd Dataset::effective_w_plus() const {
  if (w_plus) return *w_plus;
  Eigen::VectorXd w(A.size());
  for (Eigen::Index i = 0; i < A.size(); ++i) w(i) = A(i) > 0.0 ? 1.0 : 0.0;
  return w;
}

Eigen::VectorXd Dataset::effective_w_minus() const {
  if (w_minus) return *w_minus;
  Eigen::VectorXd w(A.size());
  for (Eigen::Index i = 0; i < A.size(); ++i) w(i) = A(i) < 0.0 ? 1.0 : 0.0;
  return w;
}

void Dataset::validate() const {
  if (n() < 2) throw InvalidArgument("dataset: need at least two samples");
  if (p() < 1) throw InvalidArgument("dataset: need at least one covariate");
  if (A.size() != n()) throw DimensionMismatch("dataset: label length != n");
  if (!X.allFinite()) throw InvalidArgument("dataset: covariates must be finite");
  for (Eigen::Index i = 0; i < n(); ++i) {
    if (A(i) != 1.0 && A(i) != -1.0) {
      throw InvalidArgument("dataset: labels must be exactly +1 or -1");
    }
  }
  if (Y && Y->size() != n()) throw DimensionMismatch("dataset: outcome length != n");
  if (Y && !Y->allFinite()) throw InvalidArgument("dataset: outcomes must be finite");
  if (R) {
    if (R->size() != n()) throw DimensionMismatch("dataset: indicator length != n");
    for (Eigen::Index i = 0; i < n(); ++i) {
      if ((*R)(i) != 0.0 && (*R)(i) != 1.0) {
        throw InvalidArgument("dataset: observation indicators must be 0 or 1");
      }
    }
  }
  if (w_plus.has_value() != w_minus.has_value()) {
    throw InvalidWeights("dataset: arm weights must be supplied together");
  }
  if (w_plus) {
    if (w_plus->size() != n() || w_minus->size() != n()) {
      throw DimensionMismatch("dataset: weight length != n");
    }
    if (!w_plus->allFinite() || !w_minus->allFinite()) {
      throw InvalidWeights("dataset: weights must be finite");
    }
  }
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& rows) const {
  Dataset out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.X.resize(m, p());
  out.A.resize(m);
  if (Y) out.Y.emplace(m);
  if (R) out.R.emplace(m);
  if (w_plus) out.w_plus.emplace(m);
  if (w_minus) out.w_minus.emplace(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    Eigen::Index i = rows[static_cast<std::size_t>(k)];
    if (i < 0 || i >= n()) throw DimensionMismatch("dataset subset: row out of range");
    out.X.row(k) = X.row(i);
    out.A(k) = A(i);
    if (Y) (*out.Y)(k) = (*Y)(i);
    if (R) (*out.R)(k) = (*R)(i);
    if (w_plus) (*out.w_plus)(k) = (*w_plus)(i);
    if (w_minus) (*out.w_minus)(k) = (*w_minus)(i);
  }
  return out;
}

}  // namespace kdscore
