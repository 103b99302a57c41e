#include "kdscore/loss_kernel.hpp"

#include <cmath>

#include "kdscore/errors.hpp"

namespace kdscore {

namespace {

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// Antiderivative of the quintic transition polynomial, zero at the
// origin: P(s) = s/2 + (15/16)(s^2/2 - s^4/6 + s^6/30).
double quintic_poly_antideriv(double s) {
  double s2 = s * s;
  return 0.5 * s + (15.0 / 16.0) * s2 * (0.5 - s2 / 6.0 + s2 * s2 / 30.0);
}

constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934;

}  // namespace

PiecewiseLinearLoss::PiecewiseLinearLoss(std::vector<double> knots,
                                         double base_slope,
                                         std::vector<double> jumps,
                                         std::pair<double, double> anchor)
    : knots_(std::move(knots)),
      base_slope_(base_slope),
      jumps_(std::move(jumps)),
      anchor_(anchor) {
  if (knots_.empty()) {
    throw InvalidArgument("piecewise loss: at least one knot required");
  }
  if (knots_.size() != jumps_.size()) {
    throw InvalidArgument("piecewise loss: one jump per knot required");
  }
  if (!all_finite(knots_) || !all_finite(jumps_) || !std::isfinite(base_slope_) ||
      !std::isfinite(anchor_.first) || !std::isfinite(anchor_.second)) {
    throw InvalidArgument("piecewise loss: parameters must be finite");
  }
  for (std::size_t j = 1; j < knots_.size(); ++j) {
    if (!(knots_[j] > knots_[j - 1])) {
      throw InvalidArgument("piecewise loss: knots must be strictly increasing");
    }
  }
  for (double d : jumps_) {
    if (!(d > 0.0)) {
      throw InvalidArgument("piecewise loss: jumps must be strictly positive");
    }
  }
}

PiecewiseLinearLoss::PiecewiseLinearLoss(std::vector<double> knots,
                                         double base_slope,
                                         std::vector<double> jumps)
    : PiecewiseLinearLoss(
          knots, base_slope, jumps,
          {knots.empty() ? 0.0 : knots.back(), 0.0}) {}

PiecewiseLinearLoss PiecewiseLinearLoss::hinge() {
  return PiecewiseLinearLoss({1.0}, -1.0, {1.0}, {1.0, 0.0});
}

double PiecewiseLinearLoss::value(double t) const {
  // Integrate the step derivative from the anchor:
  // F(t) = base*t + sum_j jump_j * (t - knot_j)_+ is an antiderivative.
  auto ramp = [&](double s) {
    double f = base_slope_ * s;
    for (std::size_t j = 0; j < knots_.size(); ++j) {
      double d = s - knots_[j];
      if (d > 0.0) f += jumps_[j] * d;
    }
    return f;
  };
  return anchor_.second + ramp(t) - ramp(anchor_.first);
}

double PiecewiseLinearLoss::derivative(double t) const {
  double d = base_slope_;
  for (std::size_t j = 0; j < knots_.size(); ++j) {
    if (t >= knots_[j]) d += jumps_[j];
  }
  return d;
}

double PiecewiseLinearLoss::total_jump() const {
  double s = 0.0;
  for (double d : jumps_) s += d;
  return s;
}

double quintic_kernel(double t) {
  if (t <= -1.0) return 0.0;
  if (t >= 1.0) return 1.0;
  double t2 = t * t;
  return 0.5 + (15.0 / 16.0) * t * (1.0 - t2 * (2.0 / 3.0) + t2 * t2 * 0.2);
}

double quintic_kernel_deriv(double t) {
  if (t <= -1.0 || t >= 1.0) return 0.0;
  double u = 1.0 - t * t;
  return (15.0 / 16.0) * u * u;
}

double quintic_kernel_antideriv(double t) {
  if (t <= -1.0) return 0.0;
  if (t >= 1.0) return t;  // antideriv(1) = 1, then unit slope
  return quintic_poly_antideriv(t) - quintic_poly_antideriv(-1.0);
}

LocalKernel quintic_local_kernel() {
  return LocalKernel{[](double t) { return quintic_kernel(t); },
                     [](double t) { return quintic_kernel_deriv(t); }};
}

double gaussian_density(double t) { return kInvSqrt2Pi * std::exp(-0.5 * t * t); }

GlobalKernel gaussian_global_kernel() {
  return GlobalKernel{[](double t) { return gaussian_density(t); }};
}

double smoothed_gradient(const PiecewiseLinearLoss& loss,
                         const LocalKernel& kernel, double h_lo, double t) {
  if (!(h_lo > 0.0)) throw InvalidArgument("smoothed_gradient: h_lo must be positive");
  double g = loss.base_slope();
  const auto& knots = loss.knots();
  const auto& jumps = loss.jumps();
  for (std::size_t j = 0; j < knots.size(); ++j) {
    g += jumps[j] * kernel.h((t - knots[j]) / h_lo);
  }
  return g;
}

double smoothed_value(const PiecewiseLinearLoss& loss,
                      const LocalKernel& /*kernel*/, double h_lo, double t) {
  if (!(h_lo > 0.0)) throw InvalidArgument("smoothed_value: h_lo must be positive");
  // Uses the quintic antiderivative directly: smoothing is a solver
  // detail and the shipped local kernel is the quintic one.  Written as
  // the exact value plus the per-knot smoothing gap h (HA(u) - u_+): the
  // gap is nonnegative, vanishes beyond one bandwidth from the knot, and
  // grows with h, which pins the constant of integration.
  const auto& knots = loss.knots();
  const auto& jumps = loss.jumps();
  double f = loss.value(t);
  for (std::size_t j = 0; j < knots.size(); ++j) {
    double u = (t - knots[j]) / h_lo;
    if (u <= -1.0 || u >= 1.0) continue;
    f += jumps[j] * h_lo * (quintic_kernel_antideriv(u) - std::max(u, 0.0));
  }
  return f;
}

double hessian_weight(const PiecewiseLinearLoss& loss,
                      const GlobalKernel& kernel, double h_gb, double t) {
  if (!(h_gb > 0.0)) throw InvalidArgument("hessian_weight: h_gb must be positive");
  double w = 0.0;
  const auto& knots = loss.knots();
  const auto& jumps = loss.jumps();
  for (std::size_t j = 0; j < knots.size(); ++j) {
    w += jumps[j] * kernel.density((knots[j] - t) / h_gb) / h_gb;
  }
  return w;
}

BandwidthConfig BandwidthConfig::fixed(double h_lo, double h_gb) {
  if (!(h_lo > 0.0) || !(h_gb > 0.0)) {
    throw InvalidArgument("bandwidths must be strictly positive");
  }
  BandwidthConfig c;
  c.automatic = false;
  c.h_lo = h_lo;
  c.h_gb = h_gb;
  return c;
}

double BandwidthConfig::resolve_h_lo(std::size_t n) const {
  if (!automatic) return h_lo;
  if (n < 2) throw InvalidArgument("automatic bandwidth needs n >= 2");
  double nn = static_cast<double>(n);
  return 1.0 / std::sqrt(nn * std::log(nn));
}

double BandwidthConfig::resolve_h_gb(std::size_t n, std::size_t p) const {
  if (!automatic) return h_gb;
  if (n < 2 || p < 2) throw InvalidArgument("automatic bandwidth needs n, p >= 2");
  return std::pow(std::log(static_cast<double>(p)) / static_cast<double>(n), 0.2);
}

}  // namespace kdscore
