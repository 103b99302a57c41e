#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

namespace kdscore {

// Convex piecewise-linear surrogate loss phi.  The derivative is a step
// function: base_slope below the first knot, plus the accumulated jumps
// at each knot passed.  Convexity requires every jump to be strictly
// positive.  The anchor point pins down the additive constant so that
// loss values (not just differences) are well defined.
class PiecewiseLinearLoss {
 public:
  PiecewiseLinearLoss(std::vector<double> knots, double base_slope,
                      std::vector<double> jumps,
                      std::pair<double, double> anchor);

  // Anchor defaults to value 0 at the last knot.
  PiecewiseLinearLoss(std::vector<double> knots, double base_slope,
                      std::vector<double> jumps);

  // phi(t) = max(0, 1 - t): one knot at 1, slopes -1 then 0.
  static PiecewiseLinearLoss hinge();

  double value(double t) const;

  // Right-continuous derivative (the choice at a knot is immaterial for
  // every integral this library computes).
  double derivative(double t) const;

  const std::vector<double>& knots() const { return knots_; }
  double base_slope() const { return base_slope_; }
  const std::vector<double>& jumps() const { return jumps_; }
  std::pair<double, double> anchor() const { return anchor_; }

  // Distance between the outermost knots; zero for a single knot.
  double knot_span() const { return knots_.back() - knots_.front(); }

  double total_jump() const;

 private:
  std::vector<double> knots_;
  double base_slope_;
  std::vector<double> jumps_;
  std::pair<double, double> anchor_;
};

// Smooth surrogate for the Heaviside step: H is 0 at and below -1, 1 at
// and above +1, nondecreasing in between.  dh is its derivative,
// supported on [-1,1].
struct LocalKernel {
  std::function<double(double)> h;
  std::function<double(double)> dh;
};

// Quintic polynomial transition 1/2 + (15/16)(t - 2t^3/3 + t^5/5) spliced
// with the constants outside [-1,1]; twice continuously differentiable at
// the splice points.
double quintic_kernel(double t);
double quintic_kernel_deriv(double t);

// Antiderivative of the quintic kernel with value 0 at -1, growing
// linearly with unit slope above +1; the solver integrates the smoothed
// slope through this.
double quintic_kernel_antideriv(double t);

LocalKernel quintic_local_kernel();

// Symmetric density integrating to one, used to weight curvature around
// the loss knots.
struct GlobalKernel {
  std::function<double(double)> density;
};

double gaussian_density(double t);

GlobalKernel gaussian_global_kernel();

// Kernel-smoothed derivative of the loss: each jump is fed through the
// transition kernel at scale h_lo instead of switching discontinuously.
double smoothed_gradient(const PiecewiseLinearLoss& loss,
                         const LocalKernel& kernel, double h_lo, double t);

// Exact antiderivative of smoothed_gradient, pinned so that it upper
// bounds loss.value pointwise, coincides with it at distance h_lo or more
// from every knot, and decreases monotonically toward it as h_lo shrinks.
// This is the objective the proximal solver minimises; the pinning
// constant never moves the minimiser, it only keeps objective traces
// comparable across bandwidth stages.
double smoothed_value(const PiecewiseLinearLoss& loss,
                      const LocalKernel& kernel, double h_lo, double t);

// Curvature proxy sum_j jump_j * density((knot_j - t)/h_gb)/h_gb.  Always
// nonnegative; integrates over t to the total jump mass.
double hessian_weight(const PiecewiseLinearLoss& loss,
                      const GlobalKernel& kernel, double h_gb, double t);

// Bandwidth settings for the score smoothing (h_lo) and the curvature
// weighting (h_gb).  The automatic rules are
//   h_lo = 1 / sqrt(n log n),    h_gb = (log p / n)^{1/5},
// evaluated on the full sample size of the dataset being analysed.
struct BandwidthConfig {
  bool automatic = true;
  double h_lo = 0.0;
  double h_gb = 0.0;

  static BandwidthConfig auto_rule() { return BandwidthConfig{}; }
  static BandwidthConfig fixed(double h_lo, double h_gb);

  double resolve_h_lo(std::size_t n) const;
  double resolve_h_gb(std::size_t n, std::size_t p) const;
};

}  // namespace kdscore
