#include "kdscore/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdscore/errors.hpp"

namespace kdscore {

namespace {

// Cody's rational Chebyshev coefficients for the complementary error
// function (the classic three-branch scheme): |x| <= 0.46875 through the
// erf rational, the mid range up to 4 and the asymptotic tail through
// scaled erfc rationals.
constexpr double kErfA[5] = {3.16112374387056560e00, 1.13864154151050156e02,
                             3.77485237685302021e02, 3.20937758913846947e03,
                             1.85777706184603153e-1};
constexpr double kErfB[4] = {2.36012909523441209e01, 2.44024637934444173e02,
                             1.28261652607737228e03, 2.84423683343917062e03};
constexpr double kErfC[9] = {5.64188496988670089e-1, 8.88314979438837594e00,
                             6.61191906371416295e01, 2.98635138197400131e02,
                             8.81952221241769090e02, 1.71204761263407058e03,
                             2.05107837782607147e03, 1.23033935479799725e03,
                             2.15311535474403846e-8};
constexpr double kErfD[8] = {1.57449261107098347e01, 1.17693950891312499e02,
                             5.37181101862009858e02, 1.62138957456669019e03,
                             3.29079923573345963e03, 4.36261909014324716e03,
                             3.43936767414372164e03, 1.23033935480374942e03};
constexpr double kErfP[6] = {3.05326634961232344e-1, 3.60344899949804439e-1,
                             1.25781726111229246e-1, 1.60837851487422766e-2,
                             6.58749161529837803e-4, 1.63153871373020978e-2};
constexpr double kErfQ[5] = {2.56852019228982242e00, 1.87295284992346047e00,
                             5.27905102951428412e-1, 6.05183413124413191e-2,
                             2.33520497626869185e-3};
constexpr double kInvSqrtPi = 5.6418958354775628695e-1;

// exp(-y^2) with the square split into a coarse part and a small
// remainder so the exponent does not lose low-order bits.
double exp_neg_square(double y) {
  double xsq = std::trunc(y * 16.0) / 16.0;
  double del = (y - xsq) * (y + xsq);
  return std::exp(-xsq * xsq) * std::exp(-del);
}

double erfc_rational(double x) {
  double y = std::fabs(x);
  double result;
  if (y <= 0.46875) {
    double ysq = y > 1.11e-16 ? y * y : 0.0;
    double xnum = kErfA[4] * ysq;
    double xden = ysq;
    for (int i = 0; i < 3; ++i) {
      xnum = (xnum + kErfA[i]) * ysq;
      xden = (xden + kErfB[i]) * ysq;
    }
    return 1.0 - x * (xnum + kErfA[3]) / (xden + kErfB[3]);
  }
  if (y <= 4.0) {
    double xnum = kErfC[8] * y;
    double xden = y;
    for (int i = 0; i < 7; ++i) {
      xnum = (xnum + kErfC[i]) * y;
      xden = (xden + kErfD[i]) * y;
    }
    result = exp_neg_square(y) * (xnum + kErfC[7]) / (xden + kErfD[7]);
  } else if (y < 26.6) {
    double ysq = 1.0 / (y * y);
    double xnum = kErfP[5] * ysq;
    double xden = ysq;
    for (int i = 0; i < 4; ++i) {
      xnum = (xnum + kErfP[i]) * ysq;
      xden = (xden + kErfQ[i]) * ysq;
    }
    double frac = ysq * (xnum + kErfP[4]) / (xden + kErfQ[4]);
    result = exp_neg_square(y) * (kInvSqrtPi - frac) / y;
  } else {
    result = 0.0;
  }
  return x < 0.0 ? 2.0 - result : result;
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t splitmix64(std::uint64_t& x) {
  x += kGolden;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

double normal_cdf(double z) {
  if (std::isnan(z)) return z;
  return 0.5 * erfc_rational(-z / std::sqrt(2.0));
}

double normal_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw DomainError("normal_quantile: argument must lie strictly in (0,1)");
  }
  // Wichura's PPND16.
  double d = q - 0.5;
  if (std::fabs(d) <= 0.425) {
    double r = 0.180625 - d * d;
    double num = (((((((2.5090809287301226727e3 * r +
                        3.3430575583588128105e4) * r +
                       6.7265770927008700853e4) * r +
                      4.5921953931549871457e4) * r +
                     1.3731693765509461125e4) * r +
                    1.9715909503065514427e3) * r +
                   1.3314166789178437745e2) * r +
                  3.3871328727963666080e0);
    double den = (((((((5.2264952788528545610e3 * r +
                        2.8729085735721942674e4) * r +
                       3.9307895800092710610e4) * r +
                      2.1213794301586595867e4) * r +
                     5.3941960214247511077e3) * r +
                    6.8718700749205790830e2) * r +
                   4.2313330701600911252e1) * r +
                  1.0);
    return d * num / den;
  }
  double r = d < 0.0 ? q : 1.0 - q;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    double num = (((((((7.74545014278341407640e-4 * r +
                        2.27238449892691845833e-2) * r +
                       2.41780725177450611770e-1) * r +
                      1.27045825245236838258e0) * r +
                     3.64784832476320460504e0) * r +
                    5.76949722146069140550e0) * r +
                   4.63033784615654529590e0) * r +
                  1.42343711074968357734e0);
    double den = (((((((1.05075007164441684324e-9 * r +
                        5.47593808499534494600e-4) * r +
                       1.51986665636164571966e-2) * r +
                      1.48103976427480074590e-1) * r +
                     6.89767334985100004550e-1) * r +
                    1.67638483018380384940e0) * r +
                   2.05319162663775882187e0) * r +
                  1.0);
    value = num / den;
  } else {
    r -= 5.0;
    double num = (((((((2.01033439929228813265e-7 * r +
                        2.71155556874348757815e-5) * r +
                       1.24266094738807843860e-3) * r +
                      2.65321895265761230930e-2) * r +
                     2.96560571828504891230e-1) * r +
                    1.78482653991729133580e0) * r +
                   5.46378491116411436990e0) * r +
                  6.65790464350110377720e0);
    double den = (((((((2.04426310338993978564e-15 * r +
                        1.42151175831644588870e-7) * r +
                       1.84631831751005468180e-5) * r +
                      7.86869131145613259100e-4) * r +
                     1.48753612908506148525e-2) * r +
                    1.36929880922735805310e-1) * r +
                   5.99832206555887937690e-1) * r +
                  1.0);
    value = num / den;
  }
  return d < 0.0 ? -value : value;
}

std::vector<std::size_t> bh_fdr(const std::vector<double>& p_values, double q) {
  const std::size_t m = p_values.size();
  if (!(q > 0.0 && q < 1.0)) {
    throw DomainError("bh_fdr: level must lie strictly in (0,1)");
  }
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DomainError("bh_fdr: p-values must lie in [0,1]");
    }
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return p_values[a] < p_values[b];
  });
  double threshold = -1.0;
  for (std::size_t k = m; k >= 1; --k) {
    if (p_values[order[k - 1]] <= static_cast<double>(k) * q / static_cast<double>(m)) {
      threshold = p_values[order[k - 1]];
      break;
    }
  }
  std::vector<std::size_t> rejected;
  if (threshold >= 0.0) {
    for (std::size_t i = 0; i < m; ++i) {
      if (p_values[i] <= threshold) rejected.push_back(i);
    }
  }
  return rejected;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ (stream * kGolden);
  for (auto& s : state_) s = splitmix64(x);
  if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = kGolden;
}

std::uint64_t RngStream::next_u64() {
  std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double RngStream::uniform01() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() { return normal_quantile(uniform01()); }

std::uint64_t RngStream::uniform_below(std::uint64_t n) {
  if (n == 0) throw DomainError("uniform_below: n must be positive");
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    std::uint64_t t = (0 - n) % n;
    while (low < t) {
      m = static_cast<unsigned __int128>(next_u64()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = seed;
  splitmix64(x);
  x ^= a * 0xbf58476d1ce4e5b9ULL;
  std::uint64_t h = splitmix64(x);
  x ^= b * 0x94d049bb133111ebULL;
  return h ^ splitmix64(x);
}

}  // namespace kdscore
