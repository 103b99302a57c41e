#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace kdscore {

// Standard normal distribution function Phi(z), evaluated through a
// rational Chebyshev approximation of the complementary error function
// (Cody's three-branch erfc scheme).  Relative error stays below a few
// ulps wherever the result does not underflow, and the value is identical
// across platforms that round double arithmetic to nearest.
double normal_cdf(double z);

// Inverse of normal_cdf on (0,1).  Wichura's PPND16 rational scheme,
// relative error around 1e-15.  Throws DomainError outside (0,1).
double normal_quantile(double q);

// Benjamini-Hochberg step-up at level q.  Returns the indices of the
// rejected hypotheses in ascending order.  Ties and p-values equal to the
// threshold are rejected (closed inequality), matching the usual
// definition: find the largest k with p_(k) <= k q / m.
std::vector<std::size_t> bh_fdr(const std::vector<double>& p_values, double q);

// Counter-free deterministic RNG: xoshiro256++ seeded through SplitMix64
// from (seed, stream).  Distinct streams are statistically independent
// for practical purposes; the same (seed, stream) pair reproduces the
// exact draw sequence on every platform.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();

  // Uniform on the open interval (0,1): ((x >> 11) + 0.5) * 2^-53.
  double uniform01();

  // Standard normal via inverse-CDF transform of uniform01().  Slower
  // than ziggurat but reproducible bit for bit and free of rejection
  // loops that would desynchronise streams.
  double normal();

  // Unbiased integer in [0, n) by Lemire multiply-shift with rejection.
  std::uint64_t uniform_below(std::uint64_t n);

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> state_;
};

// Stable 64-bit mixing of a seed with tag values, used to derive
// sub-stream seeds (per fold, per coordinate, per replicate) so that no
// two components ever consume the same underlying sequence.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace kdscore
