#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace seqbed {

using Rng = std::mt19937_64;

/// Named purposes for derived random streams. Every stochastic step of a
/// campaign draws from its own stream so that, e.g., oracle draws never
/// shift the utility estimates.
enum class Stream : std::uint64_t {
  prior = 1,
  oracle = 2,
  utility = 3,
  marginal = 4,
  likelihood = 5,
  belief = 6,
  resample = 7,
  bo = 8,
  posterior = 9,
  final_fit = 10,
  reference = 11,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, Stream stream,
                                    std::uint64_t index = 0) {
  return splitmix64(splitmix64(base ^ splitmix64(static_cast<std::uint64_t>(stream))) + index);
}

inline Rng make_rng(std::uint64_t base, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(base, stream, index));
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

/// Binomial draw tuned for the small populations of the epidemic simulators.
/// Uses CDF inversion (one uniform per draw) when n is small, otherwise the
/// standard library sampler.
inline int binomial(int n, double p, Rng& rng) {
  if (n <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  if (n > 128) return std::binomial_distribution<int>(n, p)(rng);
  const bool flip = p > 0.5;
  const double pp = flip ? 1.0 - p : p;
  const double q = 1.0 - pp;
  const double odds = pp / q;
  double pk = std::pow(q, n);
  double cdf = pk;
  const double u = uniform01(rng);
  int k = 0;
  while (u > cdf && k < n) {
    pk *= odds * static_cast<double>(n - k) / static_cast<double>(k + 1);
    ++k;
    cdf += pk;
  }
  return flip ? n - k : k;
}

}  // namespace seqbed
