#pragma once

#include "certmark/common.hpp"

#include <cstdint>
#include <random>

namespace certmark {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based child seed: stream `index` of `root`. Independent of evaluation order.
constexpr std::uint64_t mix_seed(std::uint64_t root, std::uint64_t index) {
  return splitmix64(splitmix64(root) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

/// Fills `out` with N(0, sigma^2) draws.
template <typename Scalar>
void fill_gaussian(Vector<Scalar>& out, double sigma, Rng& rng) {
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  const auto s = static_cast<Scalar>(sigma);
  for (auto& x : out) x = s * normal(rng);
}

/// theta + N(0, sigma^2 I) using stream `seed`.
ParamVector gaussian_perturbation(const ParamVector& theta, double sigma, std::uint64_t seed);

}  // namespace certmark
