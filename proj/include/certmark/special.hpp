#pragma once

#include <cstdint>

namespace certmark {

/// Standard normal CDF.
double gaussian_cdf(double z);

/// Inverse of gaussian_cdf on (0,1). Throws std::domain_error outside the open interval.
double gaussian_quantile(double p);

/// Binomial(n, p) probability mass at k, via Loader's saddle-point expansion.
double binomial_pmf(std::int64_t n, std::int64_t k, double p);

/// P[Binomial(n, p) <= k]. Throws std::domain_error for k outside [0, n] or p outside [0, 1].
double binomial_cdf(std::int64_t n, std::int64_t k, double p);

/// P[Binomial(n, p) >= k], summed directly on the short side so small upper tails keep their precision.
/// k may range over [0, n + 1].
double binomial_sf(std::int64_t n, std::int64_t k, double p);

}  // namespace certmark
