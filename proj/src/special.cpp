#include "certmark/special.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace certmark {

double gaussian_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double gaussian_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("gaussian_quantile: p must lie in (0,1)");

  // Acklam's rational approximation, then two Halley steps against erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  const double sqrt_2pi = std::sqrt(2.0 * std::numbers::pi);
  for (int it = 0; it < 2; ++it) {
    // Work on the smaller tail so the residual keeps relative precision.
    const double e = x < 0 ? gaussian_cdf(x) - p : (1.0 - p) - gaussian_cdf(-x);
    const double u = e * sqrt_2pi * std::exp(0.5 * x * x);
    if (!std::isfinite(u)) break;
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

namespace {

// log(n!) - log(sqrt(2 pi n) (n/e)^n)
double stirlerr(double n) {
  constexpr double s0 = 1.0 / 12.0;
  constexpr double s1 = 1.0 / 360.0;
  constexpr double s2 = 1.0 / 1260.0;
  constexpr double s3 = 1.0 / 1680.0;
  constexpr double s4 = 1.0 / 1188.0;
  if (n <= 15.0) {
    return std::lgamma(n + 1.0) - (n + 0.5) * std::log(n) + n - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  const double nn = n * n;
  if (n > 500) return (s0 - s1 / nn) / n;
  if (n > 80) return (s0 - (s1 - s2 / nn) / nn) / n;
  if (n > 35) return (s0 - (s1 - (s2 - s3 / nn) / nn) / nn) / n;
  return (s0 - (s1 - (s2 - (s3 - s4 / nn) / nn) / nn) / nn) / n;
}

// x log(x/np) + np - x, without cancellation near x = np.
double bd0(double x, double np) {
  if (std::abs(x - np) < 0.1 * (x + np)) {
    double v = (x - np) / (x + np);
    double s = (x - np) * v;
    double ej = 2.0 * x * v;
    v *= v;
    for (int j = 1; j < 1000; ++j) {
      ej *= v;
      const double s1 = s + ej / (2 * j + 1);
      if (s1 == s) return s1;
      s = s1;
    }
    return s;
  }
  return x * std::log(x / np) + np - x;
}

void check_p(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("binomial: p must lie in [0,1]");
}

double log_pmf(std::int64_t n, std::int64_t k, double p) {
  const double q = 1.0 - p;
  if (p == 0.0) return k == 0 ? 0.0 : -INFINITY;
  if (p == 1.0) return k == n ? 0.0 : -INFINITY;
  if (k == 0) return static_cast<double>(n) * std::log1p(-p);
  if (k == n) return static_cast<double>(n) * std::log(p);
  const double nd = static_cast<double>(n);
  const double kd = static_cast<double>(k);
  const double lc = stirlerr(nd) - stirlerr(kd) - stirlerr(nd - kd) - bd0(kd, nd * p) - bd0(nd - kd, nd * q);
  return lc + 0.5 * std::log(nd / (2.0 * std::numbers::pi * kd * (nd - kd)));
}

std::int64_t mode_of(std::int64_t n, double p) {
  const auto m = static_cast<std::int64_t>(std::floor(static_cast<double>(n + 1) * p));
  return std::min(n, std::max<std::int64_t>(0, m));
}

// Sum of pmf over [lo, hi], where the range lies on one side of the mode and `from_hi` says which end is
// nearer the mode (the largest term). Terms shrink monotonically away from it.
double sum_one_side(std::int64_t n, std::int64_t lo, std::int64_t hi, double p, bool from_hi) {
  if (lo > hi) return 0.0;
  const std::int64_t start = from_hi ? hi : lo;
  const double lmax = log_pmf(n, start, p);
  if (lmax == -INFINITY) return 0.0;
  double s = 0.0;
  const std::int64_t step = from_hi ? -1 : 1;
  for (std::int64_t i = start; i >= lo && i <= hi; i += step) {
    const double t = std::exp(log_pmf(n, i, p) - lmax);
    s += t;
    if (t < 1e-17 * s) break;
  }
  return std::exp(lmax) * s;
}

}  // namespace

double binomial_pmf(std::int64_t n, std::int64_t k, double p) {
  check_p(p);
  if (n < 0 || k < 0 || k > n) return 0.0;
  return std::exp(log_pmf(n, k, p));
}

double binomial_cdf(std::int64_t n, std::int64_t k, double p) {
  check_p(p);
  if (n < 0) throw std::domain_error("binomial_cdf: n must be non-negative");
  if (k < 0 || k > n)
    throw std::domain_error("binomial_cdf: k=" + std::to_string(k) + " outside [0, " + std::to_string(n) + "]");
  if (k == n) return 1.0;
  const std::int64_t m = mode_of(n, p);
  if (k < m) return std::min(1.0, sum_one_side(n, 0, k, p, true));
  return std::clamp(1.0 - sum_one_side(n, k + 1, n, p, false), 0.0, 1.0);
}

double binomial_sf(std::int64_t n, std::int64_t k, double p) {
  check_p(p);
  if (n < 0) throw std::domain_error("binomial_sf: n must be non-negative");
  if (k < 0 || k > n + 1)
    throw std::domain_error("binomial_sf: k=" + std::to_string(k) + " outside [0, " + std::to_string(n + 1) + "]");
  if (k == 0) return 1.0;
  if (k == n + 1) return 0.0;
  const std::int64_t m = mode_of(n, p);
  if (k > m) return std::min(1.0, sum_one_side(n, k, n, p, false));
  return std::clamp(1.0 - sum_one_side(n, 0, k - 1, p, true), 0.0, 1.0);
}

}  // namespace certmark
