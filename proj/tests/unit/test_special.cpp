#include "certmark/special.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "oracles.hpp"

using namespace certmark;

using oracle::binom_cdf_oracle;
using oracle::log_choose;
using oracle::phi_by_integration;

TEST_CASE("gaussian_cdf matches integration and known values") {
  CHECK(gaussian_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(gaussian_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
  for (double z = -6.0; z <= 6.0; z += 0.37)
    CHECK(std::fabs(gaussian_cdf(z) - static_cast<double>(phi_by_integration(z))) < 1e-12);
  CHECK(gaussian_cdf(-40.0) >= 0.0);
  CHECK(gaussian_cdf(40.0) == 1.0);
}

TEST_CASE("gaussian_cdf is symmetric and monotone") {
  double prev = 0.0;
  for (double z = -8.0; z <= 8.0; z += 0.01) {
    const double v = gaussian_cdf(z);
    CHECK(v >= prev);
    prev = v;
    CHECK(v + gaussian_cdf(-z) == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("gaussian_quantile inverts the cdf") {
  for (double p : {1e-300, 1e-12, 1e-6, 0.01, 0.2, 0.5, 0.7, 0.99, 1 - 1e-9}) {
    const double z = gaussian_quantile(p);
    CHECK(gaussian_cdf(z) == doctest::Approx(p).epsilon(1e-12));
  }
  CHECK(gaussian_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(gaussian_quantile(0.0), std::domain_error);
  CHECK_THROWS_AS(gaussian_quantile(1.0), std::domain_error);
  CHECK_THROWS_AS(gaussian_quantile(-0.1), std::domain_error);
}

TEST_CASE("binomial pmf sums to one and matches direct evaluation") {
  for (int n : {1, 7, 50, 400}) {
    for (double p : {0.03, 0.5, 0.91}) {
      double total = 0.0;
      for (int k = 0; k <= n; ++k) {
        const double pmf = binomial_pmf(n, k, p);
        total += pmf;
        const auto direct = std::exp(log_choose(n, k) + k * std::log((long double)p) + (n - k) * std::log1p(-(long double)p));
        if (direct > 1e-300) CHECK(std::fabs(pmf / static_cast<double>(direct) - 1.0) < 1e-11);
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("binomial_cdf edge cases") {
  CHECK(binomial_cdf(10, 10, 0.3) == 1.0);
  CHECK(binomial_cdf(10, 0, 0.0) == 1.0);
  CHECK(binomial_cdf(10, 9, 1.0) == 0.0);
  CHECK(binomial_cdf(1, 0, 0.25) == doctest::Approx(0.75));
  CHECK_THROWS_AS(binomial_cdf(10, -1, 0.5), std::domain_error);
  CHECK_THROWS_AS(binomial_cdf(10, 11, 0.5), std::domain_error);
  CHECK_THROWS_AS(binomial_cdf(10, 3, 1.5), std::domain_error);
}

TEST_CASE("binomial_cdf matches long-double summation") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 6; ++trial) {
    const double p = u(rng);
    for (int n : {3, 40, 333, 1000})
      for (int k = 0; k <= n; k += std::max(1, n / 37)) {
        const long double ref = binom_cdf_oracle(n, k, p);
        const double got = binomial_cdf(n, k, p);
        if (ref > 1e-290L)
          CHECK(std::fabs(got / static_cast<double>(ref) - 1.0) < 1e-10);
        else
          CHECK(got < 1e-280);
      }
  }
}

TEST_CASE("binomial_sf complements the cdf") {
  CHECK(binomial_sf(20, 0, 0.4) == 1.0);
  CHECK(binomial_sf(20, 21, 0.4) == 0.0);
  for (int k = 1; k <= 20; ++k)
    CHECK(binomial_sf(20, k, 0.4) + binomial_cdf(20, k - 1, 0.4) == doctest::Approx(1.0).epsilon(1e-13));
  // tiny upper tails keep relative precision
  const double tail = binomial_sf(1000, 1000, 0.5);
  CHECK(tail == doctest::Approx(std::pow(0.5, 1000)).epsilon(1e-10));
  CHECK_THROWS_AS(binomial_sf(5, 7, 0.5), std::domain_error);
}
