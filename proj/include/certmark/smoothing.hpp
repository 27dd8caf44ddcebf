#pragma once

#include "certmark/data.hpp"
#include "certmark/special.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace certmark {

/// Monte Carlo percentile smoothing over parameters: sigma is the noise std, n the sample count,
/// confidence the one-sided level c of certified bounds.
struct SmoothingConfig {
  double sigma = 1.0;
  std::int64_t n = 10000;
  double confidence = 0.99;
  std::uint64_t root_seed = 0;

  void validate() const;
};

/// n accuracies of f(theta + G), ascending.
struct AccuracySample {
  std::vector<double> sorted;
  std::uint64_t root_seed = 0;
  double sigma = 0.0;

  std::int64_t n() const { return static_cast<std::int64_t>(sorted.size()); }
};

using TriggerFn = std::function<double(const ParamVector&)>;

/// Trigger-set accuracy of the model at the given parameters.
TriggerFn trigger_accuracy_fn(const ModelSpec& spec, const TriggerSet& triggers);

/// Evaluates fn(theta + G_i), G_i ~ N(0, sigma^2 I), for i = 0..n-1 and sorts the results.
/// Noise for sample i comes from stream mix_seed(root_seed, i), so the output does not depend on `jobs`.
AccuracySample sample_accuracies(const TriggerFn& fn, const ParamVector& theta, const SmoothingConfig& cfg,
                                 int jobs = 1);

/// Median estimator: sorted element at 0-based index floor(n/2) (upper middle for even n).
double smoothed_trigger_accuracy(const AccuracySample& samples);

/// p_lower = Phi(-epsilon/sigma), the percentile whose lower bound certifies the shifted median.
double percentile_for_radius(double sigma, double epsilon);

/// Largest 1-based order statistic k with P[Binomial(n, p_lower) >= k] >= c, or nullopt when
/// not even the minimum qualifies.
std::optional<std::int64_t> empirical_percentile_index(std::int64_t n, double confidence, double sigma,
                                                       double epsilon);

struct CertifiedBound {
  double bound = 0.0;
  std::int64_t index = 0;  // 1-based order statistic
  double p_lower = 0.0;
};

/// The k-th smallest sample: with confidence >= c it lower-bounds the median smoothed accuracy at
/// every theta + delta with ||delta||_2 < epsilon.
std::optional<CertifiedBound> certified_lower_bound(const AccuracySample& samples, const SmoothingConfig& cfg,
                                                    double epsilon);

/// Worker count from an explicit value, else CERTMARK_JOBS, else 1.
int resolve_jobs(std::optional<int> requested);

}  // namespace certmark
