#include "certmark/smoothing.hpp"

#include "certmark/network.hpp"
#include "certmark/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <thread>

namespace certmark {

void SmoothingConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("smoothing sigma must be > 0");
  if (n < 1) throw std::invalid_argument("smoothing sample count n must be >= 1");
  if (!(confidence > 0.0 && confidence < 1.0)) throw std::invalid_argument("confidence must lie in (0,1)");
}

ParamVector gaussian_perturbation(const ParamVector& theta, double sigma, std::uint64_t seed) {
  ParamVector noise(theta.size());
  Rng rng = make_rng(seed);
  fill_gaussian(noise, sigma, rng);
  return theta + noise;
}

TriggerFn trigger_accuracy_fn(const ModelSpec& spec, const TriggerSet& triggers) {
  return [&spec, &triggers](const ParamVector& params) {
    return accuracy(spec, params, triggers.images, triggers.target_labels);
  };
}

AccuracySample sample_accuracies(const TriggerFn& fn, const ParamVector& theta, const SmoothingConfig& cfg,
                                 int jobs) {
  cfg.validate();
  AccuracySample out;
  out.root_seed = cfg.root_seed;
  out.sigma = cfg.sigma;
  out.sorted.resize(static_cast<std::size_t>(cfg.n));

  auto work = [&](std::int64_t first, std::int64_t stride) {
    for (std::int64_t i = first; i < cfg.n; i += stride)
      out.sorted[static_cast<std::size_t>(i)] =
          fn(gaussian_perturbation(theta, cfg.sigma, mix_seed(cfg.root_seed, static_cast<std::uint64_t>(i))));
  };

  const int workers = static_cast<int>(std::clamp<std::int64_t>(jobs, 1, cfg.n));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          work(w, workers);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::sort(out.sorted.begin(), out.sorted.end());
  return out;
}

double smoothed_trigger_accuracy(const AccuracySample& samples) {
  if (samples.sorted.empty()) throw std::invalid_argument("empty accuracy sample");
  return samples.sorted[samples.sorted.size() / 2];
}

double percentile_for_radius(double sigma, double epsilon) { return gaussian_cdf(-epsilon / sigma); }

std::optional<std::int64_t> empirical_percentile_index(std::int64_t n, double confidence, double sigma,
                                                       double epsilon) {
  if (n < 1) throw std::invalid_argument("empirical_percentile_index: n must be >= 1");
  if (!(confidence > 0.0 && confidence < 1.0)) throw std::invalid_argument("confidence must lie in (0,1)");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
  const double p_lower = percentile_for_radius(sigma, epsilon);

  // P[Bin(n, p) >= k] falls as k grows: keep lo qualifying (k = 0 trivially) and hi failing.
  std::int64_t lo = 0;
  std::int64_t hi = n + 1;
  while (hi - lo > 1) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (binomial_sf(n, mid, p_lower) >= confidence)
      lo = mid;
    else
      hi = mid;
  }
  if (lo == 0) return std::nullopt;
  return lo;
}

std::optional<CertifiedBound> certified_lower_bound(const AccuracySample& samples, const SmoothingConfig& cfg,
                                                    double epsilon) {
  if (samples.sorted.empty()) throw std::invalid_argument("empty accuracy sample");
  const auto k = empirical_percentile_index(samples.n(), cfg.confidence, cfg.sigma, epsilon);
  if (!k) return std::nullopt;
  return CertifiedBound{samples.sorted[static_cast<std::size_t>(*k - 1)], *k,
                        percentile_for_radius(cfg.sigma, epsilon)};
}

int resolve_jobs(std::optional<int> requested) {
  if (requested && *requested > 0) return *requested;
  if (const char* env = std::getenv("CERTMARK_JOBS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

}  // namespace certmark
