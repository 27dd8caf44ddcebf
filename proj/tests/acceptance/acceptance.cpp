// One PASS/FAIL line per acceptance criterion. `acceptance --only NAME` runs a single criterion.

#include "certmark/attacks.hpp"
#include "certmark/certify.hpp"
#include "certmark/embed.hpp"
#include "certmark/experiment.hpp"
#include "certmark/network.hpp"
#include "certmark/rng.hpp"
#include "certmark/smoothing.hpp"
#include "certmark/special.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/oracles.hpp"

using namespace certmark;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kCdfAbsTol = 1e-10;
constexpr double kBinomRelTol = 1e-10;
constexpr int kOrderTrials = 10000;
constexpr int kSoundnessReps = 1000;
constexpr double kGradRelTol = 1e-4;
constexpr double kDeskCleanMin = 0.9;
constexpr int kPgdPerRadius = 5;
constexpr double kMnistRawMin = 0.9;
constexpr int kSeeds = 3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

char buf[512];

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int jobs() { return resolve_jobs(std::nullopt); }

fs::path source_path(const std::string& rel) { return fs::path(CERTMARK_SOURCE_DIR) / rel; }

// ---------------------------------------------------------------------------

Outcome special_functions() {
  double worst_cdf = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double z = -8.0 + 16.0 * i / 999.0;
    worst_cdf = std::max(worst_cdf, std::fabs(gaussian_cdf(z) - static_cast<double>(oracle::phi_by_integration(z))));
  }
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_rel = 0.0;
  for (int n : {1, 2, 7, 50, 200, 513, 1000}) {
    for (int j = 0; j < 20; ++j) {
      const double p = unit(rng);
      for (int k = 0; k <= n; ++k) {
        const long double exact = oracle::binom_cdf_oracle(n, k, p);
        if (exact < 1e-300L) continue;  // below double range
        const double rel = static_cast<double>(std::fabs((binomial_cdf(n, k, p) - exact) / exact));
        worst_rel = std::max(worst_rel, rel);
      }
    }
  }
  return {worst_cdf <= kCdfAbsTol && worst_rel <= kBinomRelTol,
          fmt("max |cdf err| %.2e (tol %.0e), max binomial rel err %.2e (tol %.0e)", worst_cdf, kCdfAbsTol,
              worst_rel, kBinomRelTol)};
}

// Largest k in 1..n with P[Bin(n, p) >= k] >= c, by a full scan with the long-double oracle.
std::optional<std::int64_t> brute_force_index(int n, double c, double p) {
  for (int k = n; k >= 1; --k)
    if (1.0L - oracle::binom_cdf_oracle(n, k - 1, p) >= c) return k;
  return std::nullopt;
}

Outcome order_statistics() {
  int cells = 0;
  int mismatches = 0;
  int undercovered = 0;
  double worst_margin = 1.0;
  std::string worst;
  for (int n : {50, 200, 1000})
    for (double c : {0.9, 0.99, 0.999})
      for (double sigma : {0.5, 1.0})
        for (double eps : {0.0, 0.1, 0.25, 0.5}) {
          ++cells;
          const double p = percentile_for_radius(sigma, eps);
          const auto k = empirical_percentile_index(n, c, sigma, eps);
          if (k != brute_force_index(n, c, p)) ++mismatches;
          if (!k) continue;
          // N(0,1) samples: the p-quantile is exactly -eps/sigma.
          const double q = -eps / sigma;
          std::mt19937_64 rng(mix_seed(static_cast<std::uint64_t>(cells), 77));
          std::normal_distribution<double> normal;
          std::vector<double> x(static_cast<std::size_t>(n));
          int covered = 0;
          for (int t = 0; t < kOrderTrials; ++t) {
            for (auto& v : x) v = normal(rng);
            std::nth_element(x.begin(), x.begin() + (*k - 1), x.end());
            if (x[static_cast<std::size_t>(*k - 1)] <= q) ++covered;
          }
          const double rate = static_cast<double>(covered) / kOrderTrials;
          const double floor = c - 3.0 * std::sqrt(c * (1 - c) / kOrderTrials);
          if (rate < floor) ++undercovered;
          if (rate - floor < worst_margin) {
            worst_margin = rate - floor;
            worst = fmt("n=%d c=%g sigma=%g eps=%g coverage %.4f floor %.4f", n, c, sigma, eps, rate, floor);
          }
        }
  return {mismatches == 0 && undercovered == 0,
          fmt("%d cells, %d index mismatches, %d under-covered; tightest: ", cells, mismatches, undercovered) + worst};
}

Outcome soundness() {
  // f(theta) = Phi(w . theta): under Gaussian parameter noise the smoothed median is Phi(w . theta),
  // and its minimum over ||delta|| < eps is Phi(w . theta - eps ||w||).
  constexpr int d = 12;
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal;
  Eigen::VectorXd w(d);
  for (auto& v : w) v = normal(rng);
  w /= w.norm();
  const TriggerFn fn = [&](const ParamVector& theta) { return gaussian_cdf(w.dot(theta.cast<double>())); };

  SmoothingConfig cfg;
  cfg.sigma = 0.5;
  cfg.n = 1000;
  cfg.confidence = 0.99;
  const double se = std::sqrt(cfg.confidence * (1 - cfg.confidence) / kSoundnessReps);
  const double allowed = (1 - cfg.confidence) + 3 * se;
  std::string detail;
  bool pass = true;
  for (double eps : {0.1, 0.3, 0.6}) {
    int violations = 0;
    for (int rep = 0; rep < kSoundnessReps; ++rep) {
      ParamVector theta(d);
      for (auto& v : theta) v = static_cast<float>(0.4 * normal(rng));
      cfg.root_seed = mix_seed(static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(eps * 1000));
      const auto samples = sample_accuracies(fn, theta, cfg);
      const auto bound = certified_lower_bound(samples, cfg, eps);
      const double truth = gaussian_cdf(w.dot(theta.cast<double>()) - eps * w.norm());
      if (bound && bound->bound > truth) ++violations;
    }
    const double rate = static_cast<double>(violations) / kSoundnessReps;
    pass = pass && rate <= allowed;
    detail += fmt("eps=%.1f violation rate %.3f; ", eps, rate);
  }
  return {pass, detail + fmt("allowed %.4f", allowed)};
}

Outcome gradients() {
  const ModelSpec spec({7, 7, 2},
                       {LayerSpec::conv(3, 4, 1), LayerSpec::relu(), LayerSpec::conv(3, 5, 2), LayerSpec::relu(),
                        LayerSpec::flatten(), LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(3)},
                       3);
  double worst = 0.0;
  long checked = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Vector<double> p = init_params(spec, seed).cast<double>();
    const Matrix<double> x =
        synthetic_dataset(seed + 100, 4, 3, spec.input()).images.cast<double>();
    const std::vector<int> y{0, 1, 2, 0};
    const auto g = loss_and_grad<double>(spec, p, x, y).grad;
    auto loss_at = [&](const Vector<double>& q) { return loss_and_grad<double>(spec, q, x, y).loss; };
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      auto diff = [&](double h) {
        Vector<double> a = p, b = p;
        a[i] += h;
        b[i] -= h;
        return (loss_at(a) - loss_at(b)) / (2 * h);
      };
      ++total;
      const double d1 = diff(1e-5), d2 = diff(1e-6);
      if (std::fabs(d1 - d2) > 1e-6 * std::max(1.0, std::fabs(d1))) continue;  // straddles a ReLU kink
      ++checked;
      worst = std::max(worst, std::fabs(g[i] - d1) / std::max({1e-6, std::fabs(g[i]), std::fabs(d1)}));
    }
  }
  const bool enough = checked * 10 >= total * 9;
  return {worst < kGradRelTol && enough,
          fmt("max rel err %.2e over %ld/%ld coordinates, 5 seeds (tol %.0e)", worst, checked, total, kGradRelTol)};
}

// ---------------------------------------------------------------------------

struct Embedded {
  ExperimentConfig cfg;
  ExperimentData data;
  ModelSpec spec;
  TriggerSet triggers;
  ParamVector params;
};

Embedded embed_run(ExperimentConfig cfg) {
  auto data = load_experiment_data(cfg);
  auto spec = build_model(cfg, data.test.shape, data.test.classes);
  auto triggers = build_triggers(cfg, data, spec);
  const auto init = init_params(spec, cfg.init_seed);
  OptimizerState opt(cfg.optimizer, init.size());
  auto res = embed_watermark(spec, init, data.split.owner, triggers, cfg.embed, opt);
  return {std::move(cfg), std::move(data), std::move(spec), std::move(triggers), std::move(res.params)};
}

ExperimentConfig desk_config(std::uint64_t seed) {
  auto cfg = load_experiment(source_path("configs/desk.json"));
  cfg.apply_seed(seed);
  return cfg;
}

Outcome desk_pipeline() {
  const auto run = embed_run(desk_config(1));
  const auto report = certify_grid(run.spec, run.params, run.triggers, run.cfg.smoothing, run.cfg.radii, jobs());
  const double clean = report.entries.front().certified_accuracy.value_or(0.0);
  bool monotone = true;
  for (std::size_t i = 1; i < report.entries.size(); ++i) {
    const auto& a = report.entries[i - 1].certified_accuracy;
    const auto& b = report.entries[i].certified_accuracy;
    if (b && (!a || *b > *a)) monotone = false;
  }
  std::vector<AttackedModel> attacked;
  const double lrs[kPgdPerRadius] = {0.02, 0.05, 0.1, 0.2, 0.5};
  for (const auto& e : report.entries) {
    if (e.radius <= 0.0 || !e.certified_accuracy) continue;
    for (double lr : lrs) {
      const double r = 0.99 * e.radius;
      auto pgd = pgd_parameter_attack(run.spec, run.params, run.triggers.images, run.triggers.target_labels, r, 20, lr);
      attacked.push_back({fmt("pgd r=%.3f lr=%.2f", r, lr), pgd.params, pgd.distance});
    }
  }
  const auto res = verify_certificate(run.spec, report, attacked, run.triggers, run.cfg.smoothing, jobs());
  std::string table = format_certificate_table({{"desk", report}});
  std::replace(table.begin(), table.end(), '\n', ' ');
  const bool pass = clean >= kDeskCleanMin && monotone && !attacked.empty() && res.violations.empty() &&
                    res.skipped.empty();
  return {pass, fmt("clean %.3f (min %.1f), monotone %s, %zu PGD models, %zu checks, %zu violations | ", clean,
                    kDeskCleanMin, monotone ? "yes" : "no", attacked.size(), res.checks.size(),
                    res.violations.size()) +
                    table};
}

Outcome mnist_run() {
  if (!fs::exists(source_path("data/mnist5k/train-images.idx")))
    return {false, "data/mnist5k is missing (see tools/mnist_subset_to_idx.py)"};
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    auto cfg = load_experiment(source_path("configs/mnist.json"));
    cfg.apply_seed(seed);
    auto base_cfg = cfg;
    base_cfg.embed.max_noise = 0.0;
    base_cfg.embed.noise_samples = 1;
    const auto noisy = embed_run(cfg);
    const auto base = embed_run(base_cfg);
    const double raw = accuracy(noisy.spec, noisy.params, noisy.triggers.images, noisy.triggers.target_labels);

    AttackConfig ft;
    ft.kind = AttackKind::Finetune;
    ft.lr = 1e-4;
    ft.epochs = 10;
    ft.seed = mix_seed(seed, 99);
    auto smoothed_after = [&](const Embedded& e) {
      const auto t = finetune_attack(e.spec, e.params, e.data.split.adversary, ft);
      const auto s = sample_accuracies(trigger_accuracy_fn(e.spec, e.triggers), t.final_params, cfg.smoothing, jobs());
      return smoothed_trigger_accuracy(s);
    };
    const double a = smoothed_after(noisy);
    const double b = smoothed_after(base);
    const bool ok = raw >= kMnistRawMin && a >= b;
    wins += ok;
    detail += fmt("seed %d: raw %.3f, smoothed after finetune %.3f vs baseline %.3f; ", static_cast<int>(seed), raw,
                  a, b);
  }
  return {2 * wins > kSeeds, detail + fmt("%d/%d seeds", wins, kSeeds)};
}

Outcome l2_trends() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    const auto run = embed_run(desk_config(seed));
    bool ok = true;
    std::string line = fmt("seed %d:", static_cast<int>(seed));
    for (auto kind : {AttackKind::Finetune, AttackKind::DistillHard, AttackKind::DistillSoft}) {
      double first[2] = {0, 0};
      for (int j = 0; j < 2; ++j) {
        AttackConfig c;
        c.kind = kind;
        c.lr = j == 0 ? 1e-3 : 1e-4;
        c.epochs = 5;
        c.seed = mix_seed(seed, 99);
        const auto t = kind == AttackKind::Finetune
                           ? finetune_attack(run.spec, run.params, run.data.split.adversary, c)
                           : distill_attack(run.spec, run.params, run.data.split.adversary.images, c);
        const auto rows = l2_trajectory(t);
        if (t.aborted || rows.size() != 5) {
          ok = false;
          continue;
        }
        first[j] = rows[0].increment;
        ok = ok && rows[0].increment > rows[4].increment;
        line += fmt(" %s@%g %.3f>%.3f", to_string(kind).c_str(), c.lr, rows[0].increment, rows[4].increment);
      }
      ok = ok && first[0] > first[1];
    }
    wins += ok;
    detail += line + (ok ? " ok; " : " FAIL; ");
  }
  return {2 * wins > kSeeds, detail + fmt("%d/%d seeds", wins, kSeeds)};
}

Outcome tradeoff() {
  const auto cfg = desk_config(1);
  const auto data = load_experiment_data(cfg);
  const auto spec = build_model(cfg, data.test.shape, data.test.classes);
  const auto triggers = build_triggers(cfg, data, spec);
  SweepConfig sc{cfg.embed, cfg.optimizer, cfg.smoothing, {0.0, 0.6}};
  const std::vector<double> sigmas{0.2, 0.5, 0.8};
  const auto rows =
      sweep_noise_tradeoff(spec, init_params(spec, cfg.init_seed), data.split.owner, data.test, triggers, sigmas, sc,
                           jobs());
  std::vector<double> test, cert;
  for (const auto& r : rows) {
    if (!r.test_acc || !r.report) return {false, "sigma " + fmt("%g", r.sigma) + " diverged: " + r.error.value_or("")};
    test.push_back(*r.test_acc);
    cert.push_back(r.report->entries.back().certified_accuracy.value_or(0.0));
  }
  int test_inv = 0, cert_inv = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    test_inv += test[i] > test[i - 1];
    cert_inv += cert[i] < cert[i - 1];
  }
  std::string table = format_tradeoff_table(rows);
  std::replace(table.begin(), table.end(), '\n', ' ');
  return {test_inv + cert_inv <= 1,
          fmt("%d test-accuracy and %d certified-accuracy inversions (1 allowed) | ", test_inv, cert_inv) + table};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(CERTMARK_CLI) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

Outcome determinism() {
  const auto root = oracle::scratch("determinism");
  const auto config = source_path("configs/desk.json").string();
  for (const char* name : {"a", "b"}) {
    const auto out = (root / name).string();
    const std::string common = " --config " + config + " --out " + out + (name[0] == 'a' ? " --jobs 1" : " --jobs 3");
    if (cli("embed" + common) || cli("certify" + common) || cli("attack" + common) || cli("verify" + common))
      return {false, std::string("pipeline failed in run ") + name};
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root / "a"))
    if (e.is_regular_file() && e.path().filename() != "config.json")  // records --out and --jobs
      files.push_back(fs::relative(e.path(), root / "a"));
  std::sort(files.begin(), files.end());
  std::string differing;
  for (const auto& f : files)
    if (!fs::exists(root / "b" / f) || slurp(root / "a" / f) != slurp(root / "b" / f))
      differing += " " + f.string();
  const bool has_all = std::count_if(files.begin(), files.end(), [](const fs::path& p) {
                         return p.filename() == "model.ckpt" || p.filename() == "report.json";
                       }) >= 2;
  return {differing.empty() && has_all,
          fmt("%zu artifacts compared across --jobs 1 and --jobs 3", files.size()) +
              (differing.empty() ? std::string(", all identical") : ", differing:" + differing)};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"special-functions", special_functions}, {"order-statistics", order_statistics},
      {"soundness", soundness},                 {"gradients", gradients},
      {"desk-pipeline", desk_pipeline},         {"mnist", mnist_run},
      {"l2-trends", l2_trends},                 {"tradeoff", tradeoff},
      {"determinism", determinism},
  };
  std::string only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only = argv[++i];
    } else if (a == "--list") {
      for (const auto& c : all) std::printf("%s\n", c.name);
      return 0;
    } else {
      std::fprintf(stderr, "usage: acceptance [--list] [--only NAME]\n");
      return 2;
    }
  }
  int failures = 0, ran = 0;
  for (const auto& c : all) {
    if (!only.empty() && only != c.name) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  if (ran == 0) {
    std::fprintf(stderr, "unknown criterion '%s'\n", only.c_str());
    return 2;
  }
  return failures ? 1 : 0;
}
