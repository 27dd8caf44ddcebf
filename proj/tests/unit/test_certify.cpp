#include "certmark/certify.hpp"

#include "certmark/embed.hpp"
#include "certmark/network.hpp"
#include "certmark/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "oracles.hpp"

using namespace certmark;

namespace {

struct Fixture {
  Dataset data = synthetic_dataset(9, 120, 4, {8, 8, 1});
  ModelSpec spec = ModelSpec::mlp({8, 8, 1}, {16}, 4);
  ParamVector params = init_params(spec, 2);
  TriggerSet triggers;
  Fixture() {
    TriggerOptions o;
    o.count = 16;
    triggers = make_trigger_set(o, data, data.shape, 4);
    OptimizerState opt(OptimizerConfig::adam(0.01), params.size());
    for (int e = 0; e < 3; ++e) train_epoch(spec, params, data, 32, static_cast<std::uint64_t>(e), opt);
  }
};

SmoothingConfig smoothing(double sigma, std::int64_t n, std::uint64_t seed = 3) {
  SmoothingConfig c;
  c.sigma = sigma;
  c.n = n;
  c.confidence = 0.99;
  c.root_seed = seed;
  return c;
}

CertificateReport fixture_report(const std::vector<double>& radii, const std::vector<double>& accs) {
  CertificateReport rep;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    CertificateEntry e;
    e.radius = radii[i];
    e.certified_accuracy = accs[i];
    e.order_index = 1;
    rep.entries.push_back(e);
  }
  return rep;
}

}  // namespace

TEST_CASE("entries carry the normal tail percentile and shrink with radius") {
  Fixture f;
  const std::vector<double> radii{0.0, 0.01, 0.05, 0.1, 0.2, 0.5};
  const auto rep = certify_grid(f.spec, f.params, f.triggers, smoothing(0.05, 400), radii);
  REQUIRE(rep.entries.size() == radii.size());
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const auto& e = rep.entries[i];
    const double oracle = 0.5 * std::erfc(radii[i] / 0.05 / std::sqrt(2.0));
    CHECK(std::abs(e.p_lower - oracle) < 1e-10);
    CHECK(e.radius_over_sigma == doctest::Approx(radii[i] / 0.05));
    CHECK(e.order_index.has_value() == e.certified_accuracy.has_value());
    if (i > 0 && rep.entries[i - 1].certified_accuracy && e.certified_accuracy)
      CHECK(*e.certified_accuracy <= *rep.entries[i - 1].certified_accuracy);
    if (i > 0 && !rep.entries[i - 1].certified_accuracy) CHECK_FALSE(e.certified_accuracy);
  }
  CHECK(rep.entries.back().certified_accuracy == std::nullopt);
  CHECK(rep.spec_digest == hex_digest(f.spec.digest()));
  CHECK(rep.model_digest == hex_digest(model_digest(f.spec, f.params)));
}

TEST_CASE("radius zero certifies an order statistic below the median") {
  Fixture f;
  const auto rep = certify_grid(f.spec, f.params, f.triggers, smoothing(0.05, 500), {0.0});
  REQUIRE(rep.entries.size() == 1);
  REQUIRE(rep.entries[0].order_index);
  CHECK(*rep.entries[0].order_index < 250);
  CHECK(*rep.entries[0].certified_accuracy <= rep.median_smoothed_accuracy);
  CHECK(rep.median_smoothed_accuracy <= rep.max_sampled_accuracy);
}

TEST_CASE("reports are reproducible and round-trip through JSON") {
  Fixture f;
  const auto a = certify_grid(f.spec, f.params, f.triggers, smoothing(0.05, 200), {0.0, 0.05}, 1);
  const auto b = certify_grid(f.spec, f.params, f.triggers, smoothing(0.05, 200), {0.0, 0.05}, 3);
  CHECK(report_to_json(a) == report_to_json(b));
  const auto text = report_to_json(a);
  CHECK(text.find("\"schema\": \"certmark-report/1\"") != std::string::npos);
  CHECK(report_to_json(report_from_json(text)) == text);

  const auto dir = oracle::scratch("certify_report");
  save_report(dir / "r.json", a);
  CHECK(report_to_json(load_report(dir / "r.json")) == text);

  auto other = text;
  other.replace(other.find("certmark-report/1"), 17, "certmark-report/9");
  CHECK_THROWS(report_from_json(other));
}

TEST_CASE("timestamp follows SOURCE_DATE_EPOCH") {
  ::unsetenv("SOURCE_DATE_EPOCH");
  CHECK(report_timestamp() == "1970-01-01T00:00:00Z");
  ::setenv("SOURCE_DATE_EPOCH", "86461", 1);
  CHECK(report_timestamp() == "1970-01-02T00:01:01Z");
  ::unsetenv("SOURCE_DATE_EPOCH");
}

TEST_CASE("radii must be finite, non-negative and ascending") {
  Fixture f;
  const auto cfg = smoothing(0.05, 20);
  CHECK_THROWS_AS(certify_grid(f.spec, f.params, f.triggers, cfg, {}), std::invalid_argument);
  CHECK_THROWS_AS(certify_grid(f.spec, f.params, f.triggers, cfg, {-0.1}), std::invalid_argument);
  CHECK_THROWS_AS(certify_grid(f.spec, f.params, f.triggers, cfg, {0.2, 0.1}), std::invalid_argument);
  CHECK_THROWS_AS(certify_grid(f.spec, f.params, f.triggers, cfg, {0.0, std::nan("")}), std::invalid_argument);
}

TEST_CASE("certificate table layout") {
  const std::vector<double> radii{0.2, 0.4, 0.6, 0.8, 1.0, 1.2};
  const auto rep = fixture_report(radii, {1.0, 1.0, 1.0, 0.93, 0.51, 0.05});
  const std::string expected =
      "Radius |  0.200 |  0.400 |  0.600 | 0.800 | 1.000 | 1.200\n"
      "-------+--------+--------+--------+-------+-------+------\n"
      "model  | 100.0% | 100.0% | 100.0% | 93.0% | 51.0% |  5.0%\n";
  CHECK(format_certificate_table({{"model", rep}}) == expected);

  auto partial = fixture_report({0.2, 0.4}, {0.9, 0.0});
  partial.entries[1].certified_accuracy.reset();
  const auto table = format_certificate_table({{"a", partial}});
  CHECK(table.find("90.0% |     -") != std::string::npos);
}

TEST_CASE("trade-off table layout") {
  TradeoffRow row;
  row.sigma = 1.2;
  row.test_acc = 0.8418;
  row.report = fixture_report({1.2}, {0.74});
  TradeoffRow bad;
  bad.sigma = 2.0;
  bad.error = "diverged";
  const std::string expected =
      "sigma | test acc | r=1.200\n"
      "------+----------+--------\n"
      "1.200 |    84.2% |   74.0%\n"
      "2.000 | diverged |       -\n";
  CHECK(format_tradeoff_table({row, bad}) == expected);
}

TEST_CASE("allowance index") {
  CHECK(median_allowance_index(1) == 0);
  CHECK(median_allowance_index(100) == 65);
  CHECK(median_allowance_index(1000) == 500 + 48);
  CHECK(median_allowance_index(10) == 9);
  CHECK_THROWS_AS(median_allowance_index(0), std::invalid_argument);
}

TEST_CASE("verification of the unattacked model and of far models") {
  Fixture f;
  const auto cfg = smoothing(0.05, 300);
  const auto rep = certify_grid(f.spec, f.params, f.triggers, cfg, {0.0, 0.02, 0.05});
  REQUIRE(rep.entries[1].certified_accuracy);

  std::vector<AttackedModel> models;
  models.push_back({"same", f.params, 0.0});
  const auto far = gaussian_perturbation(f.params, 1.0, 8);
  models.push_back({"far", far, 1.5 * 0.05});
  const auto res = verify_certificate(f.spec, rep, models, f.triggers, cfg);
  CHECK(res.violations.empty());
  CHECK(res.checks.size() >= 2);
  REQUIRE(res.skipped.size() == 1);
  CHECK(res.skipped[0] == "far");
  for (const auto& c : res.checks) CHECK(c.estimate <= c.estimate_upper);

  const auto j = verify_to_json(res);
  CHECK(j.find("\"violations\": []") != std::string::npos);

  auto wrong = cfg;
  wrong.sigma = 0.1;
  CHECK_THROWS_AS(verify_certificate(f.spec, rep, models, f.triggers, wrong), std::invalid_argument);
  const auto other = ModelSpec::mlp({8, 8, 1}, {8}, 4);
  CHECK_THROWS_AS(verify_certificate(other, rep, {}, f.triggers, cfg), std::invalid_argument);
}

TEST_CASE("a one-point sweep equals embedding then certifying") {
  Fixture f;
  const auto init = init_params(f.spec, 11);
  SweepConfig sc;
  sc.embed.replay_count = 2;
  sc.embed.noise_samples = 2;
  sc.embed.warmup_epochs = 1;
  sc.embed.total_epochs = 2;
  sc.embed.batch_size = 32;
  sc.embed.seed = 4;
  sc.optimizer = OptimizerConfig::adam(0.01);
  sc.smoothing = smoothing(1.0, 50);
  sc.radii = {0.0, 0.01};
  const auto rows = sweep_noise_tradeoff(f.spec, init, f.data, f.data, f.triggers, {0.03}, sc);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].report);

  auto ecfg = sc.embed;
  ecfg.max_noise = 0.03;
  OptimizerState opt(sc.optimizer, init.size());
  const auto embedded = embed_watermark(f.spec, init, f.data, f.triggers, ecfg, opt);
  auto scfg = sc.smoothing;
  scfg.sigma = 0.03;
  const auto rep = certify_grid(f.spec, embedded.params, f.triggers, scfg, sc.radii);
  CHECK(report_to_json(*rows[0].report) == report_to_json(rep));
  CHECK(*rows[0].test_acc == accuracy(f.spec, embedded.params, f.data.images, f.data.labels));

  CHECK_THROWS_AS(sweep_noise_tradeoff(f.spec, init, f.data, f.data, f.triggers, {0.2, 0.1}, sc),
                  std::invalid_argument);
  CHECK_THROWS_AS(sweep_noise_tradeoff(f.spec, init, f.data, f.data, f.triggers, {}, sc), std::invalid_argument);
}
