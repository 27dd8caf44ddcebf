#include "certmark/certify.hpp"

#include "certmark/network.hpp"
#include "certmark/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

namespace certmark {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::uint64_t kVerifyStream = 0x766572696679ULL;

void check_radii(const std::vector<double>& radii) {
  if (radii.empty()) throw std::invalid_argument("radius grid is empty");
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (!(radii[i] >= 0.0) || !std::isfinite(radii[i])) throw std::invalid_argument("radii must be finite and >= 0");
    if (i > 0 && radii[i] < radii[i - 1]) throw std::invalid_argument("radii must be ascending");
  }
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string align_table(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], row[c].size());
    }
  std::ostringstream os;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const auto& cell = cells[r][c];
      if (c == 0)
        line += cell + std::string(width[c] - cell.size(), ' ');
      else
        line += " | " + std::string(width[c] - cell.size(), ' ') + cell;
    }
    os << line << '\n';
    if (r == 0) {
      std::string rule;
      for (std::size_t c = 0; c < width.size(); ++c) rule += (c ? "-+-" : "") + std::string(width[c], '-');
      os << rule << '\n';
    }
  }
  return os.str();
}

}  // namespace

std::string report_timestamp() {
  std::time_t t = 0;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(env, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<CertificateEntry> certificate_entries(const AccuracySample& samples, const SmoothingConfig& cfg,
                                                  const std::vector<double>& radii) {
  check_radii(radii);
  std::vector<CertificateEntry> out;
  for (double r : radii) {
    CertificateEntry e;
    e.radius = r;
    e.radius_over_sigma = r / cfg.sigma;
    e.p_lower = percentile_for_radius(cfg.sigma, r);
    if (const auto b = certified_lower_bound(samples, cfg, r)) {
      e.order_index = b->index;
      e.certified_accuracy = b->bound;
    }
    out.push_back(e);
  }
  return out;
}

CertificateReport certify_grid(const ModelSpec& spec, const ParamVector& params, const TriggerSet& triggers,
                               const SmoothingConfig& cfg, const std::vector<double>& radii, int jobs) {
  cfg.validate();
  check_radii(radii);
  const auto samples = sample_accuracies(trigger_accuracy_fn(spec, triggers), params, cfg, jobs);
  CertificateReport rep;
  rep.model_digest = hex_digest(model_digest(spec, params));
  rep.spec_digest = hex_digest(spec.digest());
  rep.smoothing = cfg;
  rep.entries = certificate_entries(samples, cfg, radii);
  rep.median_smoothed_accuracy = smoothed_trigger_accuracy(samples);
  rep.max_sampled_accuracy = samples.sorted.back();
  rep.generated_at = report_timestamp();
  return rep;
}

std::string report_to_json(const CertificateReport& rep) {
  ojson j;
  j["schema"] = rep.schema;
  j["model_digest"] = rep.model_digest;
  j["spec_digest"] = rep.spec_digest;
  j["smoothing"] = {{"sigma", rep.smoothing.sigma},
                    {"n", rep.smoothing.n},
                    {"confidence", rep.smoothing.confidence},
                    {"root_seed", rep.smoothing.root_seed}};
  j["entries"] = ojson::array();
  for (const auto& e : rep.entries) {
    ojson row;
    row["radius"] = e.radius;
    row["radius_over_sigma"] = e.radius_over_sigma;
    row["p_lower"] = e.p_lower;
    row["order_index"] = e.order_index ? ojson(*e.order_index) : ojson(nullptr);
    row["certified_accuracy"] = e.certified_accuracy ? ojson(*e.certified_accuracy) : ojson(nullptr);
    j["entries"].push_back(row);
  }
  j["median_smoothed_accuracy"] = rep.median_smoothed_accuracy;
  j["max_sampled_accuracy"] = rep.max_sampled_accuracy;
  j["generated_at"] = rep.generated_at;
  return j.dump(2) + "\n";
}

CertificateReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  CertificateReport rep;
  rep.schema = j.at("schema").get<std::string>();
  if (rep.schema != kReportSchema) throw std::invalid_argument("unsupported report schema '" + rep.schema + "'");
  rep.model_digest = j.at("model_digest").get<std::string>();
  rep.spec_digest = j.at("spec_digest").get<std::string>();
  const auto& s = j.at("smoothing");
  rep.smoothing.sigma = s.at("sigma").get<double>();
  rep.smoothing.n = s.at("n").get<std::int64_t>();
  rep.smoothing.confidence = s.at("confidence").get<double>();
  rep.smoothing.root_seed = s.at("root_seed").get<std::uint64_t>();
  for (const auto& row : j.at("entries")) {
    CertificateEntry e;
    e.radius = row.at("radius").get<double>();
    e.radius_over_sigma = row.at("radius_over_sigma").get<double>();
    e.p_lower = row.at("p_lower").get<double>();
    if (!row.at("order_index").is_null()) e.order_index = row["order_index"].get<std::int64_t>();
    if (!row.at("certified_accuracy").is_null()) e.certified_accuracy = row["certified_accuracy"].get<double>();
    rep.entries.push_back(e);
  }
  rep.median_smoothed_accuracy = j.at("median_smoothed_accuracy").get<double>();
  rep.max_sampled_accuracy = j.at("max_sampled_accuracy").get<double>();
  rep.generated_at = j.at("generated_at").get<std::string>();
  return rep;
}

void save_report(const std::filesystem::path& path, const CertificateReport& report) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write report " + path.string());
  os << report_to_json(report);
  if (!os) throw std::runtime_error("failed writing report " + path.string());
}

CertificateReport load_report(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read report " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return report_from_json(ss.str());
}

std::int64_t median_allowance_index(std::int64_t n) {
  if (n < 1) throw std::invalid_argument("median_allowance_index: n must be >= 1");
  const auto allowance = static_cast<std::int64_t>(std::ceil(1.5 * std::sqrt(static_cast<double>(n))));
  return std::min(n - 1, n / 2 + allowance);
}

VerifyResult verify_certificate(const ModelSpec& spec, const CertificateReport& report,
                                const std::vector<AttackedModel>& attacked, const TriggerSet& triggers,
                                const SmoothingConfig& cfg, int jobs) {
  cfg.validate();
  if (report.spec_digest != hex_digest(spec.digest()))
    throw std::invalid_argument("report was produced for a different model architecture");
  if (cfg.sigma != report.smoothing.sigma)
    throw std::invalid_argument("verification sigma differs from the certified sigma");

  VerifyResult result;
  const auto fn = trigger_accuracy_fn(spec, triggers);
  for (std::size_t m = 0; m < attacked.size(); ++m) {
    const auto& a = attacked[m];
    if (a.params.size() != spec.param_count()) throw ShapeError("attacked model '" + a.label + "' has wrong size");
    std::vector<const CertificateEntry*> covering;
    for (const auto& e : report.entries)
      if (e.certified_accuracy && a.distance < e.radius) covering.push_back(&e);
    if (covering.empty()) {
      result.skipped.push_back(a.label);
      continue;
    }
    SmoothingConfig fresh = cfg;
    fresh.root_seed = mix_seed(cfg.root_seed ^ kVerifyStream, m);
    const auto samples = sample_accuracies(fn, a.params, fresh, jobs);
    const double estimate = smoothed_trigger_accuracy(samples);
    const double upper = samples.sorted[static_cast<std::size_t>(median_allowance_index(samples.n()))];
    for (const auto* e : covering) {
      CertificateCheck c{a.label, a.distance, e->radius, *e->certified_accuracy, estimate, upper, false};
      c.violated = upper < c.certified;
      result.checks.push_back(c);
      if (c.violated) result.violations.push_back(c);
    }
  }
  return result;
}

std::string verify_to_json(const VerifyResult& result) {
  auto rows = [](const std::vector<CertificateCheck>& checks) {
    ojson arr = ojson::array();
    for (const auto& c : checks)
      arr.push_back(ojson{{"label", c.label},
                          {"distance", c.distance},
                          {"radius", c.radius},
                          {"certified", c.certified},
                          {"estimate", c.estimate},
                          {"estimate_upper", c.estimate_upper},
                          {"violated", c.violated}});
    return arr;
  };
  ojson j;
  j["violations"] = rows(result.violations);
  j["checks"] = rows(result.checks);
  j["skipped"] = result.skipped;
  return j.dump(2) + "\n";
}

std::vector<TradeoffRow> sweep_noise_tradeoff(const ModelSpec& spec, const ParamVector& init, const Dataset& train,
                                              const Dataset& test, const TriggerSet& triggers,
                                              const std::vector<double>& sigmas, const SweepConfig& cfg, int jobs) {
  if (sigmas.empty()) throw std::invalid_argument("sigma sweep is empty");
  for (std::size_t i = 0; i < sigmas.size(); ++i)
    if (!(sigmas[i] > 0.0) || (i > 0 && sigmas[i] <= sigmas[i - 1]))
      throw std::invalid_argument("sweep sigmas must be positive and ascending");
  check_radii(cfg.radii);

  std::vector<TradeoffRow> rows;
  for (double sigma : sigmas) {
    TradeoffRow row;
    row.sigma = sigma;
    EmbedConfig ecfg = cfg.embed;
    ecfg.max_noise = sigma;
    SmoothingConfig scfg = cfg.smoothing;
    scfg.sigma = sigma;
    try {
      OptimizerState opt(cfg.optimizer, init.size());
      const auto embedded = embed_watermark(spec, init, train, triggers, ecfg, opt);
      row.test_acc = accuracy(spec, embedded.params, test.images, test.labels);
      row.report = certify_grid(spec, embedded.params, triggers, scfg, cfg.radii, jobs);
    } catch (const DivergenceError& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_certificate_table(const std::vector<std::pair<std::string, CertificateReport>>& rows) {
  std::vector<double> radii;
  for (const auto& [label, rep] : rows)
    for (const auto& e : rep.entries) radii.push_back(e.radius);
  std::sort(radii.begin(), radii.end());
  radii.erase(std::unique(radii.begin(), radii.end()), radii.end());

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Radius"};
  for (double r : radii) header.push_back(fixed(r, 3));
  cells.push_back(header);
  for (const auto& [label, rep] : rows) {
    std::vector<std::string> line{label};
    for (double r : radii) {
      const auto it = std::find_if(rep.entries.begin(), rep.entries.end(),
                                   [r](const CertificateEntry& e) { return e.radius == r; });
      line.push_back(it == rep.entries.end() || !it->certified_accuracy ? "-" : percent(*it->certified_accuracy));
    }
    cells.push_back(line);
  }
  return align_table(cells);
}

std::string format_tradeoff_table(const std::vector<TradeoffRow>& rows) {
  std::vector<double> radii;
  for (const auto& row : rows)
    if (row.report)
      for (const auto& e : row.report->entries) radii.push_back(e.radius);
  std::sort(radii.begin(), radii.end());
  radii.erase(std::unique(radii.begin(), radii.end()), radii.end());

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"sigma", "test acc"};
  for (double r : radii) header.push_back("r=" + fixed(r, 3));
  cells.push_back(header);
  for (const auto& row : rows) {
    std::vector<std::string> line{fixed(row.sigma, 3), row.test_acc ? percent(*row.test_acc) : "diverged"};
    for (double r : radii) {
      std::string cell = "-";
      if (row.report)
        for (const auto& e : row.report->entries)
          if (e.radius == r && e.certified_accuracy) cell = percent(*e.certified_accuracy);
      line.push_back(cell);
    }
    cells.push_back(line);
  }
  return align_table(cells);
}

}  // namespace certmark
