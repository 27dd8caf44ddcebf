#pragma once

#include "certmark/embed.hpp"
#include "certmark/smoothing.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace certmark {

inline constexpr const char* kReportSchema = "certmark-report/1";

struct CertificateEntry {
  double radius = 0.0;
  double radius_over_sigma = 0.0;
  double p_lower = 0.5;
  std::optional<std::int64_t> order_index;   // empty: uncertified at this radius
  std::optional<double> certified_accuracy;
};

struct CertificateReport {
  std::string schema = kReportSchema;
  std::string model_digest;  // hex, see model_digest()
  std::string spec_digest;
  SmoothingConfig smoothing;
  std::vector<CertificateEntry> entries;
  double median_smoothed_accuracy = 0.0;
  double max_sampled_accuracy = 0.0;
  std::string generated_at;
};

/// UTC timestamp from SOURCE_DATE_EPOCH, else the epoch itself, so reports are reproducible.
std::string report_timestamp();

/// One sample of n noisy trigger accuracies, reused for every radius. Radii must be >= 0 and ascending.
CertificateReport certify_grid(const ModelSpec& spec, const ParamVector& params, const TriggerSet& triggers,
                               const SmoothingConfig& cfg, const std::vector<double>& radii, int jobs = 1);

/// Entries computed from an existing sample.
std::vector<CertificateEntry> certificate_entries(const AccuracySample& samples, const SmoothingConfig& cfg,
                                                  const std::vector<double>& radii);

std::string report_to_json(const CertificateReport& report);
CertificateReport report_from_json(const std::string& text);
void save_report(const std::filesystem::path& path, const CertificateReport& report);
CertificateReport load_report(const std::filesystem::path& path);

struct AttackedModel {
  std::string label;
  ParamVector params;
  double distance = 0.0;  // ||params - certified params||_2
};

struct CertificateCheck {
  std::string label;
  double distance = 0.0;
  double radius = 0.0;
  double certified = 0.0;
  double estimate = 0.0;         // fresh median estimate
  double estimate_upper = 0.0;   // estimate plus the order-statistic allowance
  bool violated = false;
};

struct VerifyResult {
  std::vector<CertificateCheck> checks;
  std::vector<CertificateCheck> violations;
  std::vector<std::string> skipped;  // outside all certified radii
};

/// Rank of the median plus three standard errors of the median order statistic (0.5 sqrt(n) ranks each).
std::int64_t median_allowance_index(std::int64_t n);

/// Re-estimates the smoothed median of every attacked model with fresh seeds derived from cfg.root_seed and
/// checks it against each certified entry whose radius exceeds the model's distance.
/// cfg.sigma must equal the report's sigma.
VerifyResult verify_certificate(const ModelSpec& spec, const CertificateReport& report,
                                const std::vector<AttackedModel>& attacked, const TriggerSet& triggers,
                                const SmoothingConfig& cfg, int jobs = 1);

std::string verify_to_json(const VerifyResult& result);

struct SweepConfig {
  EmbedConfig embed;         // max_noise is replaced by each sigma
  OptimizerConfig optimizer;
  SmoothingConfig smoothing; // sigma is replaced by each sigma
  std::vector<double> radii;
};

struct TradeoffRow {
  double sigma = 0.0;
  std::optional<double> test_acc;
  std::optional<CertificateReport> report;
  std::optional<std::string> error;  // divergence diagnostic
};

/// Embeds with noise ceiling sigma and certifies with smoothing sigma, per sigma. Sigmas must be > 0 and ascending.
std::vector<TradeoffRow> sweep_noise_tradeoff(const ModelSpec& spec, const ParamVector& init, const Dataset& train,
                                              const Dataset& test, const TriggerSet& triggers,
                                              const std::vector<double>& sigmas, const SweepConfig& cfg,
                                              int jobs = 1);

/// Aligned plain text: one row per labelled report, one column per radius, "-" where uncertified.
std::string format_certificate_table(const std::vector<std::pair<std::string, CertificateReport>>& rows);
std::string format_tradeoff_table(const std::vector<TradeoffRow>& rows);

}  // namespace certmark
