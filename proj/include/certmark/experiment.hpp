#pragma once

#include "certmark/attacks.hpp"
#include "certmark/certify.hpp"
#include "certmark/embed.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace certmark {

struct DatasetConfig {
  std::string source = "synthetic";  // "synthetic" or "idx"
  int train_count = 2000;            // synthetic only
  int test_count = 500;
  int classes = 10;
  Shape shape{16, 16, 1};
  std::filesystem::path train_images, train_labels, test_images, test_labels;  // idx only
};

struct ModelConfig {
  std::string arch = "small_cnn";  // or "mlp"
  std::vector<int> hidden{64};     // mlp only
};

struct AttackPlan {
  std::string label;
  AttackConfig config;
};

/// One experiment. Sub-seeds are derived from `seed` by apply_seed(); they are not read from the file.
struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TriggerOptions trigger;
  std::filesystem::path unrelated_images, unrelated_labels;  // optional source for the unrelated scheme
  OptimizerConfig optimizer;
  EmbedConfig embed;
  SmoothingConfig smoothing;
  std::vector<AttackPlan> attacks;
  std::vector<double> radii{0.0};
  std::filesystem::path out = "run";
  std::uint64_t seed = 0;
  std::optional<int> jobs;

  std::uint64_t data_seed = 0;
  std::uint64_t split_seed = 0;
  std::uint64_t init_seed = 0;

  void apply_seed(std::uint64_t root);
  void validate() const;
};

/// Parses a config document. Unknown keys are errors; relative paths resolve against `base_dir` and are
/// stored absolute, so the resolved document can be re-read from anywhere.
ExperimentConfig experiment_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);
/// Resolved config in stable key order; parses back to an equal config.
std::string experiment_to_json(const ExperimentConfig& cfg);

class DatasetNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentData {
  Dataset test;
  OwnerAdversarySplit split;
};

/// Training data split into owner and adversary halves plus the held-out test set.
ExperimentData load_experiment_data(const ExperimentConfig& cfg);
ModelSpec build_model(const ExperimentConfig& cfg, Shape input, int classes);
/// Architecture document stored next to checkpoints so later steps need no dataset.
std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& text);

/// Base images for fixed-label schemes come from the owner half.
TriggerSet build_triggers(const ExperimentConfig& cfg, const ExperimentData& data, const ModelSpec& spec);

}  // namespace certmark
