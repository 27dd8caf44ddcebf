#pragma once

#include "certmark/data.hpp"
#include "certmark/optimizer.hpp"

#include <iosfwd>
#include <optional>
#include <vector>

namespace certmark {

/// Watermark embedding schedule. The optimizer (and with it the learning rate) is passed separately.
struct EmbedConfig {
  double max_noise = 1.0;   // ceiling of the sigma ramp
  int replay_count = 20;    // k: noise levels per trigger batch, sigma_i = (i/k) * max_noise
  int noise_samples = 100;  // t: noise draws averaged per step
  int warmup_epochs = 5;    // trigger training starts after this many epochs
  int total_epochs = 100;
  int batch_size = 64;
  int trigger_batch_size = 0;  // 0: the whole trigger set is one batch
  // One accumulator per trigger batch,
  // divided by k*t before every step.
  bool literal_accumulation = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_acc = 0.0;
  std::optional<double> test_acc;
  double trigger_acc = 0.0;
  double l2_from_init = 0.0;
};

struct EmbedResult {
  ParamVector params;
  std::vector<EpochRecord> log;
};

/// Mean over t draws G ~ N(0, sigma^2 I) of the batch gradient at params + G. Draw j uses stream mix_seed(seed, j).
ParamVector noise_averaged_gradient(const ModelSpec& spec, const ParamVector& params, const ImageBatch& images,
                                    std::span<const int> labels, double sigma, int t, std::uint64_t seed);

/// Ordinary training for one epoch, then (past warm-up) noise-ramped trigger replay.
/// Throws DivergenceError naming the epoch when training blows up.
EmbedResult embed_watermark(const ModelSpec& spec, const ParamVector& params, const Dataset& train,
                            const TriggerSet& triggers, const EmbedConfig& cfg, OptimizerState& opt,
                            const Dataset* test = nullptr);

/// One optimizer pass over `data` in seeded minibatches.
void train_epoch(const ModelSpec& spec, ParamVector& params, const Dataset& data, int batch_size,
                 std::uint64_t seed, OptimizerState& opt);

/// Line-delimited JSON, one object per epoch.
void write_training_log(std::ostream& os, const std::vector<EpochRecord>& log);

}  // namespace certmark
