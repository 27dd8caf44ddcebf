#pragma once

#include "certmark/data.hpp"
#include "certmark/network.hpp"
#include "certmark/smoothing.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace certmark {

enum class AttackKind { Finetune, DistillHard, DistillSoft, Pgd, Prune, Shift, Quantize };

std::string to_string(AttackKind kind);
/// Throws std::invalid_argument listing the valid kinds.
AttackKind attack_kind_from_string(const std::string& name);
const std::vector<std::string>& attack_kind_names();

struct AttackConfig {
  AttackKind kind = AttackKind::Finetune;
  double lr = 1e-4;
  int epochs = 10;
  double reg_lambda = 0.0;         // l2 penalty reg_lambda * ||theta||^2 (distillation)
  std::optional<double> radius;    // pgd only
  int pgd_steps = 40;
  double magnitude = 0.0;          // prune fraction, shift std, or quantization bits
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Optional per-epoch instrumentation.
struct AttackMonitor {
  const TriggerSet* triggers = nullptr;
  const Dataset* test = nullptr;
  std::optional<SmoothingConfig> smoothing;  // adds a smoothed trigger accuracy per record
  int jobs = 1;
};

struct AttackRecord {
  int epoch = 0;
  double l2_from_init = 0.0;
  double l2_from_prev = 0.0;
  std::optional<double> trigger_acc_raw;
  std::optional<double> trigger_acc_smoothed;
  std::optional<double> test_acc;
};

struct AttackTrajectory {
  AttackKind kind = AttackKind::Finetune;
  double lr = 0.0;
  std::vector<AttackRecord> records;  // records[0] is the unattacked model
  ParamVector final_params;
  std::optional<std::string> aborted;  // divergence diagnostic, trajectory is partial
};

/// Adam on ground-truth labels from the adversary's own data.
AttackTrajectory finetune_attack(const ModelSpec& spec, const ParamVector& params, const Dataset& labeled,
                                 const AttackConfig& cfg, const AttackMonitor& monitor = {});

/// Adam on labels produced once by the frozen victim: argmax (hard) or the full softmax (soft).
AttackTrajectory distill_attack(const ModelSpec& spec, const ParamVector& victim, const ImageBatch& unlabeled,
                                const AttackConfig& cfg, const AttackMonitor& monitor = {});

/// Loss with a target distribution plus reg_lambda * ||theta||^2, and its gradient.
LossGrad<float> regularized_loss_and_grad(const ModelSpec& spec, const ParamVector& params, const ImageBatch& batch,
                                          const Matrix<float>& targets, double reg_lambda);

struct PgdResult {
  ParamVector params;           // iterate with the lowest accuracy on the attacked data
  double accuracy = 0.0;
  double distance = 0.0;        // ||params - start||_2
  std::vector<double> iterate_distances;
};

/// Normalised gradient ascent on the loss, step lr*radius, projected onto the l2 ball around the start
/// after every step.
PgdResult pgd_parameter_attack(const ModelSpec& spec, const ParamVector& params, const ImageBatch& images,
                               std::span<const int> labels, double radius, int steps, double lr);

/// Projects `theta` onto the closed l2 ball of `radius` around `center`.
void project_l2_ball(ParamVector& theta, const ParamVector& center, double radius);

/// prune: zero the `magnitude` fraction of smallest-|w| entries; shift: add N(0, magnitude^2);
/// quantize: 2^bits uniform levels over [min, max] of each weight or bias tensor.
ParamVector perturbation_attack(const ModelSpec& spec, const ParamVector& params, AttackKind kind, double magnitude,
                                std::uint64_t seed);

struct L2Row {
  int epoch = 0;
  double cumulative = 0.0;  // from the unattacked model
  double increment = 0.0;   // from the previous epoch
};

/// Per-epoch distance table (epochs >= 1).
std::vector<L2Row> l2_trajectory(const AttackTrajectory& trajectory);

void write_trajectory(std::ostream& os, const AttackTrajectory& trajectory);
AttackTrajectory read_trajectory(std::istream& is);

}  // namespace certmark
