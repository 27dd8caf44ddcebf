#pragma once

#include "certmark/common.hpp"

namespace certmark {

enum class OptimizerKind { SgdMomentum, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  double lr = 0.05;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  static OptimizerConfig sgd(double lr, double momentum = 0.0, double weight_decay = 0.0) {
    return {OptimizerKind::SgdMomentum, lr, momentum, 0.9, 0.999, 1e-8, weight_decay};
  }
  static OptimizerConfig adam(double lr, double weight_decay = 0.0) {
    return {OptimizerKind::Adam, lr, 0.0, 0.9, 0.999, 1e-8, weight_decay};
  }
};

/// Optimizer config plus moment buffers sized to the parameter vector.
/// SGD: buf = momentum*buf + (g + wd*theta); theta -= lr*buf.
/// Adam: bias-corrected first/second moments, decay added to the gradient.
class OptimizerState {
 public:
  OptimizerState() = default;
  OptimizerState(OptimizerConfig config, Eigen::Index size);

  const OptimizerConfig& config() const { return config_; }
  OptimizerConfig& config() { return config_; }
  long step_count() const { return steps_; }
  const Vector<double>& first_moment() const { return m_; }
  const Vector<double>& second_moment() const { return v_; }

  /// Updates params in place. Rejects non-finite gradients and length mismatches.
  void step(ParamVector& params, const ParamVector& grad);

 private:
  OptimizerConfig config_;
  Vector<double> m_;  // momentum buffer (SGD) or first moment (Adam)
  Vector<double> v_;  // second moment (Adam only)
  long steps_ = 0;
};

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

}  // namespace certmark
