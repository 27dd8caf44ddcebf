#include "certmark/optimizer.hpp"

#include <cmath>

namespace certmark {

OptimizerState::OptimizerState(OptimizerConfig config, Eigen::Index size)
    : config_(config), m_(Vector<double>::Zero(size)) {
  if (config_.kind == OptimizerKind::Adam) v_ = Vector<double>::Zero(size);
}

void OptimizerState::step(ParamVector& params, const ParamVector& grad) {
  if (params.size() != grad.size() || params.size() != m_.size())
    throw ShapeError("optimizer step: params " + std::to_string(params.size()) + ", grad " +
                     std::to_string(grad.size()) + ", state " + std::to_string(m_.size()));
  if (!grad.allFinite()) throw DivergenceError("optimizer step: non-finite gradient");
  ++steps_;
  const double lr = config_.lr;
  const double wd = config_.weight_decay;

  if (config_.kind == OptimizerKind::SgdMomentum) {
    const double mu = config_.momentum;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grad[i]) + wd * params[i];
      if (mu == 0.0) {
        params[i] = static_cast<float>(params[i] - lr * g);
        continue;
      }
      m_[i] = mu * m_[i] + g;
      params[i] = static_cast<float>(params[i] - lr * m_[i]);
    }
    return;
  }

  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grad[i]) + wd * params[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] = static_cast<float>(params[i] - lr * mhat / (std::sqrt(vhat) + config_.eps));
  }
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd" || name == "sgd-momentum") return OptimizerKind::SgdMomentum;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

}  // namespace certmark
