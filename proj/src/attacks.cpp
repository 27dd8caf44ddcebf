#include "certmark/attacks.hpp"

#include "certmark/embed.hpp"
#include "certmark/network.hpp"
#include "certmark/optimizer.hpp"
#include "certmark/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

namespace certmark {

namespace {
const std::vector<std::string> kKindNames = {"finetune", "distill-hard", "distill-soft", "pgd",
                                             "prune",    "shift",        "quantize"};
}

const std::vector<std::string>& attack_kind_names() { return kKindNames; }

std::string to_string(AttackKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

AttackKind attack_kind_from_string(const std::string& name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == name) return static_cast<AttackKind>(i);
  std::string valid;
  for (const auto& k : kKindNames) valid += (valid.empty() ? "" : ", ") + k;
  throw std::invalid_argument("unknown attack kind '" + name + "'; valid kinds: " + valid);
}

void AttackConfig::validate() const {
  if (kind == AttackKind::Pgd) {
    if (!radius || !(*radius > 0.0)) throw std::invalid_argument("pgd attack needs a radius > 0");
    if (pgd_steps < 0) throw std::invalid_argument("pgd steps must be >= 0");
  } else if (radius) {
    throw std::invalid_argument("radius is only meaningful for the pgd attack");
  }
  if (epochs < 0) throw std::invalid_argument("attack epochs must be >= 0");
  if (!(lr >= 0.0)) throw std::invalid_argument("attack learning rate must be >= 0");
  if (!(reg_lambda >= 0.0)) throw std::invalid_argument("reg_lambda must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("attack batch size must be >= 1");
  if (kind == AttackKind::Prune && !(magnitude >= 0.0 && magnitude < 1.0))
    throw std::invalid_argument("prune fraction must lie in [0,1)");
  if (kind == AttackKind::Shift && !(magnitude >= 0.0)) throw std::invalid_argument("shift std must be >= 0");
  if (kind == AttackKind::Quantize && !(magnitude >= 2.0 && magnitude <= 32.0 && magnitude == std::floor(magnitude)))
    throw std::invalid_argument("quantize bits must be an integer in [2, 32]");
}

LossGrad<float> regularized_loss_and_grad(const ModelSpec& spec, const ParamVector& params, const ImageBatch& batch,
                                          const Matrix<float>& targets, double reg_lambda) {
  auto lg = loss_and_grad<float>(spec, params, batch, targets);
  if (reg_lambda > 0.0) {
    lg.loss += static_cast<float>(reg_lambda * params.cast<double>().squaredNorm());
    lg.grad += static_cast<float>(2.0 * reg_lambda) * params;
  }
  return lg;
}

namespace {

AttackRecord observe(const ModelSpec& spec, const ParamVector& theta, const ParamVector& start,
                     const ParamVector& prev, int epoch, const AttackMonitor& monitor) {
  AttackRecord r;
  r.epoch = epoch;
  r.l2_from_init = l2_distance(theta, start);
  r.l2_from_prev = l2_distance(theta, prev);
  if (monitor.triggers) {
    r.trigger_acc_raw = accuracy(spec, theta, monitor.triggers->images, monitor.triggers->target_labels);
    if (monitor.smoothing) {
      const auto s = sample_accuracies(trigger_accuracy_fn(spec, *monitor.triggers), theta, *monitor.smoothing,
                                       monitor.jobs);
      r.trigger_acc_smoothed = smoothed_trigger_accuracy(s);
    }
  }
  if (monitor.test) r.test_acc = accuracy(spec, theta, monitor.test->images, monitor.test->labels);
  return r;
}

// Adam over (images, targets) for cfg.epochs with per-epoch records.
AttackTrajectory run_training_attack(const ModelSpec& spec, const ParamVector& start, const ImageBatch& images,
                                     const Matrix<float>& targets, const AttackConfig& cfg,
                                     const AttackMonitor& monitor) {
  AttackTrajectory traj;
  traj.kind = cfg.kind;
  traj.lr = cfg.lr;
  traj.final_params = start;
  ParamVector& theta = traj.final_params;
  traj.records.push_back(observe(spec, theta, start, theta, 0, monitor));

  OptimizerState opt(OptimizerConfig::adam(cfg.lr), theta.size());
  const Eigen::Index n = images.cols();
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const ParamVector prev = theta;
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    try {
      for (Eigen::Index s = 0; s < n; s += cfg.batch_size) {
        const auto len = static_cast<std::size_t>(std::min<Eigen::Index>(cfg.batch_size, n - s));
        std::span<const int> idx(order.data() + s, len);
        const ImageBatch batch = gather_columns(images, idx);
        const Matrix<float> tgt = gather_columns(targets, idx);
        const auto lg = regularized_loss_and_grad(spec, theta, batch, tgt, cfg.reg_lambda);
        opt.step(theta, lg.grad);
      }
    } catch (const DivergenceError& e) {
      theta = prev;
      traj.aborted = "diverged in epoch " + std::to_string(epoch) + ": " + e.what();
      return traj;
    }
    traj.records.push_back(observe(spec, theta, start, prev, epoch, monitor));
  }
  return traj;
}

}  // namespace

AttackTrajectory finetune_attack(const ModelSpec& spec, const ParamVector& params, const Dataset& labeled,
                                 const AttackConfig& cfg, const AttackMonitor& monitor) {
  cfg.validate();
  if (cfg.kind != AttackKind::Finetune) throw std::invalid_argument("finetune_attack needs kind=finetune");
  return run_training_attack(spec, params, labeled.images, one_hot(labeled.labels, spec.classes()), cfg, monitor);
}

AttackTrajectory distill_attack(const ModelSpec& spec, const ParamVector& victim, const ImageBatch& unlabeled,
                                const AttackConfig& cfg, const AttackMonitor& monitor) {
  cfg.validate();
  Matrix<float> targets;
  if (cfg.kind == AttackKind::DistillHard)
    targets = one_hot(predict(spec, victim, unlabeled), spec.classes());
  else if (cfg.kind == AttackKind::DistillSoft)
    targets = predict_proba(spec, victim, unlabeled);
  else
    throw std::invalid_argument("distill_attack needs kind distill-hard or distill-soft");
  return run_training_attack(spec, victim, unlabeled, targets, cfg, monitor);
}

void project_l2_ball(ParamVector& theta, const ParamVector& center, double radius) {
  const double d = l2_distance(theta, center);
  if (d <= radius) return;
  double scale = radius / d;
  // Float rounding can leave the projected point a hair outside; shrink until it is not.
  for (int attempt = 0; attempt < 8; ++attempt) {
    ParamVector candidate = center + ((theta - center).cast<double>() * scale).cast<float>();
    if (l2_distance(candidate, center) <= radius) {
      theta = std::move(candidate);
      return;
    }
    scale *= 1.0 - 1e-6;
  }
  theta = center;
}

PgdResult pgd_parameter_attack(const ModelSpec& spec, const ParamVector& params, const ImageBatch& images,
                               std::span<const int> labels, double radius, int steps, double lr) {
  if (!(radius > 0.0)) throw std::invalid_argument("pgd radius must be > 0");
  if (steps < 0) throw std::invalid_argument("pgd steps must be >= 0");
  PgdResult best{params, accuracy(spec, params, images, labels), 0.0, {}};
  ParamVector theta = params;
  const double step = lr * radius;
  for (int s = 0; s < steps; ++s) {
    const ParamVector g = loss_and_grad<float>(spec, theta, images, labels).grad;
    const double gnorm = g.cast<double>().norm();
    if (gnorm == 0.0) break;
    theta = (theta.cast<double>() + g.cast<double>() * (step / gnorm)).cast<float>();
    project_l2_ball(theta, params, radius);
    const double dist = l2_distance(theta, params);
    best.iterate_distances.push_back(dist);
    const double acc = accuracy(spec, theta, images, labels);
    if (acc <= best.accuracy) {
      best.params = theta;
      best.accuracy = acc;
      best.distance = dist;
    }
  }
  return best;
}

ParamVector perturbation_attack(const ModelSpec& spec, const ParamVector& params, AttackKind kind, double magnitude,
                                std::uint64_t seed) {
  if (params.size() != spec.param_count()) throw ShapeError("perturbation_attack: params do not match spec");
  ParamVector out = params;
  switch (kind) {
    case AttackKind::Prune: {
      if (!(magnitude >= 0.0 && magnitude < 1.0)) throw std::invalid_argument("prune fraction must lie in [0,1)");
      const auto count = static_cast<std::size_t>(std::floor(magnitude * static_cast<double>(params.size())));
      if (count == 0) return out;
      std::vector<int> idx(static_cast<std::size_t>(params.size()));
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(),
                       [&](int a, int b) { return std::abs(params[a]) < std::abs(params[b]); });
      for (std::size_t i = 0; i < count; ++i) out[idx[i]] = 0.0f;
      return out;
    }
    case AttackKind::Shift: {
      if (!(magnitude >= 0.0)) throw std::invalid_argument("shift std must be >= 0");
      return gaussian_perturbation(params, magnitude, seed);
    }
    case AttackKind::Quantize: {
      if (!(magnitude >= 2.0 && magnitude <= 32.0 && magnitude == std::floor(magnitude)))
        throw std::invalid_argument("quantize bits must be an integer in [2, 32]");
      const double levels = std::ldexp(1.0, static_cast<int>(magnitude)) - 1.0;
      auto quantize = [&](Eigen::Index offset, Eigen::Index len) {
        auto seg = out.segment(offset, len);
        const double lo = seg.minCoeff();
        const double hi = seg.maxCoeff();
        if (hi <= lo) return;
        const double step = (hi - lo) / levels;
        for (auto& v : seg) v = static_cast<float>(lo + std::round((v - lo) / step) * step);
      };
      for (const auto& b : spec.blocks()) {
        quantize(b.offset, b.weight_count());
        quantize(b.offset + b.weight_count(), b.rows);
      }
      return out;
    }
    default:
      throw std::invalid_argument("perturbation_attack handles prune, shift and quantize");
  }
}

std::vector<L2Row> l2_trajectory(const AttackTrajectory& trajectory) {
  if (trajectory.records.empty()) throw std::invalid_argument("l2_trajectory: empty trajectory");
  std::vector<L2Row> rows;
  for (const auto& r : trajectory.records)
    if (r.epoch >= 1) rows.push_back({r.epoch, r.l2_from_init, r.l2_from_prev});
  return rows;
}

namespace {

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::optional<double> opt_value(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

void write_trajectory(std::ostream& os, const AttackTrajectory& t) {
  for (const auto& r : t.records) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(t.kind);
    j["lr"] = t.lr;
    j["epoch"] = r.epoch;
    j["l2_from_init"] = r.l2_from_init;
    j["l2_from_prev"] = r.l2_from_prev;
    j["trigger_acc_raw"] = opt_json(r.trigger_acc_raw);
    j["trigger_acc_smoothed"] = opt_json(r.trigger_acc_smoothed);
    j["test_acc"] = opt_json(r.test_acc);
    os << j.dump() << '\n';
  }
  if (t.aborted) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(t.kind);
    j["lr"] = t.lr;
    j["aborted"] = *t.aborted;
    os << j.dump() << '\n';
  }
}

AttackTrajectory read_trajectory(std::istream& is) {
  AttackTrajectory t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    t.kind = attack_kind_from_string(j.at("kind").get<std::string>());
    t.lr = j.at("lr").get<double>();
    if (j.contains("aborted")) {
      t.aborted = j["aborted"].get<std::string>();
      continue;
    }
    AttackRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.l2_from_init = j.at("l2_from_init").get<double>();
    r.l2_from_prev = j.at("l2_from_prev").get<double>();
    r.trigger_acc_raw = opt_value(j, "trigger_acc_raw");
    r.trigger_acc_smoothed = opt_value(j, "trigger_acc_smoothed");
    r.test_acc = opt_value(j, "test_acc");
    t.records.push_back(r);
  }
  return t;
}

}  // namespace certmark
