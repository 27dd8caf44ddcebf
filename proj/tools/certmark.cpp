// certmark: embed, certify, attack, verify and report on certifiable watermarks.

#include "certmark/attacks.hpp"
#include "certmark/certify.hpp"
#include "certmark/embed.hpp"
#include "certmark/experiment.hpp"
#include "certmark/network.hpp"
#include "certmark/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace certmark;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "global seed; overrides the config");
  cmd->add_option("--jobs", c.jobs, "worker threads (default: CERTMARK_JOBS, else 1)")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "run directory; overrides the config");
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + p.string());
}

// Config from --config, else from the run directory, else defaults; flags win.
ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg;
  try {
    if (!c.config.empty()) {
      if (!fs::exists(c.config)) throw UsageError("config not found: " + c.config);
      cfg = load_experiment(c.config);
    } else if (!c.out.empty() && fs::exists(fs::path(c.out) / "config.json")) {
      cfg = load_experiment(fs::path(c.out) / "config.json");
    } else {
      cfg.apply_seed(0);
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (c.seed) cfg.apply_seed(*c.seed);
  if (!c.out.empty()) cfg.out = fs::absolute(c.out).lexically_normal();
  if (c.jobs) cfg.jobs = *c.jobs;
  return cfg;
}

int jobs_of(const ExperimentConfig& cfg) { return resolve_jobs(cfg.jobs); }

ModelSpec load_spec(const fs::path& run) {
  const auto p = run / "spec.json";
  if (!fs::exists(p)) throw UsageError("no model architecture at " + p.string() + " (run embed first)");
  return spec_from_json(read_file(p));
}

std::string pct(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

std::string num(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------- embed

int cmd_embed(const Common& c, bool dry_run) {
  const auto cfg = resolve_config(c);
  if (dry_run) {
    std::cout << experiment_to_json(cfg);
    return kOk;
  }
  ExperimentData data;
  try {
    data = load_experiment_data(cfg);
  } catch (const DatasetNotFound& e) {
    std::cerr << e.what() << '\n';
    return kUsage;
  }
  const auto& owner = data.split.owner;
  const auto spec = build_model(cfg, owner.shape, owner.classes);
  const auto triggers = build_triggers(cfg, data, spec);
  const auto init = init_params(spec, cfg.init_seed);
  OptimizerState opt(cfg.optimizer, init.size());

  std::cout << "model: " << spec.param_count() << " parameters, " << owner.size() << " owner images, "
            << triggers.size() << " triggers (" << to_string(triggers.scheme) << ")\n";
  const auto result = embed_watermark(spec, init, owner, triggers, cfg.embed, opt, &data.test);

  fs::create_directories(cfg.out);
  save_checkpoint(cfg.out / "model.ckpt", spec, result.params);
  save_trigger_set(cfg.out / "triggers.bin", triggers);
  write_file(cfg.out / "spec.json", spec_to_json(spec));
  write_file(cfg.out / "config.json", experiment_to_json(cfg));
  std::ostringstream log;
  write_training_log(log, result.log);
  write_file(cfg.out / "train.log", log.str());

  if (!result.log.empty()) {
    const auto& last = result.log.back();
    std::cout << "epoch " << last.epoch << ": train " << pct(last.train_acc) << ", test "
              << (last.test_acc ? pct(*last.test_acc) : "-") << ", trigger " << pct(last.trigger_acc) << '\n';
  }
  std::cout << "wrote " << (cfg.out / "model.ckpt").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- certify

struct CertifyFlags {
  std::string checkpoint, triggers, report;
  std::optional<double> sigma, confidence;
  std::optional<std::int64_t> n;
  std::vector<double> radii;
};

int cmd_certify(const Common& c, const CertifyFlags& f) {
  const auto cfg = resolve_config(c);
  const auto spec = load_spec(cfg.out);
  const fs::path ckpt = f.checkpoint.empty() ? cfg.out / "model.ckpt" : fs::path(f.checkpoint);
  const fs::path trig = f.triggers.empty() ? cfg.out / "triggers.bin" : fs::path(f.triggers);
  const fs::path out = f.report.empty() ? cfg.out / "report.json" : fs::path(f.report);

  SmoothingConfig sc = cfg.smoothing;
  if (f.sigma) sc.sigma = *f.sigma;
  if (f.n) sc.n = *f.n;
  if (f.confidence) sc.confidence = *f.confidence;
  auto radii = f.radii.empty() ? cfg.radii : f.radii;
  try {
    sc.validate();
    if (!std::is_sorted(radii.begin(), radii.end())) throw std::invalid_argument("radii must be ascending");
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  ParamVector params;
  try {
    params = load_checkpoint(ckpt, spec);
  } catch (const CheckpointError& e) {
    std::cerr << "refusing to certify: " << e.what() << '\n';
    return kFailed;
  }
  const auto triggers = load_trigger_set(trig);
  const auto report = certify_grid(spec, params, triggers, sc, radii, jobs_of(cfg));
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  save_report(out, report);

  std::cout << "sigma " << sc.sigma << ", n " << sc.n << ", confidence " << sc.confidence
            << ", median smoothed trigger accuracy " << pct(report.median_smoothed_accuracy) << "\n\n";
  std::cout << format_certificate_table({{"trigger set", report}});
  std::cout << "\nwrote " << out.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- attack

struct AttackFlags {
  std::string kind, label, checkpoint;
  std::optional<double> lr, radius, magnitude, reg_lambda;
  std::optional<int> epochs, steps;
  std::int64_t monitor_n = 0;
};

AttackTrajectory one_step_trajectory(const ModelSpec& spec, const AttackConfig& a, const ParamVector& start,
                                     const ParamVector& attacked, const TriggerSet& triggers,
                                     const Dataset* test) {
  AttackTrajectory t;
  t.kind = a.kind;
  t.lr = a.lr;
  t.final_params = attacked;
  for (const auto* p : {&start, &attacked}) {
    AttackRecord r;
    r.epoch = p == &start ? 0 : 1;
    r.l2_from_init = l2_distance(*p, start);
    r.l2_from_prev = r.l2_from_init;
    r.trigger_acc_raw = accuracy(spec, *p, triggers.images, triggers.target_labels);
    if (test) r.test_acc = accuracy(spec, *p, test->images, test->labels);
    t.records.push_back(r);
  }
  return t;
}

int cmd_attack(const Common& c, const AttackFlags& f) {
  auto cfg = resolve_config(c);
  std::vector<AttackPlan> plans;
  if (!f.kind.empty()) {
    AttackPlan p;
    try {
      p.config.kind = attack_kind_from_string(f.kind);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    auto& a = p.config;
    if (f.lr) a.lr = *f.lr;
    else if (a.kind == AttackKind::Pgd) a.lr = 0.1;
    if (f.epochs) a.epochs = *f.epochs;
    if (f.radius) a.radius = *f.radius;
    if (f.steps) a.pgd_steps = *f.steps;
    if (f.magnitude) a.magnitude = *f.magnitude;
    if (f.reg_lambda) a.reg_lambda = *f.reg_lambda;
    a.seed = mix_seed(cfg.seed, 99);
    p.label = f.label.empty() ? to_string(a.kind) : f.label;
    plans.push_back(p);
  } else {
    plans = cfg.attacks;
  }
  if (plans.empty()) throw UsageError("no attack given: pass --kind or list attacks in the config");
  for (const auto& p : plans) {
    try {
      p.config.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(p.label + ": " + e.what());
    }
  }

  const auto spec = load_spec(cfg.out);
  const fs::path ckpt = f.checkpoint.empty() ? cfg.out / "model.ckpt" : fs::path(f.checkpoint);
  ParamVector victim;
  try {
    victim = load_checkpoint(ckpt, spec);
  } catch (const CheckpointError& e) {
    std::cerr << "refusing to attack: " << e.what() << '\n';
    return kFailed;
  }
  const auto triggers = load_trigger_set(cfg.out / "triggers.bin");

  std::optional<ExperimentData> data;
  const bool needs_data = std::any_of(plans.begin(), plans.end(), [](const AttackPlan& p) {
    return p.config.kind == AttackKind::Finetune || p.config.kind == AttackKind::DistillHard ||
           p.config.kind == AttackKind::DistillSoft;
  });
  if (needs_data) {
    try {
      data = load_experiment_data(cfg);
    } catch (const DatasetNotFound& e) {
      std::cerr << e.what() << '\n';
      return kUsage;
    }
  }
  const Dataset* test = data ? &data->test : nullptr;

  AttackMonitor monitor;
  monitor.triggers = &triggers;
  monitor.test = test;
  monitor.jobs = jobs_of(cfg);
  if (f.monitor_n > 0) {
    SmoothingConfig sc = cfg.smoothing;
    sc.n = f.monitor_n;
    monitor.smoothing = sc;
  }

  int status = kOk;
  for (const auto& plan : plans) {
    const auto& a = plan.config;
    AttackTrajectory traj;
    switch (a.kind) {
      case AttackKind::Finetune:
        traj = finetune_attack(spec, victim, data->split.adversary, a, monitor);
        break;
      case AttackKind::DistillHard:
      case AttackKind::DistillSoft:
        traj = distill_attack(spec, victim, data->split.adversary.images, a, monitor);
        break;
      case AttackKind::Pgd: {
        const auto r = pgd_parameter_attack(spec, victim, triggers.images, triggers.target_labels, *a.radius,
                                            a.pgd_steps, a.lr);
        traj = one_step_trajectory(spec, a, victim, r.params, triggers, test);
        break;
      }
      default:
        traj = one_step_trajectory(spec, a, victim, perturbation_attack(spec, victim, a.kind, a.magnitude, a.seed),
                                   triggers, test);
    }

    const fs::path dir = cfg.out / "attacks" / plan.label;
    fs::create_directories(dir);
    std::ostringstream log;
    write_trajectory(log, traj);
    write_file(dir / "trajectory.log", log.str());
    save_checkpoint(dir / "model.ckpt", spec, traj.final_params);

    const auto& last = traj.records.back();
    std::cout << plan.label << ": " << traj.records.size() - 1 << " epoch(s), l2 from victim "
              << num(last.l2_from_init, 6) << ", trigger "
              << (last.trigger_acc_raw ? pct(*last.trigger_acc_raw) : "-");
    if (last.trigger_acc_smoothed) std::cout << " (smoothed " << pct(*last.trigger_acc_smoothed) << ")";
    if (last.test_acc) std::cout << ", test " << pct(*last.test_acc);
    std::cout << '\n';
    if (traj.aborted) {
      std::cerr << plan.label << ": " << *traj.aborted << '\n';
      status = kFailed;
    }
    if (a.kind == AttackKind::Pgd) {
      const double d = l2_distance(load_checkpoint(dir / "model.ckpt", spec), victim);
      if (d > *a.radius + 1e-5) {
        std::cerr << plan.label << ": attacked checkpoint lies outside the pgd radius (" << d << ")\n";
        status = kFailed;
      }
    }
  }
  return status;
}

// ---------------------------------------------------------------- verify

struct VerifyFlags {
  std::string report, base;
  std::vector<std::string> checkpoints;
  std::optional<std::int64_t> n;
};

int cmd_verify(const Common& c, const VerifyFlags& f) {
  const auto cfg = resolve_config(c);
  const auto spec = load_spec(cfg.out);
  const fs::path report_path = f.report.empty() ? cfg.out / "report.json" : fs::path(f.report);
  const fs::path base_path = f.base.empty() ? cfg.out / "model.ckpt" : fs::path(f.base);
  if (!fs::exists(report_path)) throw UsageError("report not found: " + report_path.string());
  const auto report = load_report(report_path);

  std::vector<fs::path> paths(f.checkpoints.begin(), f.checkpoints.end());
  if (paths.empty() && fs::is_directory(cfg.out / "attacks"))
    for (const auto& e : fs::directory_iterator(cfg.out / "attacks"))
      if (fs::exists(e.path() / "model.ckpt")) paths.push_back(e.path() / "model.ckpt");
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw UsageError("no attacked checkpoints given or found under attacks/");

  ParamVector base;
  std::vector<AttackedModel> attacked;
  try {
    base = load_checkpoint(base_path, spec);
    if (hex_digest(model_digest(spec, base)) != report.model_digest)
      throw CheckpointError("report digest " + report.model_digest + " does not match " + base_path.string());
    for (const auto& p : paths) {
      AttackedModel m;
      m.label = p.filename() == "model.ckpt" && p.has_parent_path() ? p.parent_path().filename().string()
                                                                     : p.string();
      m.params = load_checkpoint(p, spec);
      m.distance = l2_distance(m.params, base);
      attacked.push_back(std::move(m));
    }
  } catch (const CheckpointError& e) {
    std::cerr << "inconsistent artifacts: " << e.what() << '\n';
    return kFailed;
  }

  SmoothingConfig sc = report.smoothing;
  if (f.n) sc.n = *f.n;
  VerifyResult result;
  try {
    result = verify_certificate(spec, report, attacked, load_trigger_set(cfg.out / "triggers.bin"), sc,
                                jobs_of(cfg));
  } catch (const std::invalid_argument& e) {
    std::cerr << "inconsistent artifacts: " << e.what() << '\n';
    return kFailed;
  }

  for (const auto& m : attacked) {
    std::cout << m.label << " (distance " << num(m.distance, 6) << "): ";
    if (std::find(result.skipped.begin(), result.skipped.end(), m.label) != result.skipped.end()) {
      std::cout << "skipped (outside all radii)\n";
      continue;
    }
    int checks = 0, bad = 0;
    for (const auto& ch : result.checks)
      if (ch.label == m.label) {
        ++checks;
        bad += ch.violated;
      }
    std::cout << (bad ? "VIOLATION" : "ok") << " (" << checks << " radii checked)\n";
    for (const auto& ch : result.violations)
      if (ch.label == m.label)
        std::cout << "  radius " << num(ch.radius) << ": certified " << pct(ch.certified) << ", re-estimated "
                  << pct(ch.estimate) << " (upper " << pct(ch.estimate_upper) << ")\n";
  }
  write_file(cfg.out / "verify.json", verify_to_json(result));
  std::cout << result.violations.size() << " violation(s), " << result.skipped.size() << " skipped\n";
  return result.violations.empty() ? kOk : kFailed;
}

// ---------------------------------------------------------------- report

struct RunArtifacts {
  std::string label;
  std::optional<CertificateReport> report;
  std::vector<std::pair<std::string, AttackTrajectory>> attacks;
  std::vector<std::string> missing;
};

std::optional<RunArtifacts> scan_run(const fs::path& dir, const std::string& label) {
  RunArtifacts run;
  run.label = label;
  if (fs::exists(dir / "report.json")) run.report = load_report(dir / "report.json");
  if (fs::is_directory(dir / "attacks")) {
    std::vector<fs::path> logs;
    for (const auto& e : fs::directory_iterator(dir / "attacks"))
      if (fs::exists(e.path() / "trajectory.log")) logs.push_back(e.path());
    std::sort(logs.begin(), logs.end());
    for (const auto& p : logs) {
      std::ifstream is(p / "trajectory.log");
      run.attacks.emplace_back(p.filename().string(), read_trajectory(is));
    }
  }
  const bool any = run.report || !run.attacks.empty() || fs::exists(dir / "model.ckpt");
  if (!any) return std::nullopt;
  for (const char* name : {"model.ckpt", "triggers.bin", "report.json"})
    if (!fs::exists(dir / name)) run.missing.push_back(name);
  if (run.attacks.empty()) run.missing.push_back("attacks/*/trajectory.log");
  return run;
}

std::string align(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> w;
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (w.size() <= i) w.push_back(0);
      w[i] = std::max(w[i], row[i].size());
    }
  std::ostringstream os;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      const auto& s = cells[r][i];
      if (i == 0)
        os << s << std::string(w[i] - s.size(), ' ');
      else
        os << " | " << std::string(w[i] - s.size(), ' ') << s;
    }
    os << '\n';
    if (r == 0) {
      for (std::size_t i = 0; i < w.size(); ++i) os << (i ? "-+-" : "") << std::string(w[i], '-');
      os << '\n';
    }
  }
  return os.str();
}

int cmd_report(const Common& c, const std::string& dir_flag, bool as_json) {
  const fs::path dir = !dir_flag.empty() ? fs::path(dir_flag) : !c.out.empty() ? fs::path(c.out) : fs::path("run");
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());

  std::vector<RunArtifacts> runs;
  if (auto r = scan_run(dir, dir.filename().empty() ? dir.string() : dir.filename().string())) runs.push_back(*r);
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename() != "attacks") subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& s : subdirs)
    if (auto r = scan_run(s, s.filename().string())) runs.push_back(*r);
  if (runs.empty()) {
    std::cout << "no artifacts\n";
    return kFailed;
  }
  for (const auto& r : runs)
    if (!r.missing.empty()) {
      std::cerr << r.label << ": missing";
      for (const auto& m : r.missing) std::cerr << ' ' << m;
      std::cerr << '\n';
    }

  std::vector<std::pair<std::string, CertificateReport>> certs;
  for (const auto& r : runs)
    if (r.report) certs.emplace_back(r.label, *r.report);

  if (as_json) {
    nlohmann::ordered_json j;
    j["certified"] = nlohmann::ordered_json::array();
    for (const auto& [label, rep] : certs) {
      nlohmann::ordered_json row{{"run", label}, {"sigma", rep.smoothing.sigma}};
      row["entries"] = nlohmann::ordered_json::parse(report_to_json(rep))["entries"];
      j["certified"].push_back(row);
    }
    j["l2"] = nlohmann::ordered_json::array();
    j["after_attack"] = nlohmann::ordered_json::array();
    for (const auto& r : runs)
      for (const auto& [label, t] : r.attacks) {
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (const auto& row : l2_trajectory(t))
          rows.push_back({{"epoch", row.epoch}, {"cumulative", row.cumulative}, {"increment", row.increment}});
        j["l2"].push_back({{"run", r.label}, {"attack", label}, {"kind", to_string(t.kind)}, {"lr", t.lr},
                           {"rows", rows}});
        const auto& last = t.records.back();
        auto opt = [](const std::optional<double>& v) {
          return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
        };
        j["after_attack"].push_back({{"run", r.label},
                                     {"attack", label},
                                     {"epochs", last.epoch},
                                     {"trigger_acc_raw", opt(last.trigger_acc_raw)},
                                     {"trigger_acc_smoothed", opt(last.trigger_acc_smoothed)},
                                     {"test_acc", opt(last.test_acc)}});
      }
    std::cout << j.dump(2) << '\n';
    return kOk;
  }

  if (!certs.empty()) std::cout << "Certified trigger set accuracy\n\n" << format_certificate_table(certs) << '\n';

  int max_epoch = 0;
  for (const auto& r : runs)
    for (const auto& [label, t] : r.attacks) max_epoch = std::max(max_epoch, t.records.back().epoch);
  if (max_epoch > 0) {
    std::vector<std::vector<std::string>> l2{{"Attack", "lr"}};
    for (int e = 1; e <= max_epoch; ++e) l2[0].push_back("epoch " + std::to_string(e));
    std::vector<std::vector<std::string>> after{{"Attack", "epochs", "trigger (raw)", "trigger (smoothed)", "test"}};
    for (const auto& r : runs)
      for (const auto& [label, t] : r.attacks) {
        const std::string name = runs.size() > 1 ? r.label + "/" + label : label;
        std::vector<std::string> row{name, num(t.lr, 6)};
        const auto rows = l2_trajectory(t);
        for (int e = 1; e <= max_epoch; ++e) {
          const auto it = std::find_if(rows.begin(), rows.end(), [e](const L2Row& x) { return x.epoch == e; });
          row.push_back(it == rows.end() ? "-" : num(it->cumulative) + " (+" + num(it->increment) + ")");
        }
        l2.push_back(row);
        const auto& last = t.records.back();
        after.push_back({name, std::to_string(last.epoch),
                         last.trigger_acc_raw ? pct(*last.trigger_acc_raw) : "-",
                         last.trigger_acc_smoothed ? pct(*last.trigger_acc_smoothed) : "-",
                         last.test_acc ? pct(*last.test_acc) : "-"});
      }
    std::cout << "l2 distance from the watermarked model, cumulative (+ per epoch)\n\n" << align(l2) << '\n';
    std::cout << "Trigger set accuracy after removal attacks\n\n" << align(after);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"certmark: certifiable backdoor watermarks via parameter smoothing"};
  app.require_subcommand(1);

  Common common;
  bool dry_run = false;
  auto* embed = app.add_subcommand("embed", "train the model with the noise-ramped watermark");
  add_common(embed, common);
  embed->add_flag("--dry-run", dry_run, "print the resolved config and exit");

  CertifyFlags cf;
  auto* certify = app.add_subcommand("certify", "certified trigger-set accuracy over a radius grid");
  add_common(certify, common);
  certify->add_option("--checkpoint", cf.checkpoint, "model checkpoint (default: OUT/model.ckpt)");
  certify->add_option("--triggers", cf.triggers, "trigger set (default: OUT/triggers.bin)");
  certify->add_option("--report", cf.report, "report path (default: OUT/report.json)");
  certify->add_option("--sigma", cf.sigma, "smoothing noise std");
  certify->add_option("--n", cf.n, "Monte Carlo sample count");
  certify->add_option("--confidence", cf.confidence, "confidence level c");
  certify->add_option("--radii", cf.radii, "comma-separated l2 radii")->delimiter(',');

  AttackFlags af;
  auto* attack = app.add_subcommand("attack", "run removal attacks against the watermarked model");
  add_common(attack, common);
  attack->add_option("--kind", af.kind, "one of: finetune, distill-hard, distill-soft, pgd, prune, shift, quantize");
  attack->add_option("--label", af.label, "output name under OUT/attacks");
  attack->add_option("--checkpoint", af.checkpoint, "victim checkpoint (default: OUT/model.ckpt)");
  attack->add_option("--lr", af.lr, "learning rate (pgd: step length as a fraction of the radius)");
  attack->add_option("--epochs", af.epochs, "training epochs");
  attack->add_option("--radius", af.radius, "pgd l2 radius");
  attack->add_option("--steps", af.steps, "pgd steps");
  attack->add_option("--magnitude", af.magnitude, "prune fraction, shift std or quantization bits");
  attack->add_option("--reg-lambda", af.reg_lambda, "l2 weight penalty for distillation");
  attack->add_option("--monitor-n", af.monitor_n, "smoothed trigger accuracy per epoch with this many samples");

  VerifyFlags vf;
  auto* verify = app.add_subcommand("verify", "check attacked models against a certificate");
  add_common(verify, common);
  verify->add_option("--report", vf.report, "certificate (default: OUT/report.json)");
  verify->add_option("--base", vf.base, "certified checkpoint (default: OUT/model.ckpt)");
  verify->add_option("--n", vf.n, "re-estimation sample count (default: the report's n)");
  verify->add_option("checkpoints", vf.checkpoints, "attacked checkpoints (default: OUT/attacks/*/model.ckpt)");

  std::string report_dir;
  bool report_json = false;
  auto* report = app.add_subcommand("report", "tables from the artifacts of one or more runs");
  add_common(report, common);
  report->add_option("dir", report_dir, "run directory (default: --out)");
  report->add_flag("--json", report_json, "structured output instead of text tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*embed) return cmd_embed(common, dry_run);
    if (*certify) return cmd_certify(common, cf);
    if (*attack) return cmd_attack(common, af);
    if (*verify) return cmd_verify(common, vf);
    if (*report) return cmd_report(common, report_dir, report_json);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kUsage;
}
