#include "certmark/experiment.hpp"

#include "certmark/rng.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace certmark {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// Reads fields from one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw std::invalid_argument(where_ + ": expected an object");
  }
  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw std::invalid_argument(where_ + ": unknown key '" + key + "'");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return std::filesystem::absolute(path.is_absolute() || base.empty() ? path : base / path).lexically_normal();
}

std::string default_label(const AttackConfig& a, std::size_t index, const std::vector<AttackPlan>& existing) {
  std::string label = to_string(a.kind);
  for (const auto& p : existing)
    if (p.label == label) return label + "-" + std::to_string(index);
  return label;
}

}  // namespace

void ExperimentConfig::apply_seed(std::uint64_t root) {
  seed = root;
  data_seed = mix_seed(root, 1);
  split_seed = mix_seed(root, 2);
  init_seed = mix_seed(root, 3);
  trigger.seed = mix_seed(root, 4);
  embed.seed = mix_seed(root, 5);
  smoothing.root_seed = mix_seed(root, 6);
  for (std::size_t i = 0; i < attacks.size(); ++i) attacks[i].config.seed = mix_seed(root, 100 + i);
}

void ExperimentConfig::validate() const {
  if (dataset.source != "synthetic" && dataset.source != "idx")
    throw std::invalid_argument("dataset.source must be 'synthetic' or 'idx'");
  if (dataset.source == "synthetic") {
    if (dataset.train_count < 2 || dataset.test_count < 1) throw std::invalid_argument("dataset counts too small");
    if (dataset.classes < 2) throw std::invalid_argument("dataset.classes must be >= 2");
    if (dataset.shape.height < 1 || dataset.shape.width < 1 || dataset.shape.channels < 1)
      throw std::invalid_argument("dataset shape must be positive");
  } else if (dataset.train_images.empty() || dataset.train_labels.empty() || dataset.test_images.empty() ||
             dataset.test_labels.empty()) {
    throw std::invalid_argument("idx dataset needs train_images, train_labels, test_images and test_labels");
  }
  if (model.arch != "small_cnn" && model.arch != "mlp") throw std::invalid_argument("model.arch must be small_cnn or mlp");
  if (trigger.count < 1) throw std::invalid_argument("trigger.count must be >= 1");
  embed.validate();
  smoothing.validate();
  for (const auto& a : attacks) a.config.validate();
  for (std::size_t i = 0; i < radii.size(); ++i)
    if (!(radii[i] >= 0.0) || (i > 0 && radii[i] < radii[i - 1]))
      throw std::invalid_argument("radii must be >= 0 and ascending");
  if (radii.empty()) throw std::invalid_argument("radii must not be empty");
  if (jobs && *jobs < 1) throw std::invalid_argument("jobs must be >= 1");
}

ExperimentConfig experiment_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  Fields top(root, "config");
  std::uint64_t seed = 0;
  top.get("seed", seed);
  std::string out = cfg.out.string();
  top.get("out", out);
  cfg.out = resolve(base_dir, out);
  top.get("radii", cfg.radii);
  if (const auto* j = top.child("jobs"); j && !j->is_null()) cfg.jobs = j->get<int>();

  if (const auto* j = top.child("dataset")) {
    Fields f(*j, "dataset");
    auto& d = cfg.dataset;
    f.get("source", d.source);
    f.get("train_count", d.train_count);
    f.get("test_count", d.test_count);
    f.get("classes", d.classes);
    f.get("height", d.shape.height);
    f.get("width", d.shape.width);
    f.get("channels", d.shape.channels);
    std::string ti, tl, vi, vl;
    f.get("train_images", ti);
    f.get("train_labels", tl);
    f.get("test_images", vi);
    f.get("test_labels", vl);
    d.train_images = resolve(base_dir, ti);
    d.train_labels = resolve(base_dir, tl);
    d.test_images = resolve(base_dir, vi);
    d.test_labels = resolve(base_dir, vl);
    f.finish();
  }
  if (const auto* j = top.child("model")) {
    Fields f(*j, "model");
    f.get("arch", cfg.model.arch);
    f.get("hidden", cfg.model.hidden);
    f.finish();
  }
  if (const auto* j = top.child("trigger")) {
    Fields f(*j, "trigger");
    std::string scheme = to_string(cfg.trigger.scheme);
    f.get("scheme", scheme);
    cfg.trigger.scheme = trigger_scheme_from_string(scheme);
    f.get("target_label", cfg.trigger.target_label);
    f.get("count", cfg.trigger.count);
    f.get("noise_std", cfg.trigger.noise_std);
    f.get("patch_size", cfg.trigger.patch_size);
    std::string ui, ul;
    f.get("unrelated_images", ui);
    f.get("unrelated_labels", ul);
    cfg.unrelated_images = resolve(base_dir, ui);
    cfg.unrelated_labels = resolve(base_dir, ul);
    f.finish();
  }
  if (const auto* j = top.child("optimizer")) {
    Fields f(*j, "optimizer");
    std::string kind = to_string(cfg.optimizer.kind);
    f.get("kind", kind);
    cfg.optimizer.kind = optimizer_kind_from_string(kind);
    f.get("lr", cfg.optimizer.lr);
    f.get("momentum", cfg.optimizer.momentum);
    f.get("beta1", cfg.optimizer.beta1);
    f.get("beta2", cfg.optimizer.beta2);
    f.get("eps", cfg.optimizer.eps);
    f.get("weight_decay", cfg.optimizer.weight_decay);
    f.finish();
  }
  if (const auto* j = top.child("embed")) {
    Fields f(*j, "embed");
    auto& e = cfg.embed;
    f.get("max_noise", e.max_noise);
    f.get("replay_count", e.replay_count);
    f.get("noise_samples", e.noise_samples);
    f.get("warmup_epochs", e.warmup_epochs);
    f.get("total_epochs", e.total_epochs);
    f.get("batch_size", e.batch_size);
    f.get("trigger_batch_size", e.trigger_batch_size);
    f.get("literal_accumulation", e.literal_accumulation);
    f.finish();
  }
  if (const auto* j = top.child("smoothing")) {
    Fields f(*j, "smoothing");
    f.get("sigma", cfg.smoothing.sigma);
    f.get("n", cfg.smoothing.n);
    f.get("confidence", cfg.smoothing.confidence);
    f.finish();
  }
  if (const auto* j = top.child("attacks")) {
    if (!j->is_array()) throw std::invalid_argument("attacks: expected an array");
    for (std::size_t i = 0; i < j->size(); ++i) {
      Fields f((*j)[i], "attacks[" + std::to_string(i) + "]");
      AttackPlan plan;
      std::string kind;
      f.get("kind", kind);
      if (kind.empty()) throw std::invalid_argument("attacks[" + std::to_string(i) + "]: kind is required");
      plan.config.kind = attack_kind_from_string(kind);
      f.get("lr", plan.config.lr);
      f.get("epochs", plan.config.epochs);
      f.get("reg_lambda", plan.config.reg_lambda);
      if (const auto* r = f.child("radius"); r && !r->is_null()) plan.config.radius = r->get<double>();
      f.get("steps", plan.config.pgd_steps);
      f.get("magnitude", plan.config.magnitude);
      f.get("batch_size", plan.config.batch_size);
      f.get("label", plan.label);
      f.finish();
      if (plan.label.empty()) plan.label = default_label(plan.config, i, cfg.attacks);
      cfg.attacks.push_back(plan);
    }
  }
  top.finish();
  cfg.apply_seed(seed);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return experiment_from_json(ss.str(), std::filesystem::absolute(path).parent_path());
}

std::string experiment_to_json(const ExperimentConfig& cfg) {
  ojson j;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out.string();
  j["jobs"] = cfg.jobs ? ojson(*cfg.jobs) : ojson(nullptr);
  const auto& d = cfg.dataset;
  j["dataset"] = {{"source", d.source},
                  {"train_count", d.train_count},
                  {"test_count", d.test_count},
                  {"classes", d.classes},
                  {"height", d.shape.height},
                  {"width", d.shape.width},
                  {"channels", d.shape.channels},
                  {"train_images", d.train_images.string()},
                  {"train_labels", d.train_labels.string()},
                  {"test_images", d.test_images.string()},
                  {"test_labels", d.test_labels.string()}};
  j["model"] = {{"arch", cfg.model.arch}, {"hidden", cfg.model.hidden}};
  j["trigger"] = {{"scheme", to_string(cfg.trigger.scheme)},
                  {"target_label", cfg.trigger.target_label},
                  {"count", cfg.trigger.count},
                  {"noise_std", cfg.trigger.noise_std},
                  {"patch_size", cfg.trigger.patch_size},
                  {"unrelated_images", cfg.unrelated_images.string()},
                  {"unrelated_labels", cfg.unrelated_labels.string()}};
  const auto& o = cfg.optimizer;
  j["optimizer"] = {{"kind", to_string(o.kind)}, {"lr", o.lr},       {"momentum", o.momentum},
                    {"beta1", o.beta1},          {"beta2", o.beta2}, {"eps", o.eps},
                    {"weight_decay", o.weight_decay}};
  const auto& e = cfg.embed;
  j["embed"] = {{"max_noise", e.max_noise},
                {"replay_count", e.replay_count},
                {"noise_samples", e.noise_samples},
                {"warmup_epochs", e.warmup_epochs},
                {"total_epochs", e.total_epochs},
                {"batch_size", e.batch_size},
                {"trigger_batch_size", e.trigger_batch_size},
                {"literal_accumulation", e.literal_accumulation}};
  j["smoothing"] = {{"sigma", cfg.smoothing.sigma},
                    {"n", cfg.smoothing.n},
                    {"confidence", cfg.smoothing.confidence}};
  j["radii"] = cfg.radii;
  j["attacks"] = ojson::array();
  for (const auto& p : cfg.attacks) {
    const auto& a = p.config;
    j["attacks"].push_back({{"label", p.label},
                            {"kind", to_string(a.kind)},
                            {"lr", a.lr},
                            {"epochs", a.epochs},
                            {"reg_lambda", a.reg_lambda},
                            {"radius", a.radius ? ojson(*a.radius) : ojson(nullptr)},
                            {"steps", a.pgd_steps},
                            {"magnitude", a.magnitude},
                            {"batch_size", a.batch_size}});
  }
  return j.dump(2) + "\n";
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  Dataset train;
  Dataset test;
  if (d.source == "synthetic") {
    train = synthetic_dataset(cfg.data_seed, d.train_count, d.classes, d.shape);
    test = synthetic_dataset(mix_seed(cfg.data_seed, 1), d.test_count, d.classes, d.shape);
  } else {
    for (const auto& p : {d.train_images, d.train_labels, d.test_images, d.test_labels})
      if (!std::filesystem::exists(p)) throw DatasetNotFound("dataset not found: " + p.string());
    train = load_idx(d.train_images, d.train_labels);
    test = load_idx(d.test_images, d.test_labels, train.classes);
    if (test.shape != train.shape) throw std::invalid_argument("train and test images differ in shape");
  }
  return ExperimentData{std::move(test), split_owner_adversary(train, cfg.split_seed)};
}

std::string spec_to_json(const ModelSpec& spec) {
  ojson j;
  j["input"] = {{"height", spec.input().height}, {"width", spec.input().width}, {"channels", spec.input().channels}};
  j["classes"] = spec.classes();
  j["layers"] = ojson::array();
  for (const auto& l : spec.layers()) {
    ojson row{{"kind", to_string(l.kind)}};
    if (l.kind == LayerKind::Dense) row["width"] = l.width;
    if (l.kind == LayerKind::Conv) {
      row["kernel"] = l.kernel;
      row["channels"] = l.channels;
      row["stride"] = l.stride;
    }
    j["layers"].push_back(row);
  }
  return j.dump(2) + "\n";
}

ModelSpec spec_from_json(const std::string& text) {
  const auto j = json::parse(text);
  const auto& in = j.at("input");
  const Shape input{in.at("height").get<int>(), in.at("width").get<int>(), in.at("channels").get<int>()};
  std::vector<LayerSpec> layers;
  for (const auto& row : j.at("layers")) {
    LayerSpec l;
    l.kind = layer_kind_from_string(row.at("kind").get<std::string>());
    l.width = row.value("width", 0);
    l.kernel = row.value("kernel", 0);
    l.channels = row.value("channels", 0);
    l.stride = row.value("stride", 1);
    layers.push_back(l);
  }
  return ModelSpec(input, layers, j.at("classes").get<int>());
}

ModelSpec build_model(const ExperimentConfig& cfg, Shape input, int classes) {
  if (cfg.model.arch == "mlp") return ModelSpec::mlp(input, cfg.model.hidden, classes);
  return ModelSpec::small_cnn(input, classes);
}

TriggerSet build_triggers(const ExperimentConfig& cfg, const ExperimentData& data, const ModelSpec& spec) {
  if (cfg.trigger.scheme != TriggerScheme::Unrelated)
    return make_trigger_set(cfg.trigger, data.split.owner, spec.input(), spec.classes());
  if (!cfg.unrelated_images.empty()) {
    for (const auto& p : {cfg.unrelated_images, cfg.unrelated_labels})
      if (!std::filesystem::exists(p)) throw DatasetNotFound("dataset not found: " + p.string());
    return make_trigger_set(cfg.trigger, load_idx(cfg.unrelated_images, cfg.unrelated_labels), spec.input(),
                            spec.classes());
  }
  // Without an unrelated dataset, draw from a synthetic source of different geometry and class count.
  const Shape in = spec.input();
  const Shape other{in.height * 2, in.width * 2, 3};
  const auto source = synthetic_dataset(mix_seed(cfg.trigger.seed, 7), std::max(cfg.trigger.count, 7), 7, other);
  return make_trigger_set(cfg.trigger, source, in, spec.classes());
}

}  // namespace certmark
