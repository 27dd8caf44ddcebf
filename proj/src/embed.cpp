#include "certmark/embed.hpp"

#include "certmark/network.hpp"
#include "certmark/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <ostream>

namespace certmark {

void EmbedConfig::validate() const {
  if (replay_count < 1) throw std::invalid_argument("replay count k must be >= 1");
  if (noise_samples < 1) throw std::invalid_argument("noise sample count t must be >= 1");
  if (!(max_noise >= 0.0)) throw std::invalid_argument("max_noise must be >= 0");
  if (warmup_epochs < 0 || total_epochs < 0 || warmup_epochs > total_epochs)
    throw std::invalid_argument("need 0 <= warmup_epochs <= total_epochs");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (trigger_batch_size < 0) throw std::invalid_argument("trigger batch size must be >= 0");
}

ParamVector noise_averaged_gradient(const ModelSpec& spec, const ParamVector& params, const ImageBatch& images,
                                    std::span<const int> labels, double sigma, int t, std::uint64_t seed) {
  if (t < 1) throw std::invalid_argument("noise_averaged_gradient: t must be >= 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise_averaged_gradient: sigma must be >= 0");
  Vector<double> sum = Vector<double>::Zero(params.size());
  for (int j = 0; j < t; ++j) {
    const ParamVector noisy =
        sigma == 0.0 ? params : gaussian_perturbation(params, sigma, mix_seed(seed, static_cast<std::uint64_t>(j)));
    sum += loss_and_grad<float>(spec, noisy, images, labels).grad.cast<double>();
  }
  return (sum / static_cast<double>(t)).cast<float>();
}

namespace {

std::vector<int> shuffled_indices(Eigen::Index n, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

constexpr std::uint64_t kTrainStream = 0x7261696eULL;
constexpr std::uint64_t kTriggerStream = 0x74726967ULL;

}  // namespace

void train_epoch(const ModelSpec& spec, ParamVector& params, const Dataset& data, int batch_size,
                 std::uint64_t seed, OptimizerState& opt) {
  const auto order = shuffled_indices(data.size(), seed);
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::span<const int> idx(order.data() + start, end - start);
    const ImageBatch batch = gather_columns(data.images, idx);
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (int i : idx) labels.push_back(data.labels[static_cast<std::size_t>(i)]);
    opt.step(params, loss_and_grad<float>(spec, params, batch, labels).grad);
  }
}

EmbedResult embed_watermark(const ModelSpec& spec, const ParamVector& params, const Dataset& train,
                            const TriggerSet& triggers, const EmbedConfig& cfg, OptimizerState& opt,
                            const Dataset* test) {
  cfg.validate();
  if (triggers.size() < 1) throw std::invalid_argument("empty trigger set");
  for (int y : triggers.target_labels)
    if (y < 0 || y >= spec.classes()) throw std::invalid_argument("trigger label outside [0, K)");

  EmbedResult out;
  out.params = params;
  ParamVector& theta = out.params;
  const int k = cfg.replay_count;
  const int t = cfg.noise_samples;
  const Eigen::Index m = triggers.size();
  const Eigen::Index tb = cfg.trigger_batch_size > 0 ? std::min<Eigen::Index>(cfg.trigger_batch_size, m) : m;

  for (int epoch = 1; epoch <= cfg.total_epochs; ++epoch) {
    try {
      train_epoch(spec, theta, train, cfg.batch_size, mix_seed(cfg.seed ^ kTrainStream, epoch), opt);

      if (epoch > cfg.warmup_epochs) {
        const std::uint64_t epoch_seed = mix_seed(cfg.seed ^ kTriggerStream, epoch);
        const auto order = tb < m ? shuffled_indices(m, epoch_seed) : std::vector<int>{};
        for (Eigen::Index start = 0, batch_no = 0; start < m; start += tb, ++batch_no) {
          ImageBatch images;
          std::vector<int> labels;
          if (order.empty()) {
            images = triggers.images;
            labels = triggers.target_labels;
          } else {
            const auto n = std::min(tb, m - start);
            std::span<const int> idx(order.data() + start, static_cast<std::size_t>(n));
            images = gather_columns(triggers.images, idx);
            for (int i : idx) labels.push_back(triggers.target_labels[static_cast<std::size_t>(i)]);
          }

          Vector<double> acc = Vector<double>::Zero(theta.size());
          for (int i = 1; i <= k; ++i) {
            const double sigma = static_cast<double>(i) / k * cfg.max_noise;
            const std::uint64_t step_seed = mix_seed(epoch_seed, static_cast<std::uint64_t>(batch_no * k + i));
            const ParamVector g = noise_averaged_gradient(spec, theta, images, labels, sigma, t, step_seed);
            if (!cfg.literal_accumulation) {
              opt.step(theta, g);
              continue;
            }
            // g holds the mean over t draws; the pseudocode accumulates the sum and rescales by k*t.
            acc += g.cast<double>() * static_cast<double>(t);
            acc /= static_cast<double>(k) * t;
            opt.step(theta, acc.cast<float>());
          }
        }
      }
    } catch (const DivergenceError& e) {
      throw DivergenceError("embedding diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_acc = accuracy(spec, theta, train.images, train.labels);
    if (test) rec.test_acc = accuracy(spec, theta, test->images, test->labels);
    rec.trigger_acc = accuracy(spec, theta, triggers.images, triggers.target_labels);
    rec.l2_from_init = l2_distance(theta, params);
    out.log.push_back(rec);
  }
  return out;
}

void write_training_log(std::ostream& os, const std::vector<EpochRecord>& log) {
  for (const auto& r : log) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_acc"] = r.train_acc;
    j["test_acc"] = r.test_acc ? nlohmann::ordered_json(*r.test_acc) : nlohmann::ordered_json(nullptr);
    j["trigger_acc"] = r.trigger_acc;
    j["l2_from_init"] = r.l2_from_init;
    os << j.dump() << '\n';
  }
}

}  // namespace certmark
