#include "certmark/data.hpp"

#include "certmark/network.hpp"
#include "certmark/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

namespace certmark {

void Dataset::validate() const {
  if (images.cols() < 1) throw ShapeError("dataset is empty");
  if (images.rows() != shape.size()) throw ShapeError("dataset image rows do not match its shape");
  if (static_cast<Eigen::Index>(labels.size()) != images.cols())
    throw ShapeError("dataset has " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(images.cols()) + " images");
  if (images.minCoeff() < 0.0f || images.maxCoeff() > 1.0f) throw ShapeError("dataset pixel outside [0,1]");
  for (int y : labels)
    if (y < 0 || y >= classes) throw ShapeError("dataset label " + std::to_string(y) + " outside [0, K)");
}

Dataset Dataset::subset(std::span<const int> indices) const {
  Dataset out{shape, classes, gather_columns(images, indices), {}};
  out.labels.reserve(indices.size());
  for (int i : indices) out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

std::string to_string(TriggerScheme scheme) {
  switch (scheme) {
    case TriggerScheme::EmbeddedContent: return "embedded-content";
    case TriggerScheme::Noise: return "noise";
    case TriggerScheme::Unrelated: return "unrelated";
  }
  return "?";
}

TriggerScheme trigger_scheme_from_string(const std::string& name) {
  if (name == "embedded-content" || name == "content") return TriggerScheme::EmbeddedContent;
  if (name == "noise") return TriggerScheme::Noise;
  if (name == "unrelated") return TriggerScheme::Unrelated;
  throw std::invalid_argument("unknown trigger scheme '" + name + "' (embedded-content, noise, unrelated)");
}

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IdxError(IdxError::Kind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return std::uint32_t(b[at]) << 24 | std::uint32_t(b[at + 1]) << 16 | std::uint32_t(b[at + 2]) << 8 |
         std::uint32_t(b[at + 3]);
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  os.write(bytes, 4);
}

std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::optional<int> classes) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);

  if (img.size() < 4) throw IdxError(IdxError::Kind::Truncated, images_path.string() + ": truncated header");
  if (be32(img, 0) != kIdxImages)
    throw IdxError(IdxError::Kind::BadMagic, images_path.string() + ": bad magic " + hex32(be32(img, 0)) +
                                                 ", expected " + hex32(kIdxImages) + " (uint8 images)");
  if (lab.size() < 4) throw IdxError(IdxError::Kind::Truncated, labels_path.string() + ": truncated header");
  if (be32(lab, 0) != kIdxLabels)
    throw IdxError(IdxError::Kind::BadMagic, labels_path.string() + ": bad magic " + hex32(be32(lab, 0)) +
                                                 ", expected " + hex32(kIdxLabels) + " (uint8 labels)");
  if (img.size() < 16) throw IdxError(IdxError::Kind::Truncated, images_path.string() + ": truncated header");
  if (lab.size() < 8) throw IdxError(IdxError::Kind::Truncated, labels_path.string() + ": truncated header");

  const std::uint64_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  const std::uint64_t n_labels = be32(lab, 4);
  if (n != n_labels)
    throw IdxError(IdxError::Kind::CountMismatch, "image file has " + std::to_string(n) + " records, label file " +
                                                      std::to_string(n_labels));
  if (img.size() != 16 + n * rows * cols)
    throw IdxError(IdxError::Kind::Truncated, images_path.string() + ": expected " +
                                                  std::to_string(16 + n * rows * cols) + " bytes, found " +
                                                  std::to_string(img.size()));
  if (lab.size() != 8 + n)
    throw IdxError(IdxError::Kind::Truncated, labels_path.string() + ": expected " + std::to_string(8 + n) +
                                                  " bytes, found " + std::to_string(lab.size()));
  if (n == 0) throw IdxError(IdxError::Kind::CountMismatch, images_path.string() + ": zero records");

  Dataset d;
  d.shape = {static_cast<int>(rows), static_cast<int>(cols), 1};
  d.images.resize(static_cast<Eigen::Index>(rows * cols), static_cast<Eigen::Index>(n));
  float* dst = d.images.data();
  for (std::size_t i = 0; i < n * rows * cols; ++i) dst[i] = static_cast<float>(img[16 + i]) / 255.0f;
  d.labels.assign(lab.begin() + 8, lab.end());
  const int max_label = *std::max_element(d.labels.begin(), d.labels.end());
  d.classes = classes.value_or(std::max(2, max_label + 1));
  if (max_label >= d.classes)
    throw IdxError(IdxError::Kind::BadLabel, labels_path.string() + ": label " + std::to_string(max_label) +
                                                 " outside [0, " + std::to_string(d.classes) + ")");
  return d;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const Dataset& data) {
  if (data.shape.channels != 1) throw ShapeError("IDX images are single-channel");
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw IdxError(IdxError::Kind::Io, "cannot write IDX pair " + images_path.string());
  const auto n = static_cast<std::uint32_t>(data.size());
  put_be32(img, kIdxImages);
  put_be32(img, n);
  put_be32(img, static_cast<std::uint32_t>(data.shape.height));
  put_be32(img, static_cast<std::uint32_t>(data.shape.width));
  for (Eigen::Index i = 0; i < data.images.size(); ++i)
    img.put(static_cast<char>(std::lround(std::clamp(data.images.data()[i], 0.0f, 1.0f) * 255.0f)));
  put_be32(lab, kIdxLabels);
  put_be32(lab, n);
  for (int y : data.labels) lab.put(static_cast<char>(y));
}

Dataset synthetic_dataset(std::uint64_t seed, int n, int classes, Shape dims) {
  if (classes < 2) throw std::invalid_argument("synthetic_dataset: need at least two classes");
  if (n < classes) throw std::invalid_argument("synthetic_dataset: n must be >= classes");
  Rng rng = make_rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);

  const float cy = 0.5f * static_cast<float>(dims.height - 1);
  const float cx = 0.5f * static_cast<float>(dims.width - 1);
  const float radius = 0.3f * static_cast<float>(std::min(dims.height, dims.width));
  const float width = std::max(1.0f, static_cast<float>(std::min(dims.height, dims.width)) / 7.0f);

  Dataset d;
  d.shape = dims;
  d.classes = classes;
  d.images.resize(dims.size(), n);
  d.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int y = i % classes;
    d.labels[static_cast<std::size_t>(i)] = y;
    const double angle = 2.0 * std::numbers::pi * y / classes;
    const float by = cy + radius * static_cast<float>(std::sin(angle)) + 1.2f * normal(rng);
    const float bx = cx + radius * static_cast<float>(std::cos(angle)) + 1.2f * normal(rng);
    const float amp = 0.6f + 0.4f * uni(rng);
    for (int r = 0; r < dims.height; ++r)
      for (int c = 0; c < dims.width; ++c) {
        const float d2 = (r - by) * (r - by) + (c - bx) * (c - bx);
        const float blob = amp * std::exp(-d2 / (2.0f * width * width));
        for (int ch = 0; ch < dims.channels; ++ch) {
          const float v = blob + 0.12f * normal(rng) + 0.1f;
          d.images((r * dims.width + c) * dims.channels + ch, i) = std::clamp(v, 0.0f, 1.0f);
        }
      }
  }
  return d;
}

OwnerAdversarySplit split_owner_adversary(const Dataset& data, std::uint64_t seed) {
  const int n = static_cast<int>(data.size());
  if (n < 2) throw std::invalid_argument("split_owner_adversary: need at least two examples");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  OwnerAdversarySplit s;
  s.owner_indices.assign(idx.begin(), idx.begin() + n / 2);
  s.adversary_indices.assign(idx.begin() + n / 2, idx.end());
  s.owner = data.subset(s.owner_indices);
  s.adversary = data.subset(s.adversary_indices);
  return s;
}

bool glyph_pixel(int row, int col, int patch_size) {
  // Top bar two rows tall; stem two columns wide in the middle, running to the bottom of the box.
  const int bar = std::max(1, patch_size / 4);
  const int stem_w = std::max(1, patch_size / 4);
  const int stem_lo = (patch_size - stem_w) / 2;
  if (row < 0 || col < 0 || row >= patch_size || col >= patch_size) return false;
  return row < bar || (col >= stem_lo && col < stem_lo + stem_w);
}

Vector<float> adapt_image(const Eigen::Ref<const Vector<float>>& image, Shape from, Shape to) {
  if (image.size() != from.size()) throw ShapeError("adapt_image: image size does not match its shape");
  const bool same_c = from.channels == to.channels;
  const bool gray_to_rgb = from.channels == 1 && to.channels == 3;
  const bool rgb_to_gray = from.channels == 3 && to.channels == 1;
  if (!same_c && !gray_to_rgb && !rgb_to_gray)
    throw ShapeError("cannot adapt " + std::to_string(from.channels) + "-channel images to " +
                     std::to_string(to.channels) + " channels");

  auto sample = [&](int r, int c, int ch) -> float {
    const Eigen::Index base = (static_cast<Eigen::Index>(r) * from.width + c) * from.channels;
    if (same_c) return image[base + ch];
    if (gray_to_rgb) return image[base];
    return (image[base] + image[base + 1] + image[base + 2]) / 3.0f;
  };

  Vector<float> out = Vector<float>::Zero(to.size());
  const bool fits = from.height <= to.height && from.width <= to.width;
  const int off_r = fits ? (to.height - from.height) / 2 : 0;
  const int off_c = fits ? (to.width - from.width) / 2 : 0;
  for (int r = 0; r < to.height; ++r)
    for (int c = 0; c < to.width; ++c) {
      int sr, sc;
      if (fits) {
        sr = r - off_r;
        sc = c - off_c;
        if (sr < 0 || sc < 0 || sr >= from.height || sc >= from.width) continue;
      } else {
        sr = std::min(from.height - 1, r * from.height / to.height);
        sc = std::min(from.width - 1, c * from.width / to.width);
      }
      for (int ch = 0; ch < to.channels; ++ch)
        out[(static_cast<Eigen::Index>(r) * to.width + c) * to.channels + ch] = sample(sr, sc, ch);
    }
  return out;
}

TriggerSet make_trigger_set(const TriggerOptions& opts, const Dataset& source, Shape model_input, int classes) {
  if (opts.count < 1) throw std::invalid_argument("trigger count must be positive");
  if (opts.target_label < 0 || opts.target_label >= classes)
    throw std::invalid_argument("target label " + std::to_string(opts.target_label) + " outside [0, " +
                                std::to_string(classes) + ")");
  if (source.size() < 1) throw std::invalid_argument("trigger source dataset is empty");

  // Fixed-label schemes draw from images whose true class differs from the target.
  std::vector<int> pool;
  for (int i = 0; i < static_cast<int>(source.size()); ++i)
    if (opts.scheme == TriggerScheme::Unrelated || source.labels[static_cast<std::size_t>(i)] != opts.target_label)
      pool.push_back(i);
  if (static_cast<int>(pool.size()) < opts.count)
    throw std::invalid_argument("trigger count " + std::to_string(opts.count) + " exceeds the " +
                                std::to_string(pool.size()) + " available source images");
  Rng rng = make_rng(opts.seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(static_cast<std::size_t>(opts.count));

  TriggerSet t;
  t.shape = model_input;
  t.scheme = opts.scheme;
  t.source_seed = opts.seed;
  t.images.resize(model_input.size(), opts.count);
  t.target_labels.assign(static_cast<std::size_t>(opts.count), opts.target_label);

  if (opts.scheme != TriggerScheme::Unrelated && !(source.shape == model_input))
    throw ShapeError("base images do not match the model input shape");

  switch (opts.scheme) {
    case TriggerScheme::EmbeddedContent: {
      const int p = std::min({opts.patch_size, model_input.height, model_input.width});
      for (int j = 0; j < opts.count; ++j) {
        auto col = t.images.col(j);
        col = source.images.col(pool[static_cast<std::size_t>(j)]);
        for (int r = 0; r < p; ++r)
          for (int c = 0; c < p; ++c)
            for (int ch = 0; ch < model_input.channels; ++ch)
              col[(r * model_input.width + c) * model_input.channels + ch] = glyph_pixel(r, c, p) ? 1.0f : 0.0f;
      }
      break;
    }
    case TriggerScheme::Noise: {
      if (opts.noise_std < 0) throw std::invalid_argument("noise_std must be non-negative");
      std::normal_distribution<float> normal(0.0f, 1.0f);
      const auto s = static_cast<float>(opts.noise_std);
      for (int j = 0; j < opts.count; ++j) {
        auto col = t.images.col(j);
        col = source.images.col(pool[static_cast<std::size_t>(j)]);
        if (s == 0.0f) continue;
        for (Eigen::Index r = 0; r < col.size(); ++r) col[r] = std::clamp(col[r] + s * normal(rng), 0.0f, 1.0f);
      }
      break;
    }
    case TriggerScheme::Unrelated: {
      for (int j = 0; j < opts.count; ++j) {
        const int src = pool[static_cast<std::size_t>(j)];
        t.images.col(j) = adapt_image(source.images.col(src), source.shape, model_input);
        t.target_labels[static_cast<std::size_t>(j)] =
            (source.labels[static_cast<std::size_t>(src)] + opts.target_label) % classes;
      }
      break;
    }
  }
  return t;
}

namespace {

constexpr char kTriggerMagic[5] = {'C', 'M', 'T', 'S', '1'};

void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const std::vector<unsigned char>& b, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

void save_trigger_set(const std::filesystem::path& path, const TriggerSet& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write trigger set " + path.string());
  os.write(kTriggerMagic, 5);
  put_le(os, static_cast<std::uint64_t>(t.scheme), 1);
  put_le(os, static_cast<std::uint64_t>(t.shape.height), 4);
  put_le(os, static_cast<std::uint64_t>(t.shape.width), 4);
  put_le(os, static_cast<std::uint64_t>(t.shape.channels), 4);
  put_le(os, static_cast<std::uint64_t>(t.size()), 4);
  put_le(os, t.source_seed, 8);
  for (Eigen::Index i = 0; i < t.images.size(); ++i) put_le(os, std::bit_cast<std::uint32_t>(t.images.data()[i]), 4);
  for (int y : t.target_labels) put_le(os, static_cast<std::uint32_t>(y), 4);
}

TriggerSet load_trigger_set(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open trigger set " + path.string());
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  constexpr std::size_t header = 5 + 1 + 16 + 8;
  if (b.size() < header || std::memcmp(b.data(), kTriggerMagic, 5) != 0)
    throw std::runtime_error(path.string() + ": not a certmark trigger set (bad magic)");
  TriggerSet t;
  const auto scheme = get_le(b, 5, 1);
  if (scheme > 2) throw std::runtime_error(path.string() + ": unknown trigger scheme");
  t.scheme = static_cast<TriggerScheme>(scheme);
  t.shape = {static_cast<int>(get_le(b, 6, 4)), static_cast<int>(get_le(b, 10, 4)), static_cast<int>(get_le(b, 14, 4))};
  const auto m = static_cast<Eigen::Index>(get_le(b, 18, 4));
  t.source_seed = get_le(b, 22, 8);
  const std::size_t pixels = static_cast<std::size_t>(t.shape.size()) * static_cast<std::size_t>(m);
  if (b.size() != header + 4 * pixels + 4 * static_cast<std::size_t>(m))
    throw std::runtime_error(path.string() + ": truncated trigger set");
  t.images.resize(t.shape.size(), m);
  for (std::size_t i = 0; i < pixels; ++i)
    t.images.data()[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(b, header + 4 * i, 4)));
  t.target_labels.resize(static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i)
    t.target_labels[i] = static_cast<int>(get_le(b, header + 4 * pixels + 4 * i, 4));
  return t;
}

}  // namespace certmark
