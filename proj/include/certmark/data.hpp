#pragma once

#include "certmark/model.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace certmark {

/// Labelled images. `images` holds one HWC image per column, pixels in [0,1].
struct Dataset {
  Shape shape;
  int classes = 0;
  ImageBatch images;
  std::vector<int> labels;

  Eigen::Index size() const { return images.cols(); }
  /// Throws if the invariants (N >= 1, pixels in [0,1], labels in [0,K)) do not hold.
  void validate() const;
  Dataset subset(std::span<const int> indices) const;
};

enum class TriggerScheme { EmbeddedContent, Noise, Unrelated };

std::string to_string(TriggerScheme scheme);
TriggerScheme trigger_scheme_from_string(const std::string& name);

struct TriggerSet {
  Shape shape;
  ImageBatch images;
  std::vector<int> target_labels;
  TriggerScheme scheme = TriggerScheme::EmbeddedContent;
  std::uint64_t source_seed = 0;

  Eigen::Index size() const { return images.cols(); }
};

// IDX files. Big-endian magic 0x00000803 (3-D uint8 images) or 0x00000801 (1-D uint8 labels),
// big-endian u32 dimensions, then raw bytes.

class IdxError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, Truncated, CountMismatch, BadLabel };
  IdxError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Loads an image/label IDX pair; pixels are rescaled from bytes to [0,1].
/// `classes` defaults to max label + 1 (at least 2).
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::optional<int> classes = std::nullopt);

/// Writes a dataset as an IDX pair, quantizing pixels to bytes. Single-channel only.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const Dataset& data);

/// Class-conditioned Gaussian blobs: each class owns a blob centre on a ring, images carry a jittered
/// blob plus pixel noise. Labels are balanced (round-robin) and the result is a pure function of its inputs.
Dataset synthetic_dataset(std::uint64_t seed, int n, int classes, Shape dims);

/// Seeded shuffle into disjoint halves of sizes floor(N/2) (owner) and ceil(N/2) (adversary).
struct OwnerAdversarySplit {
  Dataset owner;
  Dataset adversary;
  std::vector<int> owner_indices;
  std::vector<int> adversary_indices;
};
OwnerAdversarySplit split_owner_adversary(const Dataset& data, std::uint64_t seed);

struct TriggerOptions {
  TriggerScheme scheme = TriggerScheme::EmbeddedContent;
  int target_label = 0;
  int count = 64;
  std::uint64_t seed = 0;
  double noise_std = 0.25;  // noise scheme
  int patch_size = 8;       // embedded-content glyph box, top-left corner
};

/// The block-letter "T" stamped by the embedded-content scheme: (row, col) -> on/off inside a patch_size box.
bool glyph_pixel(int row, int col, int patch_size);

/// Builds a trigger set. `source` is the base dataset for embedded-content and noise, and the unrelated
/// dataset for the unrelated scheme. `model_input`/`classes` describe the model the triggers are for.
TriggerSet make_trigger_set(const TriggerOptions& opts, const Dataset& source, Shape model_input, int classes);

/// Brings an image of shape `from` to shape `to`: zero-pads (centred) or nearest-neighbour downsamples
/// spatially; 1 <-> 3 channels by replication/averaging. Other channel pairs are rejected.
Vector<float> adapt_image(const Eigen::Ref<const Vector<float>>& image, Shape from, Shape to);

// Trigger-set file: "CMTS1", u8 scheme, u32 LE H, W, C, count, u64 LE source seed,
// then f32 LE pixels (column by column) and u32 LE labels.
void save_trigger_set(const std::filesystem::path& path, const TriggerSet& triggers);
TriggerSet load_trigger_set(const std::filesystem::path& path);

}  // namespace certmark
