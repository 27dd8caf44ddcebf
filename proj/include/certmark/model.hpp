#pragma once

#include "certmark/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace certmark {

enum class LayerKind { Dense, Conv, Relu, Flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int width = 0;     // dense output units
  int kernel = 0;    // conv, square kernel, valid padding
  int channels = 0;  // conv output channels
  int stride = 1;    // conv

  static LayerSpec dense(int width) { return {LayerKind::Dense, width, 0, 0, 1}; }
  static LayerSpec conv(int kernel, int channels, int stride = 1) {
    return {LayerKind::Conv, 0, kernel, channels, stride};
  }
  static LayerSpec relu() { return {LayerKind::Relu, 0, 0, 0, 1}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 0, 1}; }

  bool operator==(const LayerSpec&) const = default;
};

/// Activation shape: height x width x channels. Flat activations have height = width = 1.
struct Shape {
  int height = 1;
  int width = 1;
  int channels = 1;

  int size() const { return height * width * channels; }
  bool operator==(const Shape&) const = default;
};

/// Where one trainable layer's weights and bias live in the flat parameter vector.
/// Weights are stored column-major as (rows x cols), followed by `rows` bias entries.
struct ParamBlock {
  std::size_t layer = 0;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index weight_count() const { return rows * cols; }
  Eigen::Index size() const { return rows * cols + rows; }
};

/// Layer stack of a small classifier. Logits come out of the last layer, softmax lives in the loss.
class ModelSpec {
 public:
  ModelSpec() = default;
  ModelSpec(Shape input, std::vector<LayerSpec> layers, int classes);

  const Shape& input() const { return input_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  int classes() const { return classes_; }

  /// Output shape of every layer; shapes()[0] is the input.
  const std::vector<Shape>& shapes() const { return shapes_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  Eigen::Index param_count() const { return param_count_; }

  /// Canonical text form; the digest hashes exactly this string.
  std::string canonical() const;
  std::uint64_t digest() const;

  bool operator==(const ModelSpec& other) const {
    return input_ == other.input_ && layers_ == other.layers_ && classes_ == other.classes_;
  }

  /// 2 conv + 2 dense network used at desk scale.
  static ModelSpec small_cnn(Shape input, int classes);
  static ModelSpec mlp(Shape input, std::vector<int> hidden, int classes);

 private:
  Shape input_;
  std::vector<LayerSpec> layers_;
  int classes_ = 0;
  std::vector<Shape> shapes_;
  std::vector<ParamBlock> blocks_;
  Eigen::Index param_count_ = 0;
};

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

/// Per-layer weight/bias copies of a flat vector.
struct LayerParams {
  Matrix<float> weights;
  Vector<float> bias;
};
std::vector<LayerParams> unflatten(const ModelSpec& spec, const ParamVector& params);
ParamVector flatten(const ModelSpec& spec, const std::vector<LayerParams>& layers);

}  // namespace certmark
