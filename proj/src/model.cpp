#include "certmark/model.hpp"

#include "certmark/rng.hpp"

#include <cmath>
#include <sstream>

namespace certmark {

std::string hex_digest(std::uint64_t value) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kHex[value & 0xF];
    value >>= 4;
  }
  return out;
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "dense") return LayerKind::Dense;
  if (name == "conv") return LayerKind::Conv;
  if (name == "relu") return LayerKind::Relu;
  if (name == "flatten") return LayerKind::Flatten;
  throw std::invalid_argument("unknown layer type '" + name + "'");
}

ModelSpec::ModelSpec(Shape input, std::vector<LayerSpec> layers, int classes)
    : input_(input), layers_(std::move(layers)), classes_(classes) {
  if (input_.height < 1 || input_.width < 1 || input_.channels < 1)
    throw ShapeError("model input dimensions must be positive");
  if (classes_ < 2) throw ShapeError("model needs at least two classes");

  Shape cur = input_;
  bool flat = false;
  shapes_.push_back(cur);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    switch (l.kind) {
      case LayerKind::Dense: {
        if (!flat)
          throw ShapeError("layer " + std::to_string(i) + ": dense on spatial input needs a flatten first");
        if (l.width < 1) throw ShapeError("layer " + std::to_string(i) + ": dense width must be positive");
        blocks_.push_back({i, param_count_, l.width, cur.size()});
        param_count_ += blocks_.back().size();
        cur = {1, 1, l.width};
        break;
      }
      case LayerKind::Conv: {
        if (flat) throw ShapeError("layer " + std::to_string(i) + ": conv after flatten");
        if (l.kernel < 1 || l.channels < 1 || l.stride < 1)
          throw ShapeError("layer " + std::to_string(i) + ": conv kernel/channels/stride must be positive");
        if (l.kernel > cur.height || l.kernel > cur.width)
          throw ShapeError("layer " + std::to_string(i) + ": conv kernel larger than its input");
        blocks_.push_back({i, param_count_, l.channels, static_cast<Eigen::Index>(l.kernel) * l.kernel * cur.channels});
        param_count_ += blocks_.back().size();
        cur = {(cur.height - l.kernel) / l.stride + 1, (cur.width - l.kernel) / l.stride + 1, l.channels};
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::Flatten:
        cur = {1, 1, cur.size()};
        flat = true;
        break;
    }
    shapes_.push_back(cur);
  }
  if (!flat || cur.size() != classes_)
    throw ShapeError("model output has " + std::to_string(cur.size()) + " units, expected " +
                     std::to_string(classes_) + " flat logits");
  if (layers_.empty() || layers_.back().kind != LayerKind::Dense)
    throw ShapeError("last layer must be dense (the logit layer)");
}

std::string ModelSpec::canonical() const {
  std::ostringstream os;
  os << "input=" << input_.height << "x" << input_.width << "x" << input_.channels << ";classes=" << classes_;
  for (const auto& l : layers_) {
    os << ";" << to_string(l.kind);
    if (l.kind == LayerKind::Dense) os << "(" << l.width << ")";
    if (l.kind == LayerKind::Conv) os << "(" << l.kernel << "," << l.channels << "," << l.stride << ")";
  }
  return os.str();
}

std::uint64_t ModelSpec::digest() const {
  Fnv1a h;
  h.update(canonical());
  return h.digest();
}

ModelSpec ModelSpec::small_cnn(Shape input, int classes) {
  // 28x28 inputs get a strided 5x5 first conv, smaller inputs a 3x3 one.
  const bool large = input.height >= 24 && input.width >= 24;
  std::vector<LayerSpec> layers{
      large ? LayerSpec::conv(5, 8, 2) : LayerSpec::conv(3, 8, 1),
      LayerSpec::relu(),
      LayerSpec::conv(3, 16, 2),
      LayerSpec::relu(),
      LayerSpec::flatten(),
      LayerSpec::dense(64),
      LayerSpec::relu(),
      LayerSpec::dense(classes),
  };
  return ModelSpec(input, std::move(layers), classes);
}

ModelSpec ModelSpec::mlp(Shape input, std::vector<int> hidden, int classes) {
  std::vector<LayerSpec> layers{LayerSpec::flatten()};
  for (int h : hidden) {
    layers.push_back(LayerSpec::dense(h));
    layers.push_back(LayerSpec::relu());
  }
  layers.push_back(LayerSpec::dense(classes));
  return ModelSpec(input, std::move(layers), classes);
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector params(spec.param_count());
  Rng rng = make_rng(seed);
  for (const auto& b : spec.blocks()) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(b.cols));
    std::uniform_real_distribution<float> uni(-bound, bound);
    for (Eigen::Index i = 0; i < b.size(); ++i) params[b.offset + i] = uni(rng);
  }
  return params;
}

std::vector<LayerParams> unflatten(const ModelSpec& spec, const ParamVector& params) {
  if (params.size() != spec.param_count())
    throw ShapeError("parameter vector has " + std::to_string(params.size()) + " entries, spec needs " +
                     std::to_string(spec.param_count()));
  std::vector<LayerParams> out;
  out.reserve(spec.blocks().size());
  for (const auto& b : spec.blocks()) {
    LayerParams lp;
    lp.weights = Eigen::Map<const Matrix<float>>(params.data() + b.offset, b.rows, b.cols);
    lp.bias = params.segment(b.offset + b.weight_count(), b.rows);
    out.push_back(std::move(lp));
  }
  return out;
}

ParamVector flatten(const ModelSpec& spec, const std::vector<LayerParams>& layers) {
  if (layers.size() != spec.blocks().size()) throw ShapeError("layer count does not match spec");
  ParamVector params(spec.param_count());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& b = spec.blocks()[i];
    if (layers[i].weights.rows() != b.rows || layers[i].weights.cols() != b.cols || layers[i].bias.size() != b.rows)
      throw ShapeError("layer " + std::to_string(b.layer) + " parameter shape does not match spec");
    Eigen::Map<Matrix<float>>(params.data() + b.offset, b.rows, b.cols) = layers[i].weights;
    params.segment(b.offset + b.weight_count(), b.rows) = layers[i].bias;
  }
  return params;
}

}  // namespace certmark
