#include "certmark/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace certmark {
namespace {

// Activations are (rows x cols) matrices. Spatial activations use rows = channels and
// cols = H*W*B with column b*H*W + y*W + x; flat ones use rows = features, cols = B.
// Both share memory order with an HWC image stored per column, so flatten is a reshape.

template <typename Scalar>
Matrix<Scalar> reshaped(const Matrix<Scalar>& m, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix<Scalar>>(m.data(), rows, cols);
}

template <typename Scalar>
Matrix<Scalar> im2col(const Matrix<Scalar>& in, const Shape& is, const Shape& os, int kernel, int stride,
                      Eigen::Index batch) {
  const Eigen::Index cin = is.channels;
  const Eigen::Index in_hw = static_cast<Eigen::Index>(is.height) * is.width;
  const Eigen::Index out_hw = static_cast<Eigen::Index>(os.height) * os.width;
  Matrix<Scalar> cols(kernel * kernel * cin, out_hw * batch);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int oy = 0; oy < os.height; ++oy)
      for (int ox = 0; ox < os.width; ++ox) {
        const Eigen::Index col = b * out_hw + oy * os.width + ox;
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx) {
            const Eigen::Index src = b * in_hw + (oy * stride + ky) * is.width + (ox * stride + kx);
            cols.block((ky * kernel + kx) * cin, col, cin, 1) = in.col(src);
          }
      }
  return cols;
}

template <typename Scalar>
Matrix<Scalar> col2im(const Matrix<Scalar>& cols, const Shape& is, const Shape& os, int kernel, int stride,
                      Eigen::Index batch) {
  const Eigen::Index cin = is.channels;
  const Eigen::Index in_hw = static_cast<Eigen::Index>(is.height) * is.width;
  const Eigen::Index out_hw = static_cast<Eigen::Index>(os.height) * os.width;
  Matrix<Scalar> in = Matrix<Scalar>::Zero(cin, in_hw * batch);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int oy = 0; oy < os.height; ++oy)
      for (int ox = 0; ox < os.width; ++ox) {
        const Eigen::Index col = b * out_hw + oy * os.width + ox;
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx) {
            const Eigen::Index dst = b * in_hw + (oy * stride + ky) * is.width + (ox * stride + kx);
            in.col(dst) += cols.block((ky * kernel + kx) * cin, col, cin, 1);
          }
      }
  return in;
}

template <typename Scalar>
struct Tape {
  std::vector<Matrix<Scalar>> saved;  // per layer: input (dense, relu) or im2col matrix (conv)
};

void check_inputs(const ModelSpec& spec, Eigen::Index params, Eigen::Index rows, Eigen::Index cols) {
  if (params != spec.param_count())
    throw ShapeError("parameter vector has " + std::to_string(params) + " entries, spec needs " +
                     std::to_string(spec.param_count()));
  if (rows != spec.input().size())
    throw ShapeError("batch rows " + std::to_string(rows) + " do not match model input " +
                     std::to_string(spec.input().height) + "x" + std::to_string(spec.input().width) + "x" +
                     std::to_string(spec.input().channels));
  if (cols < 1) throw ShapeError("empty batch");
}

template <typename Scalar>
Matrix<Scalar> run_forward(const ModelSpec& spec, const Vector<Scalar>& params, const Matrix<Scalar>& batch,
                           Tape<Scalar>* tape) {
  check_inputs(spec, params.size(), batch.rows(), batch.cols());
  const Eigen::Index B = batch.cols();
  const auto& shapes = spec.shapes();
  Matrix<Scalar> act = reshaped(batch, spec.input().channels,
                                static_cast<Eigen::Index>(spec.input().height) * spec.input().width * B);
  std::size_t block = 0;
  for (std::size_t i = 0; i < spec.layers().size(); ++i) {
    const auto& l = spec.layers()[i];
    const Shape& is = shapes[i];
    const Shape& os = shapes[i + 1];
    switch (l.kind) {
      case LayerKind::Dense:
      case LayerKind::Conv: {
        const auto& pb = spec.blocks()[block++];
        Eigen::Map<const Matrix<Scalar>> w(params.data() + pb.offset, pb.rows, pb.cols);
        auto bias = params.segment(pb.offset + pb.weight_count(), pb.rows);
        Matrix<Scalar> in = l.kind == LayerKind::Conv ? im2col(act, is, os, l.kernel, l.stride, B) : std::move(act);
        act = w * in;
        act.colwise() += bias;
        if (tape) tape->saved.push_back(std::move(in));
        break;
      }
      case LayerKind::Relu:
        if (tape) tape->saved.push_back(act);
        act = act.cwiseMax(Scalar(0));
        break;
      case LayerKind::Flatten:
        if (tape) tape->saved.emplace_back();
        act = reshaped(act, os.channels, B);
        break;
    }
  }
  return act;
}

template <typename Scalar>
LossGrad<Scalar> finite_or_throw(LossGrad<Scalar>& out) {
  if (!std::isfinite(out.loss)) throw DivergenceError("non-finite loss");
  if (!out.grad.allFinite()) throw DivergenceError("non-finite gradient");
  return std::move(out);
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> forward(const ModelSpec& spec, const Vector<Scalar>& params, const Matrix<Scalar>& batch) {
  return run_forward<Scalar>(spec, params, batch, nullptr);
}

template <typename Scalar>
Matrix<Scalar> softmax(const Matrix<Scalar>& logits) {
  Matrix<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const Scalar m = logits.col(b).maxCoeff();
    p.col(b) = (logits.col(b).array() - m).exp().matrix();
    p.col(b) /= p.col(b).sum();
  }
  return p;
}

template <typename Scalar>
LossGrad<Scalar> loss_and_grad(const ModelSpec& spec, const Vector<Scalar>& params, const Matrix<Scalar>& batch,
                               const Matrix<Scalar>& targets) {
  if (batch.cols() == 0) throw ShapeError("loss_and_grad: empty batch");
  if (targets.rows() != spec.classes() || targets.cols() != batch.cols())
    throw ShapeError("targets must be (classes x batch)");
  Tape<Scalar> tape;
  Matrix<Scalar> logits = run_forward<Scalar>(spec, params, batch, &tape);
  const Eigen::Index B = batch.cols();

  LossGrad<Scalar> out;
  out.grad = Vector<Scalar>::Zero(params.size());
  Matrix<Scalar> delta(logits.rows(), B);
  Scalar total = 0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const Scalar m = logits.col(b).maxCoeff();
    const Scalar lse = m + std::log((logits.col(b).array() - m).exp().sum());
    total -= (targets.col(b).array() * (logits.col(b).array() - lse)).sum();
    delta.col(b) = (logits.col(b).array() - lse).exp().matrix() - targets.col(b);
  }
  out.loss = total / static_cast<Scalar>(B);
  delta /= static_cast<Scalar>(B);

  const auto& shapes = spec.shapes();
  std::size_t block = spec.blocks().size();
  for (std::size_t i = spec.layers().size(); i-- > 0;) {
    const auto& l = spec.layers()[i];
    const Shape& is = shapes[i];
    const Shape& os = shapes[i + 1];
    Matrix<Scalar>& saved = tape.saved[i];
    switch (l.kind) {
      case LayerKind::Dense:
      case LayerKind::Conv: {
        const auto& pb = spec.blocks()[--block];
        Eigen::Map<const Matrix<Scalar>> w(params.data() + pb.offset, pb.rows, pb.cols);
        Eigen::Map<Matrix<Scalar>>(out.grad.data() + pb.offset, pb.rows, pb.cols).noalias() =
            delta * saved.transpose();
        out.grad.segment(pb.offset + pb.weight_count(), pb.rows) = delta.rowwise().sum();
        if (block == 0) return finite_or_throw(out);
        Matrix<Scalar> din = w.transpose() * delta;
        delta = l.kind == LayerKind::Conv ? col2im(din, is, os, l.kernel, l.stride, B) : std::move(din);
        break;
      }
      case LayerKind::Relu:
        delta = (saved.array() > Scalar(0)).select(delta, Scalar(0));
        break;
      case LayerKind::Flatten:
        delta = reshaped(delta, is.channels, static_cast<Eigen::Index>(is.height) * is.width * B);
        break;
    }
  }
  return finite_or_throw(out);
}

template <typename Scalar>
LossGrad<Scalar> loss_and_grad(const ModelSpec& spec, const Vector<Scalar>& params, const Matrix<Scalar>& batch,
                               std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != batch.cols())
    throw ShapeError("label count does not match batch size");
  return loss_and_grad<Scalar>(spec, params, batch, one_hot(labels, spec.classes()).template cast<Scalar>().eval());
}

Matrix<float> one_hot(std::span<const int> labels, int classes) {
  Matrix<float> t = Matrix<float>::Zero(classes, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] < 0 || labels[b] >= classes)
      throw ShapeError("label " + std::to_string(labels[b]) + " outside [0, " + std::to_string(classes) + ")");
    t(labels[b], static_cast<Eigen::Index>(b)) = 1.0f;
  }
  return t;
}

std::vector<int> argmax_columns(const Matrix<float>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.rows(); ++k)
      if (logits(k, b) > logits(best, b)) best = k;
    out[static_cast<std::size_t>(b)] = static_cast<int>(best);
  }
  return out;
}

namespace {
constexpr Eigen::Index kEvalChunk = 512;
}

Matrix<float> predict_proba(const ModelSpec& spec, const ParamVector& params, const ImageBatch& images) {
  Matrix<float> out(spec.classes(), images.cols());
  for (Eigen::Index start = 0; start < images.cols(); start += kEvalChunk) {
    const Eigen::Index n = std::min(kEvalChunk, images.cols() - start);
    Matrix<float> chunk = images.middleCols(start, n);
    out.middleCols(start, n) = softmax<float>(forward<float>(spec, params, chunk));
  }
  return out;
}

std::vector<int> predict(const ModelSpec& spec, const ParamVector& params, const ImageBatch& images) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(images.cols()));
  for (Eigen::Index start = 0; start < images.cols(); start += kEvalChunk) {
    const Eigen::Index n = std::min(kEvalChunk, images.cols() - start);
    Matrix<float> chunk = images.middleCols(start, n);
    auto part = argmax_columns(forward<float>(spec, params, chunk));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

double accuracy(const ModelSpec& spec, const ParamVector& params, const ImageBatch& images,
                std::span<const int> labels) {
  if (images.cols() == 0) throw ShapeError("accuracy of an empty dataset");
  if (static_cast<Eigen::Index>(labels.size()) != images.cols())
    throw ShapeError("label count does not match image count");
  const auto pred = predict(spec, params, images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double l2_distance(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size())
    throw ShapeError("l2_distance: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

ImageBatch gather_columns(const ImageBatch& images, std::span<const int> indices) {
  ImageBatch out(images.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = images.col(indices[i]);
  return out;
}

namespace {

constexpr char kCheckpointMagic[5] = {'C', 'M', 'R', 'K', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(bytes, 8);
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f32(std::ostream& os, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  os.write(bytes, 4);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ParamVector& params) {
  if (params.size() != spec.param_count()) throw ShapeError("checkpoint params do not match spec");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u64(os, spec.digest());
  put_u64(os, static_cast<std::uint64_t>(params.size()));
  for (float v : params) put_f32(os, v);
  if (!os) throw std::runtime_error("short write to checkpoint " + path.string());
}

ParamVector load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  constexpr std::size_t header = sizeof kCheckpointMagic + 16;
  if (bytes.size() < header || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CheckpointError(path.string() + ": not a certmark checkpoint (bad magic)");
  const std::uint64_t digest = get_u64(bytes.data() + 5);
  const std::uint64_t count = get_u64(bytes.data() + 13);
  if (digest != spec.digest())
    throw CheckpointError(path.string() + ": spec digest " + hex_digest(digest) + " does not match model spec " +
                          hex_digest(spec.digest()));
  if (count != static_cast<std::uint64_t>(spec.param_count()))
    throw CheckpointError(path.string() + ": parameter count mismatch");
  if (bytes.size() != header + 4 * count) throw CheckpointError(path.string() + ": truncated checkpoint");
  ParamVector params(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const unsigned char* p = bytes.data() + header + 4 * i;
    const std::uint32_t bits = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                               std::uint32_t(p[3]) << 24;
    params[static_cast<Eigen::Index>(i)] = std::bit_cast<float>(bits);
  }
  if (!params.allFinite()) throw CheckpointError(path.string() + ": non-finite parameters");
  return params;
}

std::uint64_t model_digest(const ModelSpec& spec, const ParamVector& params) {
  Fnv1a h;
  const std::uint64_t sd = spec.digest();
  h.update(&sd, sizeof sd);
  for (float v : params) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    h.update(&bits, sizeof bits);
  }
  return h.digest();
}

template Matrix<float> forward<float>(const ModelSpec&, const Vector<float>&, const Matrix<float>&);
template Matrix<double> forward<double>(const ModelSpec&, const Vector<double>&, const Matrix<double>&);
template Matrix<float> softmax<float>(const Matrix<float>&);
template Matrix<double> softmax<double>(const Matrix<double>&);
template LossGrad<float> loss_and_grad<float>(const ModelSpec&, const Vector<float>&, const Matrix<float>&,
                                              const Matrix<float>&);
template LossGrad<double> loss_and_grad<double>(const ModelSpec&, const Vector<double>&, const Matrix<double>&,
                                                const Matrix<double>&);
template LossGrad<float> loss_and_grad<float>(const ModelSpec&, const Vector<float>&, const Matrix<float>&,
                                              std::span<const int>);
template LossGrad<double> loss_and_grad<double>(const ModelSpec&, const Vector<double>&, const Matrix<double>&,
                                                std::span<const int>);

}  // namespace certmark
