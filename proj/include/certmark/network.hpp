#pragma once

#include "certmark/model.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace certmark {

/// Logits for a batch: input is (pixels x B), one HWC image per column; result is (K x B).
/// Instantiated for float and double; the double path exists for gradient checking.
template <typename Scalar>
Matrix<Scalar> forward(const ModelSpec& spec, const Vector<Scalar>& params, const Matrix<Scalar>& batch);

template <typename Scalar>
struct LossGrad {
  Scalar loss = 0;
  Vector<Scalar> grad;
};

/// Mean softmax cross-entropy against per-example target distributions (K x B) and its gradient.
template <typename Scalar>
LossGrad<Scalar> loss_and_grad(const ModelSpec& spec, const Vector<Scalar>& params, const Matrix<Scalar>& batch,
                               const Matrix<Scalar>& targets);

/// Hard-label form.
template <typename Scalar>
LossGrad<Scalar> loss_and_grad(const ModelSpec& spec, const Vector<Scalar>& params, const Matrix<Scalar>& batch,
                               std::span<const int> labels);

Matrix<float> one_hot(std::span<const int> labels, int classes);

/// Softmax of each column.
template <typename Scalar>
Matrix<Scalar> softmax(const Matrix<Scalar>& logits);

/// Argmax per column, ties go to the lowest class index.
std::vector<int> argmax_columns(const Matrix<float>& logits);

/// Predictions over a large image set, evaluated in chunks.
std::vector<int> predict(const ModelSpec& spec, const ParamVector& params, const ImageBatch& images);
Matrix<float> predict_proba(const ModelSpec& spec, const ParamVector& params, const ImageBatch& images);

/// Fraction of argmax-correct predictions.
double accuracy(const ModelSpec& spec, const ParamVector& params, const ImageBatch& images,
                std::span<const int> labels);

double l2_distance(const ParamVector& a, const ParamVector& b);

/// Columns `indices` of `images` gathered into a new batch.
ImageBatch gather_columns(const ImageBatch& images, std::span<const int> indices);

// Checkpoint: "CMRK1", spec digest (u64 LE), parameter count (u64 LE), then f32 LE values.

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ParamVector& params);

/// Throws CheckpointError on bad magic, digest mismatch, count mismatch or truncation.
ParamVector load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Digest of a trained model: spec digest plus parameter bytes.
std::uint64_t model_digest(const ModelSpec& spec, const ParamVector& params);

}  // namespace certmark
