#pragma once

// Contrastive objectives over batches of unit-norm embeddings.
//
// All four losses reduce to one symmetric InfoNCE term, clip_loss(A, B):
// logits S = A B^T / tau, and the value is the mean of the row-wise
// (A -> B) and column-wise (B -> A) cross entropies against the diagonal.
// Gradients are exact and returned alongside the value, including the
// derivative with respect to log(tau).

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "cxrclip/matrix.hpp"

namespace cxrclip {

enum class Modality { image, text };

class EmbeddingBatch {
 public:
  // Takes rows that are already unit norm (within 1e-6); throws otherwise.
  EmbeddingBatch(Matrix rows, Modality role);

  const Matrix& rows() const { return rows_; }
  std::size_t size() const { return rows_.rows; }
  std::size_t dim() const { return rows_.cols; }
  Modality role() const { return role_; }

 private:
  Matrix rows_;
  Modality role_;
};

struct Temperature {
  static constexpr double kInitial = 0.07;
  static constexpr double kMin = 1e-3;
  static constexpr double kMax = 10.0;

  double log_tau = std::log(kInitial);

  double tau() const { return std::exp(log_tau); }
  static Temperature from_tau(double tau) { return Temperature{std::log(tau)}; }
  // Keeps tau inside [kMin, kMax]; called after every optimizer update.
  void clamp();
};

struct LossWeights {
  double lambda_icl = 1.0;
  double lambda_tcl = 0.5;
};

struct LossOutput {
  double value = 0.0;
  std::vector<Matrix> grad_inputs;  // one per input batch, same order and shape
  double grad_log_tau = 0.0;
};

struct TotalLoss {
  LossOutput combined;  // grad_inputs ordered (U1, U2, V1, V2)
  double mvs = 0.0;
  double icl = 0.0;
  double tcl = 0.0;
};

// Divides every row by its Euclidean norm. Throws ZeroRow for rows with
// norm <= 1e-12.
EmbeddingBatch l2_normalize(const Matrix& raw, Modality role);

// Pulls a gradient w.r.t. normalized rows back to the raw rows:
// dz = (g - y (y.g)) / |z|.
Matrix l2_normalize_backward(const Matrix& raw, const Matrix& normalized, const Matrix& grad);

// Text batch U, image batch V; row i of U pairs with row i of V.
LossOutput clip_loss(const EmbeddingBatch& u, const EmbeddingBatch& v, Temperature temp);

// Mean of the four cross pairings; grad_inputs ordered (U1, U2, V1, V2).
LossOutput mvs_loss(const EmbeddingBatch& u1, const EmbeddingBatch& u2, const EmbeddingBatch& v1,
                    const EmbeddingBatch& v2, Temperature temp);

// Same-study image views pulled together.
LossOutput icl_loss(const EmbeddingBatch& v1, const EmbeddingBatch& v2, Temperature temp);

// Same-study text views pulled together.
LossOutput tcl_loss(const EmbeddingBatch& u1, const EmbeddingBatch& u2, Temperature temp);

TotalLoss total_loss(const EmbeddingBatch& u1, const EmbeddingBatch& u2, const EmbeddingBatch& v1,
                     const EmbeddingBatch& v2, Temperature temp, LossWeights weights);

// ---- finite-difference oracle ------------------------------------------

using ScalarLossFn = std::function<double(std::span<const Matrix> inputs, double log_tau)>;

struct FiniteDiffGrad {
  std::vector<Matrix> grads;
  double grad_log_tau = 0.0;
};

// Central differences on every entry of every input and on log_tau.
// epsilon must lie in [1e-7, 1e-3].
FiniteDiffGrad finite_diff_grad(const ScalarLossFn& loss_fn, std::span<const Matrix> inputs,
                                double log_tau, double epsilon);

// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero entries from
// dominating when both sides are at rounding level.
double relative_error(double a, double b, double floor = 1e-6);
double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-6);

}  // namespace cxrclip
