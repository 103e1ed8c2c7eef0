#include "cxrclip/losses.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "cxrclip/errors.hpp"

namespace cxrclip {

namespace {

constexpr double kZeroNorm = 1e-12;
constexpr double kUnitTolerance = 1e-6;

void require_same_shape(const EmbeddingBatch& a, const EmbeddingBatch& b) {
  if (a.size() != b.size() || a.dim() != b.dim()) {
    throw ShapeMismatch("embedding batches differ: " + std::to_string(a.size()) + "x" +
                        std::to_string(a.dim()) + " vs " + std::to_string(b.size()) + "x" +
                        std::to_string(b.dim()));
  }
}

double row_norm(std::span<const double> r) { return std::sqrt(dot(r, r)); }

}  // namespace

EmbeddingBatch::EmbeddingBatch(Matrix rows, Modality role) : rows_(std::move(rows)), role_(role) {
  if (rows_.rows < 1 || rows_.cols < 2) {
    throw ShapeMismatch("embedding batch needs n >= 1 and d >= 2");
  }
  for (std::size_t i = 0; i < rows_.rows; ++i) {
    if (std::abs(row_norm(rows_.row(i)) - 1.0) > kUnitTolerance) {
      throw std::invalid_argument("embedding row " + std::to_string(i) + " is not unit norm");
    }
  }
}

void Temperature::clamp() { log_tau = std::clamp(log_tau, std::log(kMin), std::log(kMax)); }

EmbeddingBatch l2_normalize(const Matrix& raw, Modality role) {
  Matrix out(raw.rows, raw.cols);
  for (std::size_t i = 0; i < raw.rows; ++i) {
    const double norm = row_norm(raw.row(i));
    if (!(norm > kZeroNorm)) throw ZeroRow(i);
    for (std::size_t j = 0; j < raw.cols; ++j) out(i, j) = raw(i, j) / norm;
  }
  return EmbeddingBatch(std::move(out), role);
}

Matrix l2_normalize_backward(const Matrix& raw, const Matrix& normalized, const Matrix& grad) {
  Matrix out(raw.rows, raw.cols);
  for (std::size_t i = 0; i < raw.rows; ++i) {
    const double norm = row_norm(raw.row(i));
    const double proj = dot(normalized.row(i), grad.row(i));
    for (std::size_t j = 0; j < raw.cols; ++j) {
      out(i, j) = (grad(i, j) - normalized(i, j) * proj) / norm;
    }
  }
  return out;
}

LossOutput clip_loss(const EmbeddingBatch& u, const EmbeddingBatch& v, Temperature temp) {
  require_same_shape(u, v);
  const std::size_t n = u.size();
  const std::size_t d = u.dim();
  const double inv_tau = 1.0 / temp.tau();
  const Matrix& a = u.rows();
  const Matrix& b = v.rows();

  Matrix logits(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) logits(i, j) = dot(a.row(i), b.row(j)) * inv_tau;
  }

  // Row softmax (u_i against all v_j) and column softmax (v_j against all u_i).
  Matrix p_row(n, n);
  Matrix p_col(n, n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      p_row(i, j) = std::exp(logits(i, j) - mx);
      z += p_row(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) p_row(i, j) /= z;
    total += mx + std::log(z) - logits(i, i);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p_col(i, j) = std::exp(logits(i, j) - mx);
      z += p_col(i, j);
    }
    for (std::size_t i = 0; i < n; ++i) p_col(i, j) /= z;
    total += mx + std::log(z) - logits(j, j);
  }

  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  LossOutput out;
  out.value = total * scale;

  // dL/dS = (P_row + P_col - 2I) / (2n)
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      g(i, j) = (p_row(i, j) + p_col(i, j) - (i == j ? 2.0 : 0.0)) * scale;
    }
  }

  Matrix ga(n, d);
  Matrix gb(n, d);
  double g_log_tau = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double gij = g(i, j);
      g_log_tau -= gij * logits(i, j);
      const double w = gij * inv_tau;
      for (std::size_t k = 0; k < d; ++k) {
        ga(i, k) += w * b(j, k);
        gb(j, k) += w * a(i, k);
      }
    }
  }
  out.grad_inputs.push_back(std::move(ga));
  out.grad_inputs.push_back(std::move(gb));
  out.grad_log_tau = g_log_tau;
  return out;
}

LossOutput mvs_loss(const EmbeddingBatch& u1, const EmbeddingBatch& u2, const EmbeddingBatch& v1,
                    const EmbeddingBatch& v2, Temperature temp) {
  require_same_shape(u1, u2);
  require_same_shape(u1, v1);
  require_same_shape(u1, v2);
  const std::size_t n = u1.size();
  const std::size_t d = u1.dim();

  LossOutput out;
  out.grad_inputs.assign(4, Matrix(n, d));
  struct Pairing {
    const EmbeddingBatch& text;
    std::size_t text_slot;
    const EmbeddingBatch& image;
    std::size_t image_slot;
  };
  const Pairing pairings[] = {{u1, 0, v1, 2}, {u2, 1, v1, 2}, {u1, 0, v2, 3}, {u2, 1, v2, 3}};
  for (const auto& p : pairings) {
    LossOutput term = clip_loss(p.text, p.image, temp);
    out.value += 0.25 * term.value;
    add_scaled(out.grad_inputs[p.text_slot], term.grad_inputs[0], 0.25);
    add_scaled(out.grad_inputs[p.image_slot], term.grad_inputs[1], 0.25);
    out.grad_log_tau += 0.25 * term.grad_log_tau;
  }
  return out;
}

LossOutput icl_loss(const EmbeddingBatch& v1, const EmbeddingBatch& v2, Temperature temp) {
  return clip_loss(v1, v2, temp);
}

LossOutput tcl_loss(const EmbeddingBatch& u1, const EmbeddingBatch& u2, Temperature temp) {
  return clip_loss(u1, u2, temp);
}

TotalLoss total_loss(const EmbeddingBatch& u1, const EmbeddingBatch& u2, const EmbeddingBatch& v1,
                     const EmbeddingBatch& v2, Temperature temp, LossWeights weights) {
  LossOutput mvs = mvs_loss(u1, u2, v1, v2, temp);
  LossOutput icl = icl_loss(v1, v2, temp);
  LossOutput tcl = tcl_loss(u1, u2, temp);

  TotalLoss out;
  out.mvs = mvs.value;
  out.icl = icl.value;
  out.tcl = tcl.value;
  out.combined = std::move(mvs);
  LossOutput& c = out.combined;
  c.value = out.mvs + weights.lambda_icl * out.icl + weights.lambda_tcl * out.tcl;
  add_scaled(c.grad_inputs[2], icl.grad_inputs[0], weights.lambda_icl);
  add_scaled(c.grad_inputs[3], icl.grad_inputs[1], weights.lambda_icl);
  add_scaled(c.grad_inputs[0], tcl.grad_inputs[0], weights.lambda_tcl);
  add_scaled(c.grad_inputs[1], tcl.grad_inputs[1], weights.lambda_tcl);
  c.grad_log_tau += weights.lambda_icl * icl.grad_log_tau + weights.lambda_tcl * tcl.grad_log_tau;
  return out;
}

FiniteDiffGrad finite_diff_grad(const ScalarLossFn& loss_fn, std::span<const Matrix> inputs,
                                double log_tau, double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw std::invalid_argument("finite difference epsilon must lie in [1e-7, 1e-3]");
  }
  std::vector<Matrix> work(inputs.begin(), inputs.end());
  FiniteDiffGrad out;
  for (std::size_t m = 0; m < work.size(); ++m) {
    Matrix grad(work[m].rows, work[m].cols);
    for (std::size_t k = 0; k < work[m].data.size(); ++k) {
      const double saved = work[m].data[k];
      work[m].data[k] = saved + epsilon;
      const double plus = loss_fn(work, log_tau);
      work[m].data[k] = saved - epsilon;
      const double minus = loss_fn(work, log_tau);
      work[m].data[k] = saved;
      grad.data[k] = (plus - minus) / (2.0 * epsilon);
    }
    out.grads.push_back(std::move(grad));
  }
  out.grad_log_tau =
      (loss_fn(work, log_tau + epsilon) - loss_fn(work, log_tau - epsilon)) / (2.0 * epsilon);
  return out;
}

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

double max_relative_error(const Matrix& a, const Matrix& b, double floor) {
  if (!a.same_shape(b)) throw ShapeMismatch("gradient shapes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    worst = std::max(worst, relative_error(a.data[i], b.data[i], floor));
  }
  return worst;
}

}  // namespace cxrclip
