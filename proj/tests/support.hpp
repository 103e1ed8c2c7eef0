#pragma once

// Helpers shared by the unit tests and the acceptance runner. Everything
// here is written independently of the library code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "cxrclip/losses.hpp"
#include "cxrclip/rng.hpp"

namespace testing {

inline cxrclip::Matrix random_matrix(cxrclip::Rng& rng, std::size_t n, std::size_t d) {
  cxrclip::Matrix m(n, d);
  for (double& x : m.data) x = rng.normal();
  return m;
}

inline cxrclip::Matrix unit_rows(cxrclip::Matrix m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (double x : m.row(i)) s += x * x;
    s = std::sqrt(s);
    for (double& x : m.row(i)) x /= s;
  }
  return m;
}

inline cxrclip::EmbeddingBatch random_batch(cxrclip::Rng& rng, std::size_t n, std::size_t d,
                                            cxrclip::Modality role) {
  return cxrclip::EmbeddingBatch(unit_rows(random_matrix(rng, n, d)), role);
}

// Symmetric InfoNCE with the whole logit matrix written out and plain
// log-sum-exp in long double.
inline double naive_clip(const cxrclip::Matrix& u, const cxrclip::Matrix& v, double tau) {
  const std::size_t n = u.rows;
  std::vector<long double> s(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (std::size_t k = 0; k < u.cols; ++k) acc += static_cast<long double>(u(i, k)) * v(j, k);
      s[i * n + j] = acc / tau;
    }
  }
  long double total = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    long double row = 0.0L;
    long double col = 0.0L;
    for (std::size_t j = 0; j < n; ++j) {
      row += std::exp(s[i * n + j]);
      col += std::exp(s[j * n + i]);
    }
    total += (std::log(row) - s[i * n + i]) + (std::log(col) - s[i * n + i]);
  }
  return static_cast<double>(total / (2.0L * n));
}

inline cxrclip::Matrix permute_rows(const cxrclip::Matrix& m, const std::vector<std::size_t>& perm) {
  cxrclip::Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t k = 0; k < m.cols; ++k) out(i, k) = m(perm[i], k);
  }
  return out;
}

// Share of queries whose paired column lands in the top k after a full
// stable sort by descending score.
inline std::vector<double> sorted_recall(const cxrclip::Matrix& images, const cxrclip::Matrix& texts,
                                         const std::vector<std::size_t>& ks) {
  const std::size_t n = images.rows;
  std::vector<double> hits(ks.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> score(texts.rows);
    for (std::size_t j = 0; j < texts.rows; ++j) score[j] = cxrclip::dot(images.row(i), texts.row(j));
    std::vector<std::size_t> order(texts.rows);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    const auto pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), i) - order.begin());
    for (std::size_t k = 0; k < ks.size(); ++k) {
      if (pos < ks[k]) hits[k] += 1.0;
    }
  }
  for (double& h : hits) h /= static_cast<double>(n);
  return hits;
}

// P(pos > neg) + 0.5 P(pos == neg) over every pair.
inline double pairwise_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double q : neg) {
      if (p > q) wins += 1.0;
      else if (p == q) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}


enum class LossKind { clip, mvs, icl, tcl, total };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::clip: return "clip";
    case LossKind::mvs: return "mvs";
    case LossKind::icl: return "icl";
    case LossKind::tcl: return "tcl";
    case LossKind::total: return "total";
  }
  return "?";
}

inline std::size_t loss_arity(LossKind k) { return k == LossKind::mvs || k == LossKind::total ? 4 : 2; }

// Raw (unnormalized) inputs in, loss on the normalized rows out.
inline cxrclip::LossOutput evaluate_loss(LossKind k, std::span<const cxrclip::Matrix> raw, double log_tau) {
  using cxrclip::Modality;
  const auto role = [k](std::size_t slot) {
    if (k == LossKind::icl) return Modality::image;
    if (k == LossKind::tcl) return Modality::text;
    if (k == LossKind::clip) return slot == 0 ? Modality::text : Modality::image;
    return slot < 2 ? Modality::text : Modality::image;
  };
  std::vector<cxrclip::EmbeddingBatch> b;
  for (std::size_t i = 0; i < raw.size(); ++i) b.push_back(cxrclip::l2_normalize(raw[i], role(i)));
  const cxrclip::Temperature t{log_tau};
  switch (k) {
    case LossKind::clip: return cxrclip::clip_loss(b[0], b[1], t);
    case LossKind::mvs: return cxrclip::mvs_loss(b[0], b[1], b[2], b[3], t);
    case LossKind::icl: return cxrclip::icl_loss(b[0], b[1], t);
    case LossKind::tcl: return cxrclip::tcl_loss(b[0], b[1], t);
    case LossKind::total: return cxrclip::total_loss(b[0], b[1], b[2], b[3], t, {}).combined;
  }
  return {};
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Worst relative error between the analytic gradient (pulled back through
// the normalization) and central differences, over every input entry and
// log tau.
inline double gradient_check(LossKind k, const std::vector<cxrclip::Matrix>& raw, double log_tau, double eps = 1e-5) {
  const cxrclip::LossOutput analytic = evaluate_loss(k, raw, log_tau);
  auto fn = [k](std::span<const cxrclip::Matrix> in, double lt) { return evaluate_loss(k, in, lt).value; };
  const cxrclip::FiniteDiffGrad fd = cxrclip::finite_diff_grad(fn, raw, log_tau, eps);
  double worst = rel_err(analytic.grad_log_tau, fd.grad_log_tau);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const cxrclip::Matrix normalized = unit_rows(raw[i]);
    const cxrclip::Matrix g = cxrclip::l2_normalize_backward(raw[i], normalized, analytic.grad_inputs[i]);
    for (std::size_t e = 0; e < g.data.size(); ++e) worst = std::max(worst, rel_err(g.data[e], fd.grads[i].data[e]));
  }
  return worst;
}

}  // namespace testing
