#include "cxrclip/eval.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "cxrclip/errors.hpp"
#include "cxrclip/sampler.hpp"

namespace cxrclip::eval {

double RetrievalResult::recall(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return recalls[i];
  }
  throw std::out_of_range("recall at k=" + std::to_string(k) + " was not computed");
}

double rsum(double r1, double r5, double r10) { return 100.0 * (r1 + r5 + r10); }

RetrievalResult recall_at_k(const Matrix& images, const Matrix& texts, const std::vector<std::size_t>& ks) {
  if (images.rows != texts.rows || images.cols != texts.cols) {
    throw ShapeMismatch("image and text embeddings must have the same shape");
  }
  const std::size_t n = images.rows;
  for (auto k : ks) {
    if (k == 0 || k > n) throw ShapeMismatch("k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  RetrievalResult out;
  out.ks = ks;
  out.recalls.assign(ks.size(), 0.0);
  out.ranks.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double own = dot(images.row(i), texts.row(i));
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s = dot(images.row(i), texts.row(j));
      if (s > own || (s == own && j < i)) ++rank;
    }
    out.ranks[i] = rank;
    for (std::size_t q = 0; q < ks.size(); ++q) {
      if (rank < ks[q]) out.recalls[q] += 1.0;
    }
  }
  double sum = 0.0;
  for (double& r : out.recalls) {
    r /= static_cast<double>(n);
    sum += r;
  }
  out.rsum = 100.0 * sum;
  return out;
}

double auc(const std::vector<double>& positive_scores, const std::vector<double>& negative_scores) {
  if (positive_scores.empty() || negative_scores.empty()) {
    throw DegenerateLabels("AUC needs at least one positive and one negative");
  }
  // Sort negatives once, then count below/equal per positive.
  std::vector<double> neg = negative_scores;
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;
  for (double p : positive_scores) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(lo, neg.end(), p);
    wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(positive_scores.size()) * static_cast<double>(negative_scores.size()));
}

BinaryClsResult zero_shot_binary(const Matrix& images, std::span<const double> pos_prompt,
                                 std::span<const double> neg_prompt, const std::vector<bool>& labels) {
  if (labels.size() != images.rows) throw ShapeMismatch("one label per image required");
  if (pos_prompt.size() != images.cols || neg_prompt.size() != images.cols) {
    throw ShapeMismatch("prompt embedding width differs from image embeddings");
  }
  BinaryClsResult out;
  std::vector<double> pos;
  std::vector<double> neg;
  for (std::size_t i = 0; i < images.rows; ++i) {
    const double s = dot(images.row(i), pos_prompt) - dot(images.row(i), neg_prompt);
    out.scores.push_back(s);
    (labels[i] ? pos : neg).push_back(s);
  }
  out.auc = auc(pos, neg);
  return out;
}

MultiClsResult zero_shot_multiclass(const Matrix& images, const Matrix& class_prompts,
                                    const std::vector<std::size_t>& labels) {
  const std::size_t k = class_prompts.rows;
  if (k < 2) throw ShapeMismatch("multi-class evaluation needs at least two classes");
  if (class_prompts.cols != images.cols) throw ShapeMismatch("prompt embedding width differs from image embeddings");
  if (labels.size() != images.rows) throw ShapeMismatch("one label per image required");
  MultiClsResult out;
  out.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < images.rows; ++i) {
    if (labels[i] >= k) throw ShapeMismatch("label outside the class range");
    std::size_t best = 0;
    double best_score = dot(images.row(i), class_prompts.row(0));
    for (std::size_t c = 1; c < k; ++c) {
      const double s = dot(images.row(i), class_prompts.row(c));
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    out.predictions.push_back(best);
    ++out.confusion[labels[i]][best];
    if (best == labels[i]) ++correct;
  }
  out.accuracy = images.rows == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(images.rows);
  return out;
}

Matrix class_prompt_embeddings(const model::ClipModel& m, const prompt::PromptGrammar& grammar,
                               const std::vector<std::string>& classes, int renderings, std::uint64_t seed) {
  if (renderings < 1) throw std::invalid_argument("at least one prompt rendering per class");
  const auto dim = static_cast<std::size_t>(m.text.dims().embed);
  Matrix out(classes.size(), dim);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    Rng rng(derive_seed(seed, classes[c]));
    std::vector<double> mean(dim, 0.0);
    for (int r = 0; r < renderings; ++r) {
      const std::string text = grammar.render_prompt(classes[c], prompt::LabelValue::positive, rng);
      const auto e = m.text.encode(text).embedding;
      for (std::size_t j = 0; j < dim; ++j) mean[j] += e[j];
    }
    double norm = 0.0;
    for (double v : mean) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 1e-12)) throw ZeroRow(c);
    for (std::size_t j = 0; j < dim; ++j) out(c, j) = mean[j] / norm;
  }
  return out;
}

Matrix embed_images(const model::ClipModel& m, const std::vector<Study>& studies) {
  const auto dim = static_cast<std::size_t>(m.image.dims().embed);
  Matrix out(studies.size(), dim);
  for (std::size_t i = 0; i < studies.size(); ++i) {
    const Image img = sampler::eval_image(studies[i], m.image.dims().input_size);
    const auto e = m.image.encode(img).embedding;
    std::copy(e.begin(), e.end(), out.row(i).begin());
  }
  return out;
}

Matrix embed_texts(const model::ClipModel& m, const std::vector<std::string>& texts) {
  const auto dim = static_cast<std::size_t>(m.text.dims().embed);
  Matrix out(texts.size(), dim);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto e = m.text.encode(texts[i]).embedding;
    std::copy(e.begin(), e.end(), out.row(i).begin());
  }
  return out;
}

std::vector<std::size_t> single_labels(const std::vector<Study>& studies, const std::vector<std::string>& classes) {
  std::vector<std::size_t> out;
  for (const Study& s : studies) {
    std::optional<std::size_t> found;
    if (s.labels) {
      for (std::size_t c = 0; c < classes.size(); ++c) {
        auto it = s.labels->find(classes[c]);
        if (it == s.labels->end() || it->second != prompt::LabelValue::positive) continue;
        if (found) throw DataError("study " + s.id + " is positive for more than one evaluated class");
        found = c;
      }
    }
    if (!found) throw DataError("study " + s.id + " has no positive evaluated class");
    out.push_back(*found);
  }
  return out;
}

std::string metrics_jsonl(const std::vector<MetricRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["task"] = r.task;
    j["split"] = r.split;
    j["metric"] = r.metric;
    j["value"] = r.value;
    j["seed"] = r.seed;
    j["config_hash"] = r.config_hash;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace cxrclip::eval
