#pragma once

// Retrieval recall, zero-shot AUC and accuracy, and the metric document.

#include <cstdint>
#include <string>
#include <vector>

#include "cxrclip/encoders.hpp"
#include "cxrclip/matrix.hpp"
#include "cxrclip/prompt.hpp"
#include "cxrclip/study.hpp"

namespace cxrclip::eval {

struct RetrievalResult {
  std::vector<std::size_t> ks;
  std::vector<double> recalls;    // fraction per k
  double rsum = 0.0;              // 100 * sum of recalls
  std::vector<std::size_t> ranks; // 0-based rank of the paired text per query

  double recall(std::size_t k) const;
};

double rsum(double r1, double r5, double r10);

// Row i of images pairs with row i of texts. Texts are ranked by inner
// product, descending; equal scores rank the lower index first.
RetrievalResult recall_at_k(const Matrix& images, const Matrix& texts,
                            const std::vector<std::size_t>& ks = {1, 5, 10});

// Exact Mann-Whitney statistic: P(pos > neg) + 0.5 P(pos == neg).
double auc(const std::vector<double>& positive_scores, const std::vector<double>& negative_scores);

struct BinaryClsResult {
  double auc = 0.0;
  std::vector<double> scores;
};

// score_i = <x_i, pos> - <x_i, neg>. Throws DegenerateLabels when either
// label value is absent.
BinaryClsResult zero_shot_binary(const Matrix& images, std::span<const double> pos_prompt,
                                 std::span<const double> neg_prompt, const std::vector<bool>& labels);

struct MultiClsResult {
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

// Argmax over class similarities, lowest class index on ties.
MultiClsResult zero_shot_multiclass(const Matrix& images, const Matrix& class_prompts,
                                    const std::vector<std::size_t>& labels);

// Mean of `renderings` sampled positive prompts per class, renormalized.
Matrix class_prompt_embeddings(const model::ClipModel& m, const prompt::PromptGrammar& grammar,
                               const std::vector<std::string>& classes, int renderings, std::uint64_t seed);

Matrix embed_images(const model::ClipModel& m, const std::vector<Study>& studies);
Matrix embed_texts(const model::ClipModel& m, const std::vector<std::string>& texts);

// The positive class of each study among `classes`; throws DataError when a
// study has none or more than one.
std::vector<std::size_t> single_labels(const std::vector<Study>& studies, const std::vector<std::string>& classes);

struct MetricRecord {
  std::string task;
  std::string split;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// One JSON object per line with the fields above.
std::string metrics_jsonl(const std::vector<MetricRecord>& records);

}  // namespace cxrclip::eval
