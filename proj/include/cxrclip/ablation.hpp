#pragma once

// Trains one model per objective variant and tabulates held-out metrics.

#include <string>
#include <vector>

#include "cxrclip/eval.hpp"
#include "cxrclip/train.hpp"

namespace cxrclip::eval {

struct AblationVariant {
  std::string name;
  sampler::SamplingMode mode = sampler::SamplingMode::multiview;
  bool augment_views = true;
  double lambda_icl = 1.0;
  double lambda_tcl = 0.5;
};

// clip, +study, +aug, +mvs, +icl, +tcl; each adds one ingredient.
std::vector<AblationVariant> default_variants();

train::TrainConfig apply_variant(const train::TrainConfig& base, const AblationVariant& v);

struct HeldOutMetrics {
  double accuracy = 0.0;
  RetrievalResult retrieval;
};

HeldOutMetrics evaluate_held_out(const model::ClipModel& m, const prompt::PromptGrammar& grammar,
                                 const std::vector<Study>& test, const std::vector<std::string>& classes,
                                 int prompt_renderings, std::uint64_t seed);

struct AblationRow {
  std::string variant;
  double acc = 0.0;
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  double rsum = 0.0;
};

std::vector<AblationRow> ablation_report(const std::vector<Study>& train_set, const std::vector<Study>& valid_set,
                                         const std::vector<Study>& test_set, const prompt::PromptGrammar& grammar,
                                         const train::TrainConfig& base, const std::vector<AblationVariant>& variants,
                                         const std::vector<std::string>& classes, int prompt_renderings);

// Header `variant,acc,r1,r5,r10,rsum`, one row per variant.
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace cxrclip::eval
