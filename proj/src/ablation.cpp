#include "cxrclip/ablation.hpp"

#include <cstdio>

namespace cxrclip::eval {

std::vector<AblationVariant> default_variants() {
  using sampler::SamplingMode;
  return {
      {"clip", SamplingMode::naive, false, 0.0, 0.0},
      {"+study", SamplingMode::study, false, 0.0, 0.0},
      {"+aug", SamplingMode::study, true, 0.0, 0.0},
      {"+mvs", SamplingMode::multiview, true, 0.0, 0.0},
      {"+icl", SamplingMode::multiview, true, 1.0, 0.0},
      {"+tcl", SamplingMode::multiview, true, 1.0, 0.5},
  };
}

train::TrainConfig apply_variant(const train::TrainConfig& base, const AblationVariant& v) {
  train::TrainConfig cfg = base;
  cfg.sampler.mode = v.mode;
  cfg.sampler.augment_views = v.augment_views;
  cfg.lambda_icl = v.lambda_icl;
  cfg.lambda_tcl = v.lambda_tcl;
  return cfg;
}

HeldOutMetrics evaluate_held_out(const model::ClipModel& m, const prompt::PromptGrammar& grammar,
                                 const std::vector<Study>& test, const std::vector<std::string>& classes,
                                 int prompt_renderings, std::uint64_t seed) {
  const Matrix images = embed_images(m, test);
  std::vector<std::string> texts;
  for (const Study& s : test) texts.push_back(sampler::eval_text(s, grammar));
  HeldOutMetrics out;
  out.retrieval = recall_at_k(images, embed_texts(m, texts), {1, 5, 10});
  const Matrix prompts = class_prompt_embeddings(m, grammar, classes, prompt_renderings, seed);
  out.accuracy = zero_shot_multiclass(images, prompts, single_labels(test, classes)).accuracy;
  return out;
}

std::vector<AblationRow> ablation_report(const std::vector<Study>& train_set, const std::vector<Study>& valid_set,
                                         const std::vector<Study>& test_set, const prompt::PromptGrammar& grammar,
                                         const train::TrainConfig& base, const std::vector<AblationVariant>& variants,
                                         const std::vector<std::string>& classes, int prompt_renderings) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    const train::TrainConfig cfg = apply_variant(base, v);
    const train::TrainResult result = train::train(train_set, valid_set, grammar, cfg);
    const HeldOutMetrics m = evaluate_held_out(result.model, grammar, test_set, classes, prompt_renderings,
                                               derive_seed(cfg.seed, "prompts"));
    rows.push_back(AblationRow{v.name, m.accuracy, m.retrieval.recall(1), m.retrieval.recall(5),
                               m.retrieval.recall(10), m.retrieval.rsum});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,acc,r1,r5,r10,rsum\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.4f\n", r.variant.c_str(), r.acc, r.r1, r.r5, r.r10,
                  r.rsum);
    out += buf;
  }
  return out;
}

}  // namespace cxrclip::eval
