#pragma once

// AdamW with a warmup + cosine schedule, and the epoch loop with early
// stopping on validation loss.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cxrclip/encoders.hpp"
#include "cxrclip/prompt.hpp"
#include "cxrclip/sampler.hpp"
#include "cxrclip/study.hpp"

namespace cxrclip::train {

// Linear 0 -> base_lr over [0, warmup_steps], then half-cosine down to 0 at
// total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr);

struct OptimState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Name of the scalar block holding log(tau); it is never weight-decayed.
inline constexpr const char* kLogTauBlock = "logit.log_tau";

// One AdamW update in place. Decay multiplies parameters by (1 - lr * wd)
// before the adaptive step. Moments are allocated on first use.
void optim_step(std::vector<model::ParamBlock>& params, const std::vector<model::ParamBlock>& grads,
                OptimState& state, double lr, double weight_decay);

struct TrainConfig {
  double learning_rate = 5e-5;
  double weight_decay = 1e-4;
  int epochs = 15;
  int warmup_epochs = 1;
  int batch_studies = 32;
  double lambda_icl = 1.0;
  double lambda_tcl = 0.5;
  std::uint64_t seed = 0;
  int early_stop_patience = 3;
  double grad_clip = 0.0;  // global L2 norm; 0 disables

  sampler::SamplerConfig sampler;
  model::ImageEncoderDims image_dims;
  model::TextEncoderDims text_dims;
  double initial_tau = Temperature::kInitial;
};

// Throws ConfigError.
void validate(const TrainConfig& cfg);

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double tau = 0.0;
  double mvs = 0.0;
  double icl = 0.0;
  double tcl = 0.0;
  double total = 0.0;
};

struct EpochRecord {
  int epoch = 0;  // 0 is the untrained model
  double val_loss = 0.0;
  bool improved = false;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;

  // One JSON object per line, steps then epochs.
  std::string to_jsonl() const;
};

struct TrainResult {
  model::ClipModel model;  // best validation checkpoint
  TrainLog log;
};

// Words of every training report section plus the grammar's literal words.
model::Vocabulary build_vocabulary(const std::vector<Study>& train, const prompt::PromptGrammar& grammar);

// Loss and gradients of one sampled batch. grads follows all_params order.
struct BatchResult {
  TotalLoss loss;
  std::vector<model::ParamBlock> grads;
};
BatchResult batch_loss(const model::ClipModel& m, const sampler::Batch& batch, const TrainConfig& cfg,
                       bool with_grads);

// Image blocks, text blocks, then the log-tau scalar.
std::vector<model::ParamBlock> all_params(const model::ClipModel& m);
void set_params(model::ClipModel& m, std::vector<model::ParamBlock> params);

// Mean total loss over the validation set in fixed order with a fixed seed.
double validation_loss(const model::ClipModel& m, const std::vector<Study>& valid,
                       const prompt::PromptGrammar& grammar, const TrainConfig& cfg);

using StepCallback = std::function<void(const StepRecord&)>;

// Throws NumericError with the step index when the loss or parameters go
// non-finite, or an embedding collapses to zero.
TrainResult train(const std::vector<Study>& train_set, const std::vector<Study>& valid_set,
                  const prompt::PromptGrammar& grammar, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

}  // namespace cxrclip::train
