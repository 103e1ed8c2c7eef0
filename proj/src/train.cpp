#include "cxrclip/train.hpp"

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "cxrclip/errors.hpp"

namespace cxrclip::train {

using model::ParamBlock;

double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr) {
  if (step <= 0) return 0.0;
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const std::int64_t span = total_steps - warmup_steps;
  if (span <= 0) return base_lr;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void optim_step(std::vector<ParamBlock>& params, const std::vector<ParamBlock>& grads,
                OptimState& state, double lr, double weight_decay) {
  if (params.size() != grads.size()) throw ShapeMismatch("parameter and gradient block counts differ");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].values.size() != grads[b].values.size()) {
      throw ShapeMismatch("gradient for " + params[b].name + " has the wrong size");
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.values.size(), 0.0);
      state.v.emplace_back(p.values.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeMismatch("optimizer state does not match parameters");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& p = params[b].values;
    const auto& g = grads[b].values;
    auto& m = state.m[b];
    auto& v = state.v[b];
    if (m.size() != p.size()) throw ShapeMismatch("optimizer moments for " + params[b].name + " have the wrong size");
    const double decay = params[b].name == kLogTauBlock ? 1.0 : 1.0 - lr * weight_decay;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] = p[i] * decay - lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (!(cfg.learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(cfg.weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (cfg.epochs < 1) fail("epochs must be at least 1");
  if (cfg.warmup_epochs < 0 || cfg.warmup_epochs >= cfg.epochs) fail("warmup_epochs must lie in [0, epochs)");
  if (cfg.batch_studies < 2) fail("batch_studies must be at least 2");
  if (!(cfg.lambda_icl >= 0.0) || !(cfg.lambda_tcl >= 0.0)) fail("loss weights must be non-negative");
  if (cfg.early_stop_patience < 0) fail("early_stop_patience must be non-negative");
  if (!(cfg.grad_clip >= 0.0)) fail("grad_clip must be non-negative");
  if (!(cfg.initial_tau >= Temperature::kMin && cfg.initial_tau <= Temperature::kMax)) {
    fail("initial_tau must lie in [1e-3, 10]");
  }
  if (cfg.image_dims.input_size != cfg.sampler.image.output_size) {
    fail("image input size and sampler output size differ");
  }
  if (cfg.image_dims.embed != cfg.text_dims.embed) fail("image and text embedding dims differ");
  try {
    validate(cfg.sampler.image);
  } catch (const std::exception& e) {
    fail(e.what());
  }
}

namespace {

nlohmann::ordered_json step_json(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["type"] = "step";
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["tau"] = r.tau;
  j["mvs"] = r.mvs;
  j["icl"] = r.icl;
  j["tcl"] = r.tcl;
  j["total"] = r.total;
  return j;
}

std::vector<std::vector<const Study*>> chunk(const std::vector<const Study*>& items, int batch) {
  std::vector<std::vector<const Study*>> out;
  const std::size_t n = items.size();
  if (n == 0) return out;
  const std::size_t count = (n + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch);
  std::size_t start = 0;
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t size = n / count + (c < n % count ? 1 : 0);
    out.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(start),
                     items.begin() + static_cast<std::ptrdiff_t>(start + size));
    start += size;
  }
  return out;
}

bool all_finite(const std::vector<ParamBlock>& blocks) {
  for (const auto& b : blocks) {
    for (double v : b.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

void clip_gradients(std::vector<ParamBlock>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& b : grads) {
    for (double v : b.values) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (auto& b : grads) {
    for (double& v : b.values) v *= scale;
  }
}

}  // namespace

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& r : steps) out += step_json(r).dump() + "\n";
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["type"] = "epoch";
    j["epoch"] = e.epoch;
    j["val_loss"] = e.val_loss;
    j["improved"] = e.improved;
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json j;
  j["type"] = "summary";
  j["best_epoch"] = best_epoch;
  j["best_val_loss"] = best_val_loss;
  j["stopped_early"] = stopped_early;
  out += j.dump() + "\n";
  return out;
}

model::Vocabulary build_vocabulary(const std::vector<Study>& train, const prompt::PromptGrammar& grammar) {
  std::vector<std::string> texts = grammar.literal_texts();
  for (const Study& s : train) {
    if (s.findings) texts.push_back(*s.findings);
    if (s.impression) texts.push_back(*s.impression);
  }
  return model::Vocabulary::build(texts);
}

std::vector<ParamBlock> all_params(const model::ClipModel& m) {
  std::vector<ParamBlock> out = m.image.params();
  out.insert(out.end(), m.text.params().begin(), m.text.params().end());
  out.push_back(ParamBlock{kLogTauBlock, {1}, {m.temperature.log_tau}});
  return out;
}

void set_params(model::ClipModel& m, std::vector<ParamBlock> params) {
  const std::size_t ni = m.image.params().size();
  const std::size_t nt = m.text.params().size();
  if (params.size() != ni + nt + 1) throw ShapeMismatch("parameter list does not match the model");
  for (std::size_t i = 0; i < ni; ++i) m.image.params()[i] = std::move(params[i]);
  for (std::size_t i = 0; i < nt; ++i) m.text.params()[i] = std::move(params[ni + i]);
  m.temperature.log_tau = params.back().values.at(0);
  m.temperature.clamp();
}

BatchResult batch_loss(const model::ClipModel& m, const sampler::Batch& batch, const TrainConfig& cfg,
                       bool with_grads) {
  const bool two_views = cfg.sampler.mode == sampler::SamplingMode::multiview;
  const model::EncodedBatch v1 = m.image.encode_batch(batch.x1);
  const model::EncodedBatch u1 = m.text.encode_batch(batch.t1);
  std::optional<model::EncodedBatch> v2_own;
  std::optional<model::EncodedBatch> u2_own;
  if (two_views) {
    v2_own = m.image.encode_batch(batch.x2);
    u2_own = m.text.encode_batch(batch.t2);
  }
  const model::EncodedBatch& v2 = two_views ? *v2_own : v1;
  const model::EncodedBatch& u2 = two_views ? *u2_own : u1;

  BatchResult out{total_loss(u1.embeddings, u2.embeddings, v1.embeddings, v2.embeddings, m.temperature,
                             LossWeights{cfg.lambda_icl, cfg.lambda_tcl}),
                  {}};
  if (!with_grads) return out;

  const auto& g = out.loss.combined.grad_inputs;
  std::vector<ParamBlock> gi = model::zeros_like(m.image.params());
  std::vector<ParamBlock> gt = model::zeros_like(m.text.params());
  m.text.backward(u1, g[0], gt);
  m.text.backward(u2, g[1], gt);
  m.image.backward(v1, g[2], gi);
  m.image.backward(v2, g[3], gi);
  out.grads = std::move(gi);
  out.grads.insert(out.grads.end(), std::make_move_iterator(gt.begin()), std::make_move_iterator(gt.end()));
  out.grads.push_back(ParamBlock{kLogTauBlock, {1}, {out.loss.combined.grad_log_tau}});
  return out;
}

double validation_loss(const model::ClipModel& m, const std::vector<Study>& valid,
                       const prompt::PromptGrammar& grammar, const TrainConfig& cfg) {
  std::vector<const Study*> ptrs;
  for (const Study& s : valid) ptrs.push_back(&s);
  const auto batches = chunk(ptrs, cfg.batch_studies);
  if (batches.empty()) throw DataError("validation set is empty");
  const std::uint64_t seed = derive_seed(cfg.seed, "valid");
  double sum = 0.0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const sampler::Batch batch = sampler::make_batch(batches[b], cfg.sampler, grammar, derive_seed(seed, b));
    sum += batch_loss(m, batch, cfg, false).loss.combined.value;
  }
  return sum / static_cast<double>(batches.size());
}

TrainResult train(const std::vector<Study>& train_set, const std::vector<Study>& valid_set,
                  const prompt::PromptGrammar& grammar, const TrainConfig& cfg, const StepCallback& on_step) {
  validate(cfg);
  if (train_set.size() < 2) throw DataError("training set needs at least two studies");
  if (valid_set.empty()) throw DataError("validation set is empty");

  model::ClipModel current = model::init_model(cfg.image_dims, cfg.text_dims, build_vocabulary(train_set, grammar),
                                               derive_seed(cfg.seed, "init"), cfg.initial_tau);
  std::vector<const Study*> order;
  for (const Study& s : train_set) order.push_back(&s);
  const std::int64_t per_epoch = static_cast<std::int64_t>(chunk(order, cfg.batch_studies).size());
  const std::int64_t total_steps = per_epoch * cfg.epochs;
  const std::int64_t warmup_steps = per_epoch * cfg.warmup_epochs;

  TrainLog log;
  model::ClipModel best = current;
  log.best_val_loss = validation_loss(current, valid_set, grammar, cfg);
  log.epochs.push_back(EpochRecord{0, log.best_val_loss, true});

  OptimState state;
  std::int64_t step = 0;
  int wait = 0;
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "shuffle");
  const std::uint64_t batch_seed = derive_seed(cfg.seed, "batch");
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (const auto& studies : chunk(order, cfg.batch_studies)) {
      ++step;
      const sampler::Batch batch =
          sampler::make_batch(studies, cfg.sampler, grammar, derive_seed(batch_seed, static_cast<std::uint64_t>(step)));
      std::vector<ParamBlock> params = all_params(current);
      BatchResult res;
      try {
        res = batch_loss(current, batch, cfg, true);
      } catch (const ZeroRow&) {
        throw NumericError(step);
      }
      if (!std::isfinite(res.loss.combined.value) || !all_finite(res.grads)) throw NumericError(step);
      if (cfg.grad_clip > 0.0) clip_gradients(res.grads, cfg.grad_clip);

      const double lr = lr_at(step, total_steps, warmup_steps, cfg.learning_rate);
      StepRecord rec{step,          epoch,          lr,           current.temperature.tau(), res.loss.mvs,
                     res.loss.icl, res.loss.tcl, res.loss.combined.value};
      optim_step(params, res.grads, state, lr, cfg.weight_decay);
      if (!all_finite(params)) throw NumericError(step);
      set_params(current, std::move(params));
      log.steps.push_back(rec);
      if (on_step) on_step(rec);
    }

    double val = 0.0;
    try {
      val = validation_loss(current, valid_set, grammar, cfg);
    } catch (const ZeroRow&) {
      throw NumericError(step);
    }
    if (!std::isfinite(val)) throw NumericError(step);
    const bool improved = val < log.best_val_loss;
    log.epochs.push_back(EpochRecord{epoch, val, improved});
    if (improved) {
      log.best_val_loss = val;
      log.best_epoch = epoch;
      best = current;
      wait = 0;
    } else if (++wait >= cfg.early_stop_patience) {
      log.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  return TrainResult{std::move(best), std::move(log)};
}

}  // namespace cxrclip::train
