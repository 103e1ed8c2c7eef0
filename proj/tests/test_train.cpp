#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cxrclip/errors.hpp"
#include "cxrclip/synth.hpp"
#include "cxrclip/train.hpp"

using namespace cxrclip;
using namespace cxrclip::train;
using model::ParamBlock;

namespace {

const prompt::PromptGrammar& grammar() {
  static const prompt::PromptGrammar g = prompt::PromptGrammar::load(CXRCLIP_SOURCE_DIR "/data/prompts.grammar");
  return g;
}

const synth::Dataset& toy() {
  static const synth::Dataset d = [] {
    synth::SynthSpec spec;
    spec.train_studies = 240;
    spec.valid_studies = 40;
    spec.test_per_class = 4;
    return synth::generate(spec, grammar(), 3);
  }();
  return d;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.learning_rate = 2e-3;
  cfg.epochs = 3;
  cfg.batch_studies = 32;
  cfg.image_dims = model::ImageEncoderDims{32, 8, 16, 16, 16};
  cfg.text_dims = model::TextEncoderDims{8, 16, 16, 16};
  cfg.sampler.image.output_size = 32;
  return cfg;
}

double cosine_oracle(double step, double total, double warmup, double base) {
  if (step <= warmup) return base * step / warmup;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * (step - warmup) / (total - warmup)));
}

}  // namespace

TEST_CASE("learning rate schedule") {
  const double base = 5e-5;
  const std::int64_t warmup = 250;
  const std::int64_t total = 15 * warmup;
  CHECK(lr_at(0, total, warmup, base) == 0.0);
  CHECK(lr_at(warmup, total, warmup, base) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(std::abs(lr_at(warmup + (total - warmup) / 2, total, warmup, base) - 2.5e-5) <= 1e-12);
  CHECK(lr_at(total, total, warmup, base) == doctest::Approx(0.0));
  for (std::int64_t s = 0; s <= total; ++s) {
    const double lr = lr_at(s, total, warmup, base);
    CHECK(lr >= 0.0);
    CHECK(std::abs(lr - cosine_oracle(static_cast<double>(s), total, warmup, base)) <= 1e-15);
  }
  // Both branches agree at the warmup boundary.
  CHECK(std::abs(base * warmup / static_cast<double>(warmup) - base * 0.5 * (1.0 + std::cos(0.0))) <= 1e-12);
  CHECK(std::abs(lr_at(warmup - 1, total, warmup, base) - lr_at(warmup, total, warmup, base)) <= base / warmup + 1e-18);
}

TEST_CASE("AdamW update") {
  SUBCASE("zero gradient and zero decay leaves parameters alone") {
    std::vector<ParamBlock> p{{"w", {3}, {0.5, -1.0, 2.0}}};
    const auto before = p;
    OptimState st;
    optim_step(p, model::zeros_like(p), st, 1e-2, 0.0);
    CHECK(p == before);
    CHECK(st.step == 1);
  }
  SUBCASE("first step from zero moments") {
    const double lr = 1e-3;
    const double wd = 0.1;
    std::vector<ParamBlock> p{{"w", {2}, {0.5, -0.25}}, {kLogTauBlock, {1}, {-2.0}}};
    std::vector<ParamBlock> g{{"w", {2}, {0.3, -4.0}}, {kLogTauBlock, {1}, {0.2}}};
    OptimState st;
    optim_step(p, g, st, lr, wd);
    // m_hat = g and v_hat = g^2 after one bias-corrected step.
    CHECK(p[0].values[0] == doctest::Approx(0.5 * (1 - lr * wd) - lr * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
    CHECK(p[0].values[1] == doctest::Approx(-0.25 * (1 - lr * wd) + lr * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
    CHECK(p[1].values[0] == doctest::Approx(-2.0 - lr * 0.2 / (0.2 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("decay alone shrinks by (1 - lr wd), except log tau") {
    std::vector<ParamBlock> p{{"w", {2}, {1.0, -3.0}}, {kLogTauBlock, {1}, {-2.5}}};
    OptimState st;
    optim_step(p, model::zeros_like(p), st, 0.01, 0.5);
    CHECK(p[0].values[0] == doctest::Approx(0.995).epsilon(1e-15));
    CHECK(p[0].values[1] == doctest::Approx(-3.0 * 0.995).epsilon(1e-15));
    CHECK(p[1].values[0] == -2.5);
  }
  SUBCASE("shape checks") {
    std::vector<ParamBlock> p{{"w", {2}, {1.0, 2.0}}};
    OptimState st;
    CHECK_THROWS_AS(optim_step(p, {{"w", {3}, {0, 0, 0}}}, st, 0.1, 0.0), ShapeMismatch);
    CHECK_THROWS_AS(optim_step(p, {}, st, 0.1, 0.0), ShapeMismatch);
  }
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.warmup_epochs = cfg.epochs;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.lambda_tcl = -1.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  CHECK(TrainConfig{}.learning_rate == 5e-5);
  CHECK(TrainConfig{}.epochs == 15);
  CHECK(TrainConfig{}.lambda_icl == 1.0);
  CHECK(TrainConfig{}.lambda_tcl == 0.5);
}

TEST_CASE("overfitting one batch removes most of the loss") {
  const TrainConfig cfg;
  model::ClipModel m = model::init_model(cfg.image_dims, cfg.text_dims, build_vocabulary(toy().train, grammar()), 1);
  std::vector<const Study*> ptrs;
  // Report-bearing studies, so no two texts in the batch coincide.
  for (std::size_t i = 0; i < 16; ++i) ptrs.push_back(&toy().test[i]);
  const sampler::Batch batch = sampler::make_batch(ptrs, cfg.sampler, grammar(), 5);

  OptimState st;
  const double initial = batch_loss(m, batch, cfg, false).loss.combined.value;
  for (int i = 0; i < 200; ++i) {
    auto res = batch_loss(m, batch, cfg, true);
    auto params = all_params(m);
    optim_step(params, res.grads, st, 1e-3, 0.0);
    set_params(m, std::move(params));
  }
  const double final_loss = batch_loss(m, batch, cfg, false).loss.combined.value;
  INFO("initial " << initial << " final " << final_loss);
  CHECK(final_loss <= 0.1 * initial);
}

TEST_CASE("training run") {
  const TrainConfig cfg = small_config();
  std::vector<StepRecord> seen;
  const TrainResult a = train::train(toy().train, toy().valid, grammar(), cfg, [&](const StepRecord& r) { seen.push_back(r); });

  CHECK(a.log.epochs.front().epoch == 0);
  CHECK(a.log.best_val_loss < a.log.epochs.front().val_loss);
  CHECK(seen.size() == a.log.steps.size());
  for (std::size_t i = 0; i < a.log.steps.size(); ++i) CHECK(a.log.steps[i].step == static_cast<std::int64_t>(i + 1));

  const auto best = std::min_element(a.log.epochs.begin(), a.log.epochs.end(),
                                     [](const EpochRecord& x, const EpochRecord& y) { return x.val_loss < y.val_loss; });
  CHECK(best->epoch == a.log.best_epoch);
  CHECK(validation_loss(a.model, toy().valid, grammar(), cfg) == a.log.best_val_loss);

  const TrainResult b = train::train(toy().train, toy().valid, grammar(), cfg);
  CHECK(all_params(a.model) == all_params(b.model));
  CHECK(a.log.to_jsonl() == b.log.to_jsonl());

  TrainConfig other = cfg;
  other.seed = 1;
  CHECK(all_params(train::train(toy().train, toy().valid, grammar(), other).model) != all_params(a.model));
}

TEST_CASE("early stopping") {
  // Validation reports are shifted by one study, so each image is paired
  // with another class's text and validation loss soon stops improving.
  std::vector<Study> shifted = toy().test;
  for (std::size_t i = 0; i < shifted.size(); ++i) {
    const Study& next = toy().test[(i + 1) % shifted.size()];
    shifted[i].findings = next.findings;
    shifted[i].impression = next.impression;
  }
  TrainConfig cfg = small_config();
  cfg.epochs = 6;
  cfg.lambda_icl = 0.0;
  cfg.lambda_tcl = 0.0;
  cfg.initial_tau = 1.0;
  cfg.learning_rate = 1e-2;
  for (int patience : {0, 1, 2, 3}) {
    cfg.early_stop_patience = patience;
    const TrainResult r = train::train(toy().train, shifted, grammar(), cfg);
    const auto& e = r.log.epochs;
    INFO("patience " << patience);
    int wait = 0;
    int stop_at = -1;
    for (std::size_t i = 1; i < e.size(); ++i) {
      wait = e[i].improved ? 0 : wait + 1;
      if (wait >= std::max(patience, 1)) {
        stop_at = e[i].epoch;
        break;
      }
    }
    CHECK(e.back().epoch == stop_at);
    CHECK(r.log.stopped_early);
    if (patience <= 1) CHECK_FALSE(e.back().improved);
    for (std::size_t i = 1; i + 1 < e.size() && patience <= 1; ++i) CHECK(e[i].improved);
    const auto best = std::min_element(e.begin(), e.end(),
                                       [](const EpochRecord& x, const EpochRecord& y) { return x.val_loss < y.val_loss; });
    CHECK(r.log.best_epoch == best->epoch);
  }
}

TEST_CASE("non-finite training raises NumericError") {
  TrainConfig cfg = small_config();
  cfg.learning_rate = 1e300;
  try {
    train::train(toy().train, toy().valid, grammar(), cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.step() >= 1);
  }
}

TEST_CASE("single view modes reuse the first encodings") {
  TrainConfig cfg = small_config();
  cfg.sampler.mode = sampler::SamplingMode::naive;
  model::ClipModel m = model::init_model(cfg.image_dims, cfg.text_dims, build_vocabulary(toy().train, grammar()), 2);
  std::vector<const Study*> ptrs{&toy().train[0], &toy().train[1], &toy().train[2]};
  const auto batch = sampler::make_batch(ptrs, cfg.sampler, grammar(), 0);
  const auto res = batch_loss(m, batch, cfg, true);
  CHECK(std::abs(res.loss.mvs - res.loss.icl) > 0.0);
  REQUIRE(res.grads.size() == all_params(m).size());
  CHECK(res.grads.back().name == kLogTauBlock);
}

TEST_CASE("train log lines") {
  TrainLog log;
  log.steps.push_back(StepRecord{1, 1, 1e-3, 0.07, 2.0, 1.0, 0.5, 3.25});
  log.epochs.push_back(EpochRecord{0, 4.0, true});
  const std::string text = log.to_jsonl();
  CHECK(std::count(text.begin(), text.end(), '\n') >= 2);
  CHECK(text.find("\"type\":\"step\"") != std::string::npos);
  CHECK(text.find("\"type\":\"epoch\"") != std::string::npos);
}
