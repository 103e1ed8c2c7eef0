#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "cxrclip/ablation.hpp"
#include "cxrclip/errors.hpp"
#include "cxrclip/eval.hpp"
#include "cxrclip/synth.hpp"
#include "support.hpp"

using namespace cxrclip;
using namespace cxrclip::eval;

namespace {

const prompt::PromptGrammar& grammar() {
  static const prompt::PromptGrammar g = prompt::PromptGrammar::load(CXRCLIP_SOURCE_DIR "/data/prompts.grammar");
  return g;
}

// Coarse values so that ties are common.
Matrix coarse(Rng& rng, std::size_t n, std::size_t d) {
  Matrix m(n, d);
  for (double& x : m.data) x = static_cast<double>(rng.uniform_index(3));
  return m;
}

}  // namespace

TEST_CASE("recall matches a full sort") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 10 + rng.uniform_index(91);
    const bool ties = trial % 2 == 1;
    const Matrix img = ties ? coarse(rng, n, 4) : testing::unit_rows(testing::random_matrix(rng, n, 8));
    const Matrix txt = ties ? coarse(rng, n, 4) : testing::unit_rows(testing::random_matrix(rng, n, 8));
    const auto got = recall_at_k(img, txt);
    const auto want = testing::sorted_recall(img, txt, {1, 5, 10});
    CHECK(got.recalls == want);
    CHECK(got.rsum == doctest::Approx(100.0 * (want[0] + want[1] + want[2])).epsilon(1e-12));
    CHECK(got.recalls[0] <= got.recalls[1]);
    CHECK(got.recalls[1] <= got.recalls[2]);
    CHECK(recall_at_k(img, txt, {n}).recalls[0] == 1.0);
  }
}

TEST_CASE("recall worked values") {
  Matrix eye(5, 5);
  for (std::size_t i = 0; i < 5; ++i) eye(i, i) = 1.0;
  const auto r = recall_at_k(eye, eye, {1, 5});
  CHECK(r.recall(1) == 1.0);
  CHECK(r.recall(5) == 1.0);
  CHECK_THROWS(r.recall(3));

  // Every score ties, so each query's rank is its own index.
  const Matrix flat(4, 2, 1.0);
  const auto t = recall_at_k(flat, flat, {1, 2});
  CHECK(t.ranks == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(t.recall(1) == 0.25);
  CHECK(t.recall(2) == 0.5);

  CHECK(rsum(0.094, 0.230, 0.326) == doctest::Approx(65.0).epsilon(1e-12));
  CHECK_THROWS_AS(recall_at_k(eye, Matrix(4, 5)), ShapeMismatch);
  CHECK_THROWS_AS(recall_at_k(eye, eye, {6}), ShapeMismatch);
}

TEST_CASE("AUC") {
  CHECK(auc({0.9, 0.8}, {0.7, 0.85}) == 0.75);
  CHECK(auc({2, 3, 4}, {0, 1}) == 1.0);
  CHECK(auc({1, 1, 1}, {1, 1}) == 0.5);
  CHECK(auc({0.0}, {1.0}) == 0.0);
  CHECK_THROWS_AS(auc({}, {1.0}), DegenerateLabels);
  CHECK_THROWS_AS(auc({1.0}, {}), DegenerateLabels);

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> pos(1 + rng.uniform_index(40));
    std::vector<double> neg(1 + rng.uniform_index(40));
    for (double& x : pos) x = static_cast<double>(rng.uniform_index(6)) + (trial % 2 ? rng.uniform() : 0.0);
    for (double& x : neg) x = static_cast<double>(rng.uniform_index(6)) + (trial % 2 ? rng.uniform() : 0.0);
    const double a = auc(pos, neg);
    CHECK(a == testing::pairwise_auc(pos, neg));
    auto warp = [](std::vector<double> v) {
      for (double& x : v) x = std::exp(0.5 * x) * 3.0 - 7.0;
      return v;
    };
    CHECK(auc(warp(pos), warp(neg)) == a);
  }
}

TEST_CASE("zero-shot binary scores") {
  Matrix img(3, 2);
  img(0, 0) = 1.0;
  img(1, 1) = 1.0;
  img(2, 0) = img(2, 1) = std::sqrt(0.5);
  const std::vector<double> pos{1.0, 0.0};
  const std::vector<double> neg{0.0, 1.0};
  const auto r = zero_shot_binary(img, pos, neg, {true, false, true});
  CHECK(r.scores[0] == doctest::Approx(1.0));
  CHECK(r.scores[1] == doctest::Approx(-1.0));
  CHECK(r.scores[2] == doctest::Approx(0.0));
  CHECK(r.auc == 1.0);
  CHECK_THROWS_AS(zero_shot_binary(img, pos, neg, {true, true, true}), DegenerateLabels);
}

TEST_CASE("zero-shot multiclass") {
  Rng rng(9);
  const Matrix prompts = testing::unit_rows(testing::random_matrix(rng, 5, 16));
  SUBCASE("images equal to their prompts") {
    Matrix img(10, 16);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 10; ++i) {
      labels.push_back(i % 5);
      for (std::size_t k = 0; k < 16; ++k) img(i, k) = prompts(i % 5, k);
    }
    const auto r = zero_shot_multiclass(img, prompts, labels);
    CHECK(r.accuracy == 1.0);
    std::size_t trace = 0;
    for (std::size_t c = 0; c < 5; ++c) trace += r.confusion[c][c];
    CHECK(trace == 10);
  }
  SUBCASE("chance level on random data") {
    const std::size_t n = 20000;
    const Matrix img = testing::random_matrix(rng, n, 16);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.uniform_index(5);
    const auto r = zero_shot_multiclass(img, prompts, labels);
    CHECK(std::abs(r.accuracy - 0.2) <= 3.0 * std::sqrt(0.2 * 0.8 / n));

    Matrix scaled = img;
    for (double& x : scaled.data) x *= 3.7;
    CHECK(zero_shot_multiclass(scaled, prompts, labels).predictions == r.predictions);

    std::size_t total = 0;
    std::size_t trace = 0;
    for (std::size_t a = 0; a < 5; ++a) {
      trace += r.confusion[a][a];
      for (std::size_t b = 0; b < 5; ++b) total += r.confusion[a][b];
    }
    CHECK(total == n);
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(trace) / n));
  }
  SUBCASE("ties go to the lowest class") {
    const Matrix img(1, 16, 0.0);
    CHECK(zero_shot_multiclass(img, prompts, {3}).predictions[0] == 0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(zero_shot_multiclass(Matrix(2, 16), prompts, {0}), ShapeMismatch);
    CHECK_THROWS_AS(zero_shot_multiclass(Matrix(1, 16), prompts, {5}), ShapeMismatch);
    CHECK_THROWS_AS(zero_shot_multiclass(Matrix(1, 8), prompts, {0}), ShapeMismatch);
  }
}

TEST_CASE("metric document") {
  const std::string doc = metrics_jsonl({{"retrieval", "test", "r1", 0.5, 3, "abc"}, {"retrieval", "test", "r5", 1.0, 3, "abc"}});
  std::istringstream in(doc);
  std::string line;
  int count = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("task") == "retrieval");
    CHECK(j.at("split") == "test");
    CHECK(j.at("seed") == 3);
    CHECK(j.at("config_hash") == "abc");
    CHECK(j.contains("metric"));
    CHECK(j.contains("value"));
    ++count;
  }
  CHECK(count == 2);
}

TEST_CASE("class prompts, labels and ablation rows") {
  synth::SynthSpec spec;
  spec.train_studies = 120;
  spec.valid_studies = 20;
  spec.test_per_class = 4;
  const synth::Dataset d = synth::generate(spec, grammar(), 8);

  train::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 2e-3;
  cfg.image_dims = model::ImageEncoderDims{32, 4, 8, 8, 8};
  cfg.text_dims = model::TextEncoderDims{4, 8, 8, 8};

  const auto labels = single_labels(d.test, d.classes);
  for (std::size_t i = 0; i < labels.size(); ++i) CHECK(labels[i] == i % 5);
  std::vector<Study> bad{d.test[0]};
  bad[0].labels->emplace(d.classes[1], prompt::LabelValue::positive);
  CHECK_THROWS_AS(single_labels(bad, d.classes), DataError);

  const auto m = model::init_model(cfg.image_dims, cfg.text_dims, train::build_vocabulary(d.train, grammar()), 1);
  const Matrix p1 = class_prompt_embeddings(m, grammar(), d.classes, 3, 11);
  CHECK(p1 == class_prompt_embeddings(m, grammar(), d.classes, 3, 11));
  for (std::size_t c = 0; c < p1.rows; ++c) CHECK(std::sqrt(dot(p1.row(c), p1.row(c))) == doctest::Approx(1.0));

  const auto variants = default_variants();
  REQUIRE(variants.size() == 6);
  CHECK(variants[0].mode == sampler::SamplingMode::naive);
  CHECK(variants[3].mode == sampler::SamplingMode::multiview);
  CHECK(variants[3].lambda_icl == 0.0);
  CHECK(variants[3].lambda_tcl == 0.0);
  CHECK(variants[5].lambda_icl == 1.0);
  CHECK(variants[5].lambda_tcl == 0.5);

  AblationVariant zeroed = variants[5];
  zeroed.name = "zeroed";
  zeroed.lambda_icl = 0.0;
  zeroed.lambda_tcl = 0.0;
  const auto rows = ablation_report(d.train, d.valid, d.test, grammar(), cfg, {variants[3], zeroed}, d.classes, 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].acc == rows[1].acc);
  CHECK(rows[0].r1 == rows[1].r1);
  CHECK(rows[0].rsum == rows[1].rsum);
  CHECK(rows[0].rsum == doctest::Approx(100.0 * (rows[0].r1 + rows[0].r5 + rows[0].r10)));

  const std::string csv = ablation_csv(rows);
  CHECK(csv.rfind("variant,acc,r1,r5,r10,rsum\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv == ablation_csv(ablation_report(d.train, d.valid, d.test, grammar(), cfg, {variants[3], zeroed},
                                            d.classes, 1)));
}
