#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "cxrclip/errors.hpp"
#include "cxrclip/prompt.hpp"

using namespace cxrclip;
using namespace cxrclip::prompt;

namespace {

const PromptGrammar& grammar() {
  static const PromptGrammar g = PromptGrammar::load(CXRCLIP_SOURCE_DIR "/data/prompts.grammar");
  return g;
}

const std::vector<std::string> kExpressionClasses = {
    "Atelectasis",  "Consolidation",   "Edema",        "Emphysema",        "Fibrosis",      "Fracture",
    "Hernia",       "Infiltration",    "Lung Lesion",  "Lung Opacity",     "Mass",          "Nodule",
    "Pleural Effusion", "Pleural Other", "Pleural Thickening", "Pneumonia", "Pneumothorax", "Support Devices"};

const std::vector<std::string> kTemplateClasses = {"Cardiomegaly", "Enlarged Cardiomediastinum", "No Finding"};

std::size_t count_periods(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '.')); }

}  // namespace

TEST_CASE("parse_template builds the expected trees") {
  const Template choice = parse_template("[A, B]");
  const auto* c = std::get_if<Choice>(&choice.node);
  REQUIRE(c != nullptr);
  REQUIRE(c->options.size() == 2);
  CHECK(std::get<Literal>(c->options[0].node).text == "A");
  CHECK(std::get<Literal>(c->options[1].node).text == "B");

  const Template cat = parse_template("X + [Y, ( )]");
  const auto* k = std::get_if<Concat>(&cat.node);
  REQUIRE(k != nullptr);
  REQUIRE(k->parts.size() == 2);
  CHECK(std::get<Literal>(k->parts[0].node).text == "X");
  const auto& inner = std::get<Choice>(k->parts[1].node);
  REQUIRE(inner.options.size() == 2);
  CHECK(std::get<Literal>(inner.options[0].node).text == "Y");
  CHECK(std::holds_alternative<Blank>(inner.options[1].node));

  CHECK(has_slot(parse_template("There is {E}.")));
  CHECK_FALSE(has_slot(parse_template("[a, b]")));
}

TEST_CASE("serialize round-trips") {
  for (const char* src : {"[A, B]", "X + [Y, ( )]", "[{E}., There is {E}.]", "[[a, b] c, d] + e.",
                          "no [convincing, definite, ( )] evidence of {E}."}) {
    const Template t = parse_template(src);
    CHECK(parse_template(serialize(t)) == t);
  }
}

TEST_CASE("malformed templates report a position") {
  for (const char* src : {"[A, B", "A + ", "[]", "A]", "{F}"}) {
    INFO(src);
    CHECK_THROWS_AS(parse_template(src), SyntaxError);
  }
  try {
    parse_template("[A, B");
  } catch (const SyntaxError& e) {
    CHECK(e.position() <= 5);
  }
}

TEST_CASE("enumeration counts") {
  const Template t = parse_template("[a, b] + [x, y, z]");
  CHECK(enumerate_expansions(t, nullptr, 100).size() == 6);
  CHECK(count_paths(t) == 6);
  CHECK_THROWS_AS(enumerate_expansions(t, nullptr, 5), ExplosionError);
  CHECK(grammar().enumerate("Cardiomegaly", LabelValue::positive, 1000).size() == 20);
}

TEST_CASE("slot resolution") {
  const Template t = parse_template("There is {E}.");
  Rng rng(1);
  CHECK_THROWS_AS(expand_template(t, nullptr, rng), UnresolvedSlot);
  const Template e = parse_template("[Edema]");
  CHECK(expand_template(t, &e, rng) == "There is edema.");
  CHECK(expand_template(parse_template("{E} is seen."), &e, rng) == "Edema is seen.");
}

TEST_CASE("table sentences appear among expansions") {
  const auto& g = grammar();
  CHECK(g.enumerate("Cardiomegaly", LabelValue::positive, 1000).count("heart size is enlarged."));
  CHECK(g.enumerate("No Finding", LabelValue::positive, 1000).count("the lungs are clear."));
  CHECK(g.enumerate("Pneumothorax", LabelValue::negative, 1000).count("No pneumothorax is noted."));
  CHECK(g.enumerate("Pneumothorax", LabelValue::negative, 1000).count("There is no pneumothorax."));
  CHECK(g.enumerate("Edema", LabelValue::positive, 1000).count("Findings are suggestive of pulmonary edema."));
  const auto lesion_neg = g.enumerate("Lung Lesion", LabelValue::negative, 10000);
  CHECK(lesion_neg.count("No pulmonary nodule is visible."));
  for (const auto& s : lesion_neg) CHECK(s.find("lesion.") == std::string::npos);
}

TEST_CASE("every class renders and sampled prompts are enumerated") {
  const auto& g = grammar();
  std::vector<std::string> all = kExpressionClasses;
  all.insert(all.end(), kTemplateClasses.begin(), kTemplateClasses.end());
  Rng rng(42);
  for (const auto& cls : all) {
    for (LabelValue v : {LabelValue::positive, LabelValue::negative}) {
      INFO(cls << " " << to_string(v));
      if (cls == "No Finding" && v == LabelValue::negative) {
        CHECK_THROWS_AS(g.render_prompt(cls, v, rng), NoTemplate);
        continue;
      }
      const auto set = g.enumerate(cls, v, 100000);
      REQUIRE_FALSE(set.empty());
      bool all_members = true;
      for (int i = 0; i < 1000; ++i) all_members = all_members && set.count(g.render_prompt(cls, v, rng)) == 1;
      CHECK(all_members);
    }
  }
}

TEST_CASE("uncertain and none have no prompts") {
  Rng rng(0);
  CHECK_THROWS_AS(grammar().render_prompt("Edema", LabelValue::uncertain, rng), UnsupportedValue);
  CHECK_THROWS_AS(grammar().render_prompt("Edema", LabelValue::none, rng), UnsupportedValue);
}

TEST_CASE("sampling is deterministic and uniform") {
  const Template t = parse_template("[a, b, c, d, e]");
  Rng a(5);
  Rng b(5);
  for (int i = 0; i < 100; ++i) CHECK(expand_template(t, nullptr, a) == expand_template(t, nullptr, b));

  Rng rng(17);
  std::map<std::string, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[expand_template(t, nullptr, rng)];
  REQUIRE(counts.size() == 5);
  const double p = 0.2;
  const double sd = std::sqrt(n * p * (1 - p));
  for (const auto& [k, c] : counts) CHECK(std::abs(c - n * p) <= 3 * sd);
}

TEST_CASE("whitespace and punctuation are normalized") {
  Rng rng(0);
  const Template t = parse_template("[There is, ( )] + no {E}.");
  const Template e = parse_template("[Pneumothorax]");
  for (int i = 0; i < 20; ++i) {
    const std::string s = expand_template(t, &e, rng);
    CHECK((s == "There is no pneumothorax." || s == "no pneumothorax."));
  }
  const Template gap = parse_template("no [convincing, ( )] evidence of {E}.");
  for (const auto& s : enumerate_expansions(gap, &e, 10)) {
    CHECK(s.find("  ") == std::string::npos);
    CHECK(s.find(" .") == std::string::npos);
  }
}

TEST_CASE("build_study_text") {
  const auto& g = grammar();
  Rng rng(3);
  const std::string one = g.build_study_text({{"Cardiomegaly", LabelValue::positive}}, rng);
  CHECK(g.enumerate("Cardiomegaly", LabelValue::positive, 100).count(one));

  LabelRecord many{{"Pneumonia", LabelValue::positive}};
  for (const auto& c : kExpressionClasses) {
    if (c != "Pneumonia") many[c] = LabelValue::negative;
  }
  for (int i = 0; i < 50; ++i) CHECK(count_periods(g.build_study_text(many, rng, 3)) == 4);
  CHECK(count_periods(g.build_study_text(many, rng)) == kExpressionClasses.size());

  LabelRecord two{{"Edema", LabelValue::positive}, {"Atelectasis", LabelValue::negative}};
  CHECK(count_periods(g.build_study_text(two, rng, 5)) == 2);

  CHECK_THROWS_AS(g.build_study_text({{"Edema", LabelValue::uncertain}, {"Fracture", LabelValue::none}}, rng),
                  EmptyLabelSet);

  Rng a(8);
  Rng b(8);
  CHECK(g.build_study_text(many, a, 3) == g.build_study_text(many, b, 3));
}

TEST_CASE("eval_prompt_pair") {
  CHECK(eval_prompt_pair("Pneumothorax", EvalPromptStyle::simple) ==
        std::pair<std::string, std::string>{"Pneumothorax", "No Pneumothorax"});
  CHECK(eval_prompt_pair("X", EvalPromptStyle::simple) == std::pair<std::string, std::string>{"X", "No X"});
  CHECK(eval_prompt_pair("anything", EvalPromptStyle::rsna) ==
        std::pair<std::string, std::string>{"Findings suggesting pneumonia.", "No evidence of pneumonia."});
}

TEST_CASE("label values parse") {
  CHECK(parse_label_value("positive") == LabelValue::positive);
  CHECK(parse_label_value("negative") == LabelValue::negative);
  CHECK(parse_label_value("uncertain") == LabelValue::uncertain);
  CHECK(parse_label_value("none") == LabelValue::none);
  CHECK_FALSE(parse_label_value("maybe").has_value());
}

TEST_CASE("grammar file errors") {
  CHECK_THROWS(PromptGrammar::parse("positive:default = [a, b"));
  CHECK_THROWS(PromptGrammar::parse("bogus line"));
  const PromptGrammar g = PromptGrammar::parse(
      "positive:default = There is {E}.\nnegative:default = No {E}.\nexpr:Thing = [Thing]\n");
  Rng rng(0);
  CHECK(g.render_prompt("Thing", LabelValue::positive, rng) == "There is thing.");
  CHECK(g.render_prompt("Thing", LabelValue::negative, rng) == "No thing.");
  CHECK(g.knows_class("Thing"));
  CHECK_FALSE(g.knows_class("Other"));
}
