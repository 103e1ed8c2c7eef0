#pragma once

// Prompt templates and the grammar that turns class labels into
// clinical-style sentences.
//
// Template syntax (one template per grammar line):
//   [a, b, c]   uniform choice between alternatives
//   x + y       concatenation joined by a single space
//   x y / x.    juxtaposition, spacing kept as written
//   ( )         blank alternative
//   {E}         class-expression slot
//
// Rendering collapses whitespace, trims, and removes spaces in front of
// punctuation. A class expression substituted mid-sentence is lowercased;
// at the start of a sentence it is kept as written.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "cxrclip/rng.hpp"

namespace cxrclip::prompt {

struct Template;

struct Literal {
  std::string text;
  friend bool operator==(const Literal&, const Literal&) = default;
};

struct Blank {
  friend bool operator==(const Blank&, const Blank&) = default;
};

struct ExprSlot {
  friend bool operator==(const ExprSlot&, const ExprSlot&) = default;
};

struct Choice {
  std::vector<Template> options;
};

struct Concat {
  std::vector<Template> parts;
  // spaced[i]: part i is preceded by whitespace or '+' (spaced[0] unused).
  std::vector<bool> spaced;
};

struct Template {
  std::variant<Literal, Blank, ExprSlot, Choice, Concat> node;
};

bool operator==(const Choice& a, const Choice& b);
bool operator==(const Concat& a, const Concat& b);
bool operator==(const Template& a, const Template& b);

Template parse_template(std::string_view source);

// Canonical form; parse_template(serialize(t)) == t for parsed templates.
std::string serialize(const Template& t);

bool has_slot(const Template& t);

// Number of raw expansion paths (saturates at UINT64_MAX).
std::uint64_t count_paths(const Template& t);

std::string expand_template(const Template& t, const Template* class_expr, Rng& rng);

// Every distinct rendering, sorted. Throws ExplosionError when more than
// `cap` distinct strings exist.
std::set<std::string> enumerate_expansions(const Template& t, const Template* class_expr,
                                           std::size_t cap);

// ---- labels -------------------------------------------------------------

enum class LabelValue { positive, negative, uncertain, none };

std::optional<LabelValue> parse_label_value(std::string_view text);
std::string_view to_string(LabelValue v);

using LabelRecord = std::map<std::string, LabelValue>;

// ---- grammar ------------------------------------------------------------

struct ClassEntry {
  std::optional<Template> positive;
  std::optional<Template> negative;
  bool negative_disabled = false;  // table cell "-"
  std::optional<Template> expression;
  std::optional<Template> negative_expression;
};

struct ResolvedPrompt {
  const Template* tmpl = nullptr;
  const Template* expression = nullptr;  // null when the template has no slot
};

class PromptGrammar {
 public:
  // Grammar file lines: `<section>:<class> = <template>` where section is
  // positive, negative, expr or expr.negative and class `default` holds the
  // fallback templates. A template of `-` marks a pair with no prompts.
  static PromptGrammar parse(std::string_view text);
  static PromptGrammar load(const std::filesystem::path& path);

  // Path override order: explicit path, CXRCLIP_GRAMMAR env var, built-in default.
  static std::filesystem::path resolve_path(const std::optional<std::filesystem::path>& explicit_path);

  const std::string& source() const { return source_; }
  const std::vector<std::string>& class_names() const { return class_order_; }
  bool knows_class(std::string_view name) const;

  // Throws UnsupportedValue for uncertain/none, NoTemplate when the pair has
  // no prompt set.
  ResolvedPrompt resolve(std::string_view class_name, LabelValue value) const;
  bool has_prompt_set(std::string_view class_name, LabelValue value) const;

  std::string render_prompt(std::string_view class_name, LabelValue value, Rng& rng) const;
  std::set<std::string> enumerate(std::string_view class_name, LabelValue value,
                                  std::size_t cap) const;

  // One prompt per included class, joined by single spaces in a seeded random
  // class order. With negative_sample_count set, all positives plus that many
  // uniformly drawn negatives are used.
  std::string build_study_text(const LabelRecord& labels, Rng& rng,
                               std::optional<std::size_t> negative_sample_count = std::nullopt) const;

  // Every literal word in the grammar; used to seed the text vocabulary.
  std::vector<std::string> literal_texts() const;

 private:
  std::string source_;
  std::optional<Template> default_positive_;
  std::optional<Template> default_negative_;
  std::map<std::string, ClassEntry, std::less<>> classes_;
  std::vector<std::string> class_order_;
};

enum class EvalPromptStyle { simple, rsna };

// Zero-shot evaluation prompts: (positive, negative).
std::pair<std::string, std::string> eval_prompt_pair(std::string_view class_name,
                                                     EvalPromptStyle style);

}  // namespace cxrclip::prompt
