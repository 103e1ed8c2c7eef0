#include "cxrclip/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "cxrclip/errors.hpp"

#ifndef CXRCLIP_DEFAULT_GRAMMAR
#define CXRCLIP_DEFAULT_GRAMMAR "data/prompts.grammar"
#endif

namespace cxrclip::prompt {

bool operator==(const Choice& a, const Choice& b) { return a.options == b.options; }
bool operator==(const Concat& a, const Concat& b) {
  if (a.parts != b.parts || a.spaced.size() != b.spaced.size()) return false;
  // spaced[0] carries no meaning
  for (std::size_t i = 1; i < a.spaced.size(); ++i) {
    if (a.spaced[i] != b.spaced[i]) return false;
  }
  return true;
}
bool operator==(const Template& a, const Template& b) { return a.node == b.node; }

namespace {

// ---- parser -------------------------------------------------------------

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  Template parse_all() {
    Template t = parse_sequence(false);
    if (pos_ != src_.size()) fail("unexpected character");
    return t;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw SyntaxError(pos_, what); }

  bool at_end() const { return pos_ >= src_.size(); }

  std::size_t skip_ws() {
    std::size_t start = pos_;
    while (!at_end() && is_space(src_[pos_])) ++pos_;
    return pos_ - start;
  }

  static bool is_special(char c, bool nested) {
    switch (c) {
      case '[':
      case ']':
      case '{':
      case '}':
      case '(':
      case ')':
      case '+':
        return true;
      case ',':
        return nested;
      default:
        return false;
    }
  }

  Template parse_sequence(bool nested) {
    std::vector<Template> parts;
    std::vector<bool> spaced;
    bool pending_space = false;
    bool after_plus = false;
    while (true) {
      if (skip_ws() > 0) pending_space = true;
      if (at_end()) break;
      const char c = src_[pos_];
      if (nested && (c == ',' || c == ']')) break;
      if (c == '+') {
        if (parts.empty()) fail("'+' has no left operand");
        if (after_plus) fail("repeated '+'");
        ++pos_;
        pending_space = true;
        after_plus = true;
        continue;
      }
      bool trailing_space = false;
      Template item;
      if (c == '[') {
        item = parse_choice();
      } else if (c == '{') {
        if (src_.substr(pos_, 3) != "{E}") fail("only {E} slots are supported");
        pos_ += 3;
        item.node = ExprSlot{};
      } else if (c == '(') {
        ++pos_;
        skip_ws();
        if (at_end() || src_[pos_] != ')') fail("expected ')' closing a blank");
        ++pos_;
        item.node = Blank{};
      } else if (c == ']' || c == ')' || c == '}' || c == ',') {
        fail(std::string("unexpected '") + c + "'");
      } else {
        const std::size_t start = pos_;
        while (!at_end() && !is_special(src_[pos_], nested)) ++pos_;
        std::string_view text = src_.substr(start, pos_ - start);
        std::size_t keep = text.size();
        while (keep > 0 && is_space(text[keep - 1])) --keep;
        trailing_space = keep < text.size();
        item.node = Literal{std::string(text.substr(0, keep))};
      }
      parts.push_back(std::move(item));
      spaced.push_back(pending_space);
      pending_space = trailing_space;
      after_plus = false;
    }
    if (after_plus) fail("'+' has no right operand");
    if (parts.empty()) fail(nested ? "empty choice option" : "empty template");
    if (parts.size() == 1) return std::move(parts.front());
    spaced.front() = false;
    Template t;
    t.node = Concat{std::move(parts), std::move(spaced)};
    return t;
  }

  Template parse_choice() {
    ++pos_;  // '['
    Choice choice;
    while (true) {
      choice.options.push_back(parse_sequence(true));
      skip_ws();
      if (at_end()) fail("unterminated '['");
      if (src_[pos_] == ',') {
        ++pos_;
        continue;
      }
      ++pos_;  // ']'
      break;
    }
    Template t;
    t.node = std::move(choice);
    return t;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

// ---- rendering ----------------------------------------------------------

struct Piece {
  std::string text;
  bool slot = false;
  friend auto operator<=>(const Piece&, const Piece&) = default;
};
using Pieces = std::vector<Piece>;

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool is_punct_follower(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?';
}

std::string normalize_spacing(std::string_view s) {
  std::string collapsed;
  bool in_space = false;
  for (char c : s) {
    if (is_space(c)) {
      in_space = true;
      continue;
    }
    if (in_space && !collapsed.empty() && !is_punct_follower(c)) collapsed.push_back(' ');
    in_space = false;
    collapsed.push_back(c);
  }
  return collapsed;
}

bool blank_so_far(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return is_space(c); });
}

std::string finalize(const Pieces& pieces) {
  std::string s;
  for (const Piece& p : pieces) {
    if (p.slot && !blank_so_far(s)) {
      s += lowercase(p.text);
    } else {
      s += p.text;
    }
  }
  return normalize_spacing(s);
}

void expand_into(const Template& t, const Template* expr, Rng& rng, Pieces& out);

std::string expand_expression(const Template* expr, Rng& rng) {
  if (expr == nullptr) throw UnresolvedSlot("template has {E} but no class expression was given");
  if (has_slot(*expr)) throw UnresolvedSlot("class expression may not contain {E}");
  Pieces pieces;
  expand_into(*expr, nullptr, rng, pieces);
  return finalize(pieces);
}

void expand_into(const Template& t, const Template* expr, Rng& rng, Pieces& out) {
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Literal>) {
          out.push_back({node.text, false});
        } else if constexpr (std::is_same_v<T, Blank>) {
        } else if constexpr (std::is_same_v<T, ExprSlot>) {
          out.push_back({expand_expression(expr, rng), true});
        } else if constexpr (std::is_same_v<T, Choice>) {
          expand_into(node.options[rng.uniform_index(node.options.size())], expr, rng, out);
        } else {
          for (std::size_t i = 0; i < node.parts.size(); ++i) {
            if (i > 0 && node.spaced[i]) out.push_back({" ", false});
            expand_into(node.parts[i], expr, rng, out);
          }
        }
      },
      t.node);
}

std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    return std::numeric_limits<std::uint64_t>::max();
  }
  return a * b;
}

std::uint64_t sat_add(std::uint64_t a, std::uint64_t b) {
  return b > std::numeric_limits<std::uint64_t>::max() - a ? std::numeric_limits<std::uint64_t>::max()
                                                           : a + b;
}

// Distinct piece sequences for a node. `limit` bounds intermediate sizes.
std::set<Pieces> enumerate_node(const Template& t, const std::vector<std::string>& expr_options,
                                std::size_t limit) {
  auto check = [&](std::size_t size) {
    if (size > limit) throw ExplosionError("expansion exceeds cap");
  };
  return std::visit(
      [&](const auto& node) -> std::set<Pieces> {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Literal>) {
          return {Pieces{{node.text, false}}};
        } else if constexpr (std::is_same_v<T, Blank>) {
          return {Pieces{}};
        } else if constexpr (std::is_same_v<T, ExprSlot>) {
          std::set<Pieces> out;
          for (const auto& e : expr_options) out.insert(Pieces{{e, true}});
          return out;
        } else if constexpr (std::is_same_v<T, Choice>) {
          std::set<Pieces> out;
          for (const auto& opt : node.options) {
            auto sub = enumerate_node(opt, expr_options, limit);
            out.insert(sub.begin(), sub.end());
            check(out.size());
          }
          return out;
        } else {
          std::set<Pieces> acc{Pieces{}};
          for (std::size_t i = 0; i < node.parts.size(); ++i) {
            auto sub = enumerate_node(node.parts[i], expr_options, limit);
            check(sat_mul(acc.size(), sub.size()));
            std::set<Pieces> next;
            for (const auto& prefix : acc) {
              for (const auto& tail : sub) {
                Pieces joined = prefix;
                if (i > 0 && node.spaced[i]) joined.push_back({" ", false});
                joined.insert(joined.end(), tail.begin(), tail.end());
                next.insert(std::move(joined));
              }
            }
            acc = std::move(next);
          }
          return acc;
        }
      },
      t.node);
}

void collect_literals(const Template& t, std::vector<std::string>& out) {
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Literal>) {
          out.push_back(node.text);
        } else if constexpr (std::is_same_v<T, Choice>) {
          for (const auto& o : node.options) collect_literals(o, out);
        } else if constexpr (std::is_same_v<T, Concat>) {
          for (const auto& p : node.parts) collect_literals(p, out);
        }
      },
      t.node);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace

Template parse_template(std::string_view source) { return Parser(source).parse_all(); }

std::string serialize(const Template& t) {
  return std::visit(
      [](const auto& node) -> std::string {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Literal>) {
          return node.text;
        } else if constexpr (std::is_same_v<T, Blank>) {
          return "( )";
        } else if constexpr (std::is_same_v<T, ExprSlot>) {
          return "{E}";
        } else if constexpr (std::is_same_v<T, Choice>) {
          std::string s = "[";
          for (std::size_t i = 0; i < node.options.size(); ++i) {
            if (i > 0) s += ", ";
            s += serialize(node.options[i]);
          }
          return s + "]";
        } else {
          std::string s;
          for (std::size_t i = 0; i < node.parts.size(); ++i) {
            if (i > 0 && node.spaced[i]) s += " + ";
            s += serialize(node.parts[i]);
          }
          return s;
        }
      },
      t.node);
}

bool has_slot(const Template& t) {
  return std::visit(
      [](const auto& node) -> bool {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, ExprSlot>) {
          return true;
        } else if constexpr (std::is_same_v<T, Choice>) {
          return std::any_of(node.options.begin(), node.options.end(),
                             [](const Template& o) { return has_slot(o); });
        } else if constexpr (std::is_same_v<T, Concat>) {
          return std::any_of(node.parts.begin(), node.parts.end(),
                             [](const Template& p) { return has_slot(p); });
        } else {
          return false;
        }
      },
      t.node);
}

std::uint64_t count_paths(const Template& t) {
  return std::visit(
      [](const auto& node) -> std::uint64_t {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Choice>) {
          std::uint64_t n = 0;
          for (const auto& o : node.options) n = sat_add(n, count_paths(o));
          return n;
        } else if constexpr (std::is_same_v<T, Concat>) {
          std::uint64_t n = 1;
          for (const auto& p : node.parts) n = sat_mul(n, count_paths(p));
          return n;
        } else {
          return 1;
        }
      },
      t.node);
}

std::string expand_template(const Template& t, const Template* class_expr, Rng& rng) {
  if (has_slot(t) && class_expr == nullptr) {
    throw UnresolvedSlot("template has {E} but no class expression was given");
  }
  Pieces pieces;
  expand_into(t, class_expr, rng, pieces);
  return finalize(pieces);
}

std::set<std::string> enumerate_expansions(const Template& t, const Template* class_expr,
                                           std::size_t cap) {
  if (cap < 1) throw std::invalid_argument("enumeration cap must be >= 1");
  // Intermediate piece sequences can collapse to the same string, so they
  // get extra headroom; the cap itself applies to distinct strings.
  const std::size_t limit = cap > std::numeric_limits<std::size_t>::max() / 16 ? cap : cap * 16;
  std::vector<std::string> expr_options;
  if (has_slot(t)) {
    if (class_expr == nullptr) throw UnresolvedSlot("template has {E} but no class expression was given");
    if (has_slot(*class_expr)) throw UnresolvedSlot("class expression may not contain {E}");
    for (const auto& e : enumerate_node(*class_expr, {}, limit)) expr_options.push_back(finalize(e));
  }
  std::set<std::string> out;
  for (const auto& pieces : enumerate_node(t, expr_options, limit)) {
    out.insert(finalize(pieces));
    if (out.size() > cap) throw ExplosionError("expansion set exceeds cap " + std::to_string(cap));
  }
  return out;
}

std::optional<LabelValue> parse_label_value(std::string_view text) {
  if (text == "positive") return LabelValue::positive;
  if (text == "negative") return LabelValue::negative;
  if (text == "uncertain") return LabelValue::uncertain;
  if (text == "none") return LabelValue::none;
  return std::nullopt;
}

std::string_view to_string(LabelValue v) {
  switch (v) {
    case LabelValue::positive:
      return "positive";
    case LabelValue::negative:
      return "negative";
    case LabelValue::uncertain:
      return "uncertain";
    case LabelValue::none:
      return "none";
  }
  return "none";
}

// ---- grammar ------------------------------------------------------------

PromptGrammar PromptGrammar::parse(std::string_view text) {
  PromptGrammar g;
  g.source_ = std::string(text);
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> void {
    throw ConfigError("grammar line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) fail("expected '='");
    std::string_view key = trim(body.substr(0, eq));
    std::string_view value = trim(body.substr(eq + 1));
    const auto colon = key.find(':');
    if (colon == std::string_view::npos) fail("expected <section>:<class>");
    std::string section(trim(key.substr(0, colon)));
    std::string klass(trim(key.substr(colon + 1)));
    if (klass.empty()) fail("empty class name");

    const bool disabled = value == "-";
    std::optional<Template> tmpl;
    if (!disabled) {
      try {
        tmpl = parse_template(value);
      } catch (const SyntaxError& e) {
        fail(e.what());
      }
    }
    if (disabled && section != "negative") fail("'-' is only allowed for negative templates");

    if (klass == "default") {
      if (section == "positive" && !g.default_positive_) {
        g.default_positive_ = std::move(tmpl);
      } else if (section == "negative" && !g.default_negative_ && !disabled) {
        g.default_negative_ = std::move(tmpl);
      } else {
        fail("bad or duplicate default entry");
      }
      continue;
    }

    auto [it, inserted] = g.classes_.try_emplace(klass);
    if (inserted) g.class_order_.push_back(klass);
    ClassEntry& entry = it->second;
    auto assign = [&](std::optional<Template>& slot) {
      if (slot) fail("duplicate " + section + " entry for " + klass);
      slot = std::move(tmpl);
    };
    if (section == "positive") {
      assign(entry.positive);
    } else if (section == "negative") {
      if (entry.negative || entry.negative_disabled) fail("duplicate negative entry for " + klass);
      if (disabled) {
        entry.negative_disabled = true;
      } else {
        entry.negative = std::move(tmpl);
      }
    } else if (section == "expr") {
      assign(entry.expression);
    } else if (section == "expr.negative") {
      assign(entry.negative_expression);
    } else {
      fail("unknown section '" + section + "'");
    }
  }
  if (!g.default_positive_ || !g.default_negative_) {
    throw ConfigError("grammar must define positive:default and negative:default");
  }
  return g;
}

PromptGrammar PromptGrammar::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open grammar file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::filesystem::path PromptGrammar::resolve_path(
    const std::optional<std::filesystem::path>& explicit_path) {
  if (explicit_path && !explicit_path->empty()) return *explicit_path;
  if (const char* env = std::getenv("CXRCLIP_GRAMMAR"); env != nullptr && *env != '\0') {
    return env;
  }
  return CXRCLIP_DEFAULT_GRAMMAR;
}

bool PromptGrammar::knows_class(std::string_view name) const {
  return classes_.find(name) != classes_.end();
}

ResolvedPrompt PromptGrammar::resolve(std::string_view class_name, LabelValue value) const {
  if (value == LabelValue::uncertain || value == LabelValue::none) {
    throw UnsupportedValue("no prompts for value '" + std::string(to_string(value)) + "'");
  }
  auto it = classes_.find(class_name);
  if (it == classes_.end()) throw NoTemplate("unknown class '" + std::string(class_name) + "'");
  const ClassEntry& entry = it->second;
  ResolvedPrompt r;
  if (value == LabelValue::positive) {
    r.tmpl = entry.positive ? &*entry.positive : &*default_positive_;
  } else {
    if (entry.negative_disabled) {
      throw NoTemplate("no negative prompts for '" + std::string(class_name) + "'");
    }
    r.tmpl = entry.negative ? &*entry.negative : &*default_negative_;
  }
  if (has_slot(*r.tmpl)) {
    if (value == LabelValue::negative && entry.negative_expression) {
      r.expression = &*entry.negative_expression;
    } else if (entry.expression) {
      r.expression = &*entry.expression;
    } else {
      throw NoTemplate("no class expression for '" + std::string(class_name) + "'");
    }
  }
  return r;
}

bool PromptGrammar::has_prompt_set(std::string_view class_name, LabelValue value) const {
  try {
    resolve(class_name, value);
    return true;
  } catch (const NoTemplate&) {
    return false;
  } catch (const UnsupportedValue&) {
    return false;
  }
}

std::string PromptGrammar::render_prompt(std::string_view class_name, LabelValue value,
                                         Rng& rng) const {
  ResolvedPrompt r = resolve(class_name, value);
  return expand_template(*r.tmpl, r.expression, rng);
}

std::set<std::string> PromptGrammar::enumerate(std::string_view class_name, LabelValue value,
                                               std::size_t cap) const {
  ResolvedPrompt r = resolve(class_name, value);
  return enumerate_expansions(*r.tmpl, r.expression, cap);
}

std::string PromptGrammar::build_study_text(const LabelRecord& labels, Rng& rng,
                                            std::optional<std::size_t> negative_sample_count) const {
  std::vector<std::pair<std::string, LabelValue>> positives;
  std::vector<std::pair<std::string, LabelValue>> negatives;
  for (const auto& [name, value] : labels) {
    if (!knows_class(name)) throw NoTemplate("unknown class '" + name + "'");
    if (value == LabelValue::uncertain || value == LabelValue::none) continue;
    if (!has_prompt_set(name, value)) continue;  // e.g. a negative "No Finding"
    (value == LabelValue::positive ? positives : negatives).emplace_back(name, value);
  }
  std::vector<std::pair<std::string, LabelValue>> included = positives;
  if (negative_sample_count) {
    rng.shuffle(negatives);
    const std::size_t k = std::min(*negative_sample_count, negatives.size());
    included.insert(included.end(), negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    included.insert(included.end(), negatives.begin(), negatives.end());
  }
  if (included.empty()) throw EmptyLabelSet("no positive or negative label renders a prompt");
  rng.shuffle(included);
  std::string text;
  for (const auto& [name, value] : included) {
    if (!text.empty()) text += ' ';
    text += render_prompt(name, value, rng);
  }
  return text;
}

std::vector<std::string> PromptGrammar::literal_texts() const {
  std::vector<std::string> out;
  collect_literals(*default_positive_, out);
  collect_literals(*default_negative_, out);
  for (const auto& name : class_order_) {
    const ClassEntry& e = classes_.find(name)->second;
    for (const auto* t : {&e.positive, &e.negative, &e.expression, &e.negative_expression}) {
      if (*t) collect_literals(**t, out);
    }
  }
  return out;
}

std::pair<std::string, std::string> eval_prompt_pair(std::string_view class_name,
                                                     EvalPromptStyle style) {
  if (style == EvalPromptStyle::rsna) {
    return {"Findings suggesting pneumonia.", "No evidence of pneumonia."};
  }
  return {std::string(class_name), "No " + std::string(class_name)};
}

}  // namespace cxrclip::prompt
