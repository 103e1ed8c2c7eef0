#include "cxrclip/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cxrclip/errors.hpp"
#include "cxrclip/hash.hpp"

namespace cxrclip {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE) throw ConfigError("not a number: '" + v + "'");
  return d;
}

long long to_int(const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE) throw ConfigError("not an integer: '" + v + "'");
  return i;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("not a boolean: '" + v + "'");
}

std::string fmt(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

std::string fmt(bool b) { return b ? "true" : "false"; }

template <class T>
ConfigKey double_key(std::string name, std::string help, T field) {
  return {std::move(name), std::move(help), [field](RunConfig& c, const std::string& v) { field(c) = to_double(v); },
          [field](const RunConfig& c) { return fmt(field(c)); }};
}

template <class T>
ConfigKey int_key(std::string name, std::string help, T field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& v) {
            const long long i = to_int(v);
            if (i < INT32_MIN || i > INT32_MAX) throw ConfigError("integer out of range: '" + v + "'");
            field(c) = static_cast<int>(i);
          },
          [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

template <class T>
ConfigKey bool_key(std::string name, std::string help, T field) {
  return {std::move(name), std::move(help), [field](RunConfig& c, const std::string& v) { field(c) = to_bool(v); },
          [field](const RunConfig& c) { return fmt(static_cast<bool>(field(c))); }};
}

std::vector<ConfigKey> make_keys() {
  using sampler::SamplingMode;
  using sampler::TextAugMode;
  std::vector<ConfigKey> k;
  k.push_back({"seed", "master seed",
               [](RunConfig& c, const std::string& v) {
                 const long long i = to_int(v);
                 if (i < 0) throw ConfigError("seed must be non-negative");
                 c.train.seed = static_cast<std::uint64_t>(i);
               },
               [](const RunConfig& c) { return std::to_string(c.train.seed); }});

  k.push_back(double_key("learning_rate", "peak learning rate", [](auto& c) -> auto& { return c.train.learning_rate; }));
  k.push_back(double_key("weight_decay", "decoupled weight decay", [](auto& c) -> auto& { return c.train.weight_decay; }));
  k.push_back(int_key("epochs", "maximum epochs", [](auto& c) -> auto& { return c.train.epochs; }));
  k.push_back(int_key("warmup_epochs", "linear warmup epochs", [](auto& c) -> auto& { return c.train.warmup_epochs; }));
  k.push_back(int_key("batch_studies", "studies per batch", [](auto& c) -> auto& { return c.train.batch_studies; }));
  k.push_back(double_key("lambda_icl", "image contrastive weight", [](auto& c) -> auto& { return c.train.lambda_icl; }));
  k.push_back(double_key("lambda_tcl", "text contrastive weight", [](auto& c) -> auto& { return c.train.lambda_tcl; }));
  k.push_back(int_key("early_stop_patience", "epochs without improvement before stopping",
                      [](auto& c) -> auto& { return c.train.early_stop_patience; }));
  k.push_back(double_key("grad_clip", "global gradient norm limit, 0 disables", [](auto& c) -> auto& { return c.train.grad_clip; }));
  k.push_back(double_key("initial_tau", "starting temperature", [](auto& c) -> auto& { return c.train.initial_tau; }));

  k.push_back({"sampling_mode", "naive | study | multiview",
               [](RunConfig& c, const std::string& v) {
                 if (v == "naive") {
                   c.train.sampler.mode = SamplingMode::naive;
                 } else if (v == "study") {
                   c.train.sampler.mode = SamplingMode::study;
                 } else if (v == "multiview") {
                   c.train.sampler.mode = SamplingMode::multiview;
                 } else {
                   throw ConfigError("unknown sampling_mode '" + v + "'");
                 }
               },
               [](const RunConfig& c) -> std::string {
                 switch (c.train.sampler.mode) {
                   case SamplingMode::naive:
                     return "naive";
                   case SamplingMode::study:
                     return "study";
                   case SamplingMode::multiview:
                     return "multiview";
                 }
                 return "multiview";
               }});
  k.push_back(bool_key("augment_views", "augment every sampled view", [](auto& c) -> auto& { return c.train.sampler.augment_views; }));
  k.push_back(bool_key("randomize_section_order", "randomly swap findings and impression",
                       [](auto& c) -> auto& { return c.train.sampler.randomize_section_order; }));
  k.push_back({"negative_sample_count", "negatives per label-only prompt, or none for all",
               [](RunConfig& c, const std::string& v) {
                 if (v == "none" || v.empty()) {
                   c.train.sampler.negative_sample_count.reset();
                   return;
                 }
                 const long long i = to_int(v);
                 if (i < 0) throw ConfigError("negative_sample_count must be non-negative");
                 c.train.sampler.negative_sample_count = static_cast<std::size_t>(i);
               },
               [](const RunConfig& c) {
                 const auto& n = c.train.sampler.negative_sample_count;
                 return n ? std::to_string(*n) : std::string("none");
               }});
  k.push_back({"text_aug", "sentence_swap | backtranslation | identity",
               [](RunConfig& c, const std::string& v) {
                 if (v == "sentence_swap") {
                   c.train.sampler.text.mode = TextAugMode::sentence_swap;
                 } else if (v == "backtranslation") {
                   c.train.sampler.text.mode = TextAugMode::external_backtranslation;
                 } else if (v == "identity") {
                   c.train.sampler.text.mode = TextAugMode::identity;
                 } else {
                   throw ConfigError("unknown text_aug '" + v + "'");
                 }
               },
               [](const RunConfig& c) -> std::string {
                 switch (c.train.sampler.text.mode) {
                   case TextAugMode::sentence_swap:
                     return "sentence_swap";
                   case TextAugMode::external_backtranslation:
                     return "backtranslation";
                   case TextAugMode::identity:
                     return "identity";
                 }
                 return "sentence_swap";
               }});
  k.push_back({"backtranslation_command", "translation hook executable",
               [](RunConfig& c, const std::string& v) { c.train.sampler.text.backtranslation_command = v; },
               [](const RunConfig& c) { return c.train.sampler.text.backtranslation_command; }});

  k.push_back(double_key("crop_scale_min", "random crop area scale, lower", [](auto& c) -> auto& { return c.train.sampler.image.crop_scale_range.first; }));
  k.push_back(double_key("crop_scale_max", "random crop area scale, upper", [](auto& c) -> auto& { return c.train.sampler.image.crop_scale_range.second; }));
  k.push_back(double_key("clahe_probability", "chance of applying CLAHE", [](auto& c) -> auto& { return c.train.sampler.image.clahe_probability; }));
  k.push_back(double_key("brightness_min", "brightness factor, lower", [](auto& c) -> auto& { return c.train.sampler.image.brightness_range.first; }));
  k.push_back(double_key("brightness_max", "brightness factor, upper", [](auto& c) -> auto& { return c.train.sampler.image.brightness_range.second; }));
  k.push_back(double_key("contrast_min", "contrast factor, lower", [](auto& c) -> auto& { return c.train.sampler.image.contrast_range.first; }));
  k.push_back(double_key("contrast_max", "contrast factor, upper", [](auto& c) -> auto& { return c.train.sampler.image.contrast_range.second; }));

  k.push_back({"image_size", "encoder input side length",
               [](RunConfig& c, const std::string& v) {
                 const long long i = to_int(v);
                 if (i < 2 || i > 4096) throw ConfigError("image_size out of range");
                 c.train.image_dims.input_size = static_cast<int>(i);
                 c.train.sampler.image.output_size = static_cast<int>(i);
               },
               [](const RunConfig& c) { return std::to_string(c.train.image_dims.input_size); }});
  k.push_back(int_key("conv_filters", "image conv filters", [](auto& c) -> auto& { return c.train.image_dims.filters; }));
  k.push_back(int_key("image_hidden", "image MLP hidden width", [](auto& c) -> auto& { return c.train.image_dims.hidden; }));
  k.push_back(int_key("image_feature", "image feature width", [](auto& c) -> auto& { return c.train.image_dims.feature; }));
  k.push_back(int_key("token_dim", "token embedding width", [](auto& c) -> auto& { return c.train.text_dims.token_dim; }));
  k.push_back(int_key("text_hidden", "text MLP hidden width", [](auto& c) -> auto& { return c.train.text_dims.hidden; }));
  k.push_back(int_key("text_feature", "text feature width", [](auto& c) -> auto& { return c.train.text_dims.feature; }));
  k.push_back({"embed_dim", "shared embedding width",
               [](RunConfig& c, const std::string& v) {
                 const long long i = to_int(v);
                 if (i < 2 || i > 65536) throw ConfigError("embed_dim out of range");
                 c.train.image_dims.embed = static_cast<int>(i);
                 c.train.text_dims.embed = static_cast<int>(i);
               },
               [](const RunConfig& c) { return std::to_string(c.train.image_dims.embed); }});

  k.push_back(int_key("synth_classes", "synthetic class count", [](auto& c) -> auto& { return c.synth.class_count; }));
  k.push_back(int_key("synth_train", "synthetic training studies", [](auto& c) -> auto& { return c.synth.train_studies; }));
  k.push_back(int_key("synth_valid", "synthetic validation studies", [](auto& c) -> auto& { return c.synth.valid_studies; }));
  k.push_back(int_key("synth_test_per_class", "synthetic test studies per class", [](auto& c) -> auto& { return c.synth.test_per_class; }));
  k.push_back(int_key("synth_image_size", "synthetic image side length", [](auto& c) -> auto& { return c.synth.image_size; }));
  k.push_back(double_key("synth_noise", "pixel noise standard deviation", [](auto& c) -> auto& { return c.synth.noise; }));
  k.push_back(double_key("synth_label_only_fraction", "share of label-only studies", [](auto& c) -> auto& { return c.synth.label_only_fraction; }));
  k.push_back(double_key("synth_multi_image_fraction", "share of two-image studies", [](auto& c) -> auto& { return c.synth.multi_image_fraction; }));
  k.push_back(double_key("synth_lateral_fraction", "share of lateral second views", [](auto& c) -> auto& { return c.synth.lateral_fraction; }));
  k.push_back(double_key("synth_device_fraction", "share of studies with a support device", [](auto& c) -> auto& { return c.synth.device_fraction; }));

  k.push_back(int_key("prompt_renderings", "prompt renderings averaged per class", [](auto& c) -> auto& { return c.prompt_renderings; }));
  k.push_back({"eval_classes", "comma separated classes for zero-shot tasks",
               [](RunConfig& c, const std::string& v) { c.eval_classes = v; },
               [](const RunConfig& c) { return c.eval_classes; }});
  return k;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      try {
        k.set(cfg, value);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string get_config_value(const RunConfig& cfg, std::string_view key) {
  for (const auto& k : config_keys()) {
    if (k.name == key) return k.get(cfg);
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

void apply_config_text(RunConfig& cfg, std::string_view text) {
  for (const auto& [k, v] : parse_config_text(text)) set_config_value(cfg, k, v);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, buf.str());
  return cfg;
}

std::string canonical_config(const RunConfig& cfg) {
  std::map<std::string, std::string> sorted;
  for (const auto& k : config_keys()) {
    if (k.name != "seed") sorted[k.name] = k.get(cfg);
  }
  std::string out;
  for (const auto& [k, v] : sorted) out += k + "=" + v + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) { return sha1_hex(canonical_config(cfg)); }

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string_view::npos ? text.size() : comma;
    std::string item = trim(text.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace cxrclip
