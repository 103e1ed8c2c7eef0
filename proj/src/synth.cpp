#include "cxrclip/synth.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>

#include "cxrclip/errors.hpp"

namespace cxrclip::synth {

namespace {

constexpr std::array<const char*, kMaxClasses> kClassNames = {
    "Atelectasis", "Cardiomegaly", "Consolidation", "Edema", "Pleural Effusion", "Pneumothorax", "Nodule", "Mass"};

constexpr double kBase = 0.5;
constexpr int kDeviceMarkers = 4;
constexpr int kMarkerSide = 3;

double amplitude(Severity s) {
  switch (s) {
    case Severity::mild:
      return 0.16;
    case Severity::moderate:
      return 0.24;
    case Severity::severe:
      return 0.34;
  }
  return 0.24;
}

double period(Variant v) { return v == Variant::patchy ? 4.0 : 8.0; }

const char* severity_word(Severity s) {
  switch (s) {
    case Severity::mild:
      return "mild";
    case Severity::moderate:
      return "moderate";
    case Severity::severe:
      return "severe";
  }
  return "moderate";
}

const char* variant_word(Variant v) { return v == Variant::patchy ? "patchy" : "diffuse"; }

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

double stripes(double y, double x, double angle_deg, double p, double phase) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  return std::sin(2.0 * std::numbers::pi * (x * std::cos(a) + y * std::sin(a)) / p + phase);
}

Finding draw_finding(int class_index, const SynthSpec& spec, Rng& rng) {
  Finding f;
  f.class_index = class_index;
  f.severity = static_cast<Severity>(rng.uniform_index(3));
  f.variant = rng.bernoulli(0.5) ? Variant::patchy : Variant::diffuse;
  f.device = rng.bernoulli(spec.device_fraction);
  return f;
}

std::vector<StudyImage> draw_images(const Finding& f, const SynthSpec& spec, const std::string& id,
                                    const std::string& split, Rng& rng) {
  std::vector<StudyImage> out;
  StudyImage first;
  first.view = rng.bernoulli(0.5) ? View::PA : View::AP;
  first.pixels = render_image(f, spec, rng);
  first.path = "images/" + split + "/" + id + "_0.pgm";
  out.push_back(std::move(first));
  if (rng.bernoulli(spec.multi_image_fraction)) {
    StudyImage second;
    second.view = rng.bernoulli(spec.lateral_fraction) ? View::LATERAL
                                                        : (out.front().view == View::PA ? View::AP : View::PA);
    second.pixels = render_image(f, spec, rng);
    second.path = "images/" + split + "/" + id + "_1.pgm";
    out.push_back(std::move(second));
  }
  return out;
}

Study make_study(int index, int class_index, const std::string& split, bool label_only, const SynthSpec& spec,
                 const std::vector<std::string>& classes, const prompt::PromptGrammar& grammar, Rng& rng) {
  char id[64];
  std::snprintf(id, sizeof id, "%s-%05d", split.c_str(), index);
  Study s;
  s.id = id;
  const Finding f = draw_finding(class_index, spec, rng);
  s.images = draw_images(f, spec, s.id, split, rng);
  const std::string& name = classes[static_cast<std::size_t>(class_index)];
  prompt::LabelRecord labels{{name, prompt::LabelValue::positive}};
  if (label_only) {
    if (f.device) labels.emplace("Support Devices", prompt::LabelValue::positive);
    if (classes.size() > 1 && rng.bernoulli(0.3)) {
      std::size_t other = rng.uniform_index(classes.size() - 1);
      if (other >= static_cast<std::size_t>(class_index)) ++other;
      labels.emplace(classes[other], prompt::LabelValue::negative);
    }
  } else {
    s.findings = findings_text(f, name, grammar, rng);
    s.impression = impression_text(f, name);
  }
  s.labels = std::move(labels);
  return s;
}

}  // namespace

void validate(const SynthSpec& spec) {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (spec.class_count < 2 || spec.class_count > kMaxClasses) fail("class_count must lie in [2, 8]");
  if (spec.train_studies < 2 || spec.valid_studies < 1 || spec.test_per_class < 1) {
    fail("every split needs studies");
  }
  if (spec.image_size < 8) fail("image_size must be at least 8");
  if (!(spec.noise >= 0.0)) fail("noise must be non-negative");
  for (double p : {spec.label_only_fraction, spec.multi_image_fraction, spec.lateral_fraction, spec.device_fraction}) {
    if (!(p >= 0.0 && p <= 1.0)) fail("fractions must lie in [0, 1]");
  }
}

std::vector<std::string> class_names(int count) {
  if (count < 0 || count > kMaxClasses) throw std::invalid_argument("class count outside [0, 8]");
  return {kClassNames.begin(), kClassNames.begin() + count};
}

double pattern_value(int class_index, double y, double x, int size, double p, double phase) {
  switch (class_index) {
    case 0:
      return stripes(y, x, 0.0, p, phase);
    case 1:
      return stripes(y, x, 90.0, p, phase);
    case 2:
      return stripes(y, x, 45.0, p, phase);
    case 3:
      return stripes(y, x, 135.0, p, phase);
    case 4: {
      const double c = (size - 1) / 2.0;
      return std::sin(2.0 * std::numbers::pi * std::hypot(y - c, x - c) / p + phase);
    }
    case 5:
      return 2.0 * std::sin(2.0 * std::numbers::pi * x / p + phase) *
             std::sin(2.0 * std::numbers::pi * y / p + phase);
    case 6:
      return stripes(y, x, 22.5, p, phase);
    case 7:
      return stripes(y, x, 112.5, p, phase);
    default:
      throw std::invalid_argument("class index outside the synthetic class list");
  }
}

double min_pattern_distance(int class_count, int size) {
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < class_count; ++a) {
    for (int b = a + 1; b < class_count; ++b) {
      for (double p : {4.0, 8.0}) {
        double sq = 0.0;
        for (int y = 0; y < size; ++y) {
          for (int x = 0; x < size; ++x) {
            const double d = pattern_value(a, y, x, size, p, 0.0) - pattern_value(b, y, x, size, p, 0.0);
            sq += d * d;
          }
        }
        best = std::min(best, std::sqrt(sq / (static_cast<double>(size) * size)));
      }
    }
  }
  return best;
}

Image render_image(const Finding& f, const SynthSpec& spec, Rng& rng) {
  const int n = spec.image_size;
  const double amp = amplitude(f.severity);
  const double p = period(f.variant);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  Image img(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      img.at(y, x) = kBase + amp * pattern_value(f.class_index, y, x, n, p, phase);
    }
  }
  if (f.device) {
    for (int k = 0; k < kDeviceMarkers; ++k) {
      const auto room = static_cast<std::size_t>(n - kMarkerSide + 1);
      const int y0 = static_cast<int>(rng.uniform_index(room));
      const int x0 = static_cast<int>(rng.uniform_index(room));
      for (int dy = 0; dy < kMarkerSide; ++dy) {
        for (int dx = 0; dx < kMarkerSide; ++dx) img.at(y0 + dy, x0 + dx) = 1.0;
      }
    }
  }
  for (double& v : img.pixels) v = std::clamp(v + spec.noise * rng.normal(), 0.0, 1.0);
  return img;
}

std::string findings_text(const Finding& f, const std::string& class_name, const prompt::PromptGrammar& grammar,
                          Rng& rng) {
  std::string text = grammar.render_prompt(class_name, prompt::LabelValue::positive, rng);
  text += " The changes are ";
  text += severity_word(f.severity);
  text += " and ";
  text += variant_word(f.variant);
  text += ".";
  if (f.device) text += " A support device is seen.";
  return text;
}

std::string impression_text(const Finding& f, const std::string& class_name) {
  std::string sev = severity_word(f.severity);
  sev[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sev[0])));
  std::string text = sev + " " + variant_word(f.variant) + " " + lower(class_name) + ".";
  if (f.device) text += " Support device in place.";
  return text;
}

Dataset generate(const SynthSpec& spec, const prompt::PromptGrammar& grammar, std::uint64_t seed) {
  validate(spec);
  Dataset data;
  data.classes = class_names(spec.class_count);
  for (const auto& c : data.classes) {
    if (!grammar.has_prompt_set(c, prompt::LabelValue::positive)) {
      throw ConfigError("grammar has no positive prompts for '" + c + "'");
    }
  }
  const double distance = min_pattern_distance(spec.class_count, spec.image_size);
  if (distance < 0.5) {
    throw ConfigError("class textures are too similar at image size " + std::to_string(spec.image_size));
  }

  auto build = [&](const std::string& split, int count, bool allow_label_only, std::vector<Study>& out) {
    Rng rng(derive_seed(seed, split));
    for (int i = 0; i < count; ++i) {
      const bool label_only = allow_label_only && rng.bernoulli(spec.label_only_fraction);
      out.push_back(make_study(i, i % spec.class_count, split, label_only, spec, data.classes, grammar, rng));
    }
  };
  build("train", spec.train_studies, true, data.train);
  build("valid", spec.valid_studies, true, data.valid);
  build("test", spec.test_per_class * spec.class_count, false, data.test);
  return data;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  write_studies(dir / "train.jsonl", data.train);
  write_studies(dir / "valid.jsonl", data.valid);
  write_studies(dir / "test.jsonl", data.test);
  std::ofstream classes(dir / "classes.txt", std::ios::binary);
  if (!classes) throw DataError("cannot write " + (dir / "classes.txt").string());
  for (const auto& c : data.classes) classes << c << '\n';
}

}  // namespace cxrclip::synth
