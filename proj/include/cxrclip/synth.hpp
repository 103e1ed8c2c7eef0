#pragma once

// Synthetic studies whose images carry a per-class texture and whose reports
// describe class, severity, texture scale and support devices.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cxrclip/image.hpp"
#include "cxrclip/prompt.hpp"
#include "cxrclip/study.hpp"

namespace cxrclip::synth {

inline constexpr int kMaxClasses = 8;

struct SynthSpec {
  int class_count = 5;
  int train_studies = 8000;
  int valid_studies = 100;
  int test_per_class = 20;
  int image_size = 32;
  double noise = 0.05;
  double label_only_fraction = 0.3;  // train and valid only
  double multi_image_fraction = 0.5;
  double lateral_fraction = 0.5;     // of second images
  double device_fraction = 0.5;
};

// Throws ConfigError.
void validate(const SynthSpec& spec);

// First `count` names of the synthetic class list.
std::vector<std::string> class_names(int count);

enum class Severity { mild, moderate, severe };
enum class Variant { patchy, diffuse };

struct Finding {
  int class_index = 0;
  Severity severity = Severity::moderate;
  Variant variant = Variant::diffuse;
  bool device = false;
};

// Zero-mean texture in roughly [-1, 1] for a class, at the given period and
// phase.
double pattern_value(int class_index, double y, double x, int size, double period, double phase);

// Smallest RMS difference between any two class textures at phase 0.
double min_pattern_distance(int class_count, int size);

Image render_image(const Finding& f, const SynthSpec& spec, Rng& rng);

std::string findings_text(const Finding& f, const std::string& class_name, const prompt::PromptGrammar& grammar,
                          Rng& rng);
std::string impression_text(const Finding& f, const std::string& class_name);

struct Dataset {
  std::vector<Study> train;
  std::vector<Study> valid;
  std::vector<Study> test;
  std::vector<std::string> classes;
};

// Classes are assigned round-robin so every split is exactly balanced.
// Test studies always carry a report and a single positive label.
Dataset generate(const SynthSpec& spec, const prompt::PromptGrammar& grammar, std::uint64_t seed);

// train.jsonl, valid.jsonl, test.jsonl, classes.txt and images/<split>/*.pgm.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);

}  // namespace cxrclip::synth
