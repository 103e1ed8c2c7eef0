#pragma once

// Study-level sampling of two images and two texts per study.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cxrclip/image.hpp"
#include "cxrclip/prompt.hpp"
#include "cxrclip/rng.hpp"
#include "cxrclip/study.hpp"

namespace cxrclip::sampler {

enum class TextAugMode { sentence_swap, external_backtranslation, identity };

struct TextAugConfig {
  TextAugMode mode = TextAugMode::sentence_swap;
  // Executable reading text on stdin and writing the translation on stdout.
  // Called as `<command> forward` then `<command> backward`.
  std::string backtranslation_command;
};

// naive: first image with its first section (one pair per study)
// study: a random image and a random text of the study (one pair)
// multiview: two images and two texts per study
enum class SamplingMode { naive, study, multiview };

struct SamplerConfig {
  ImageAugConfig image;
  TextAugConfig text;
  SamplingMode mode = SamplingMode::multiview;
  // Augment every sampled view, not only the single-image/single-section fallback.
  bool augment_views = true;
  // Findings/impression assignment to (t1, t2): fixed order unless set.
  bool randomize_section_order = false;
  std::optional<std::size_t> negative_sample_count;
};

enum class TextSource { sections, section_augmented, prompts };

struct ImagePair {
  Image x1;
  Image x2;
  bool second_augmented = false;
};

struct TextPair {
  std::string t1;
  std::string t2;
  TextSource source = TextSource::sections;
};

struct SampledPair {
  Image x1;
  Image x2;
  std::string t1;
  std::string t2;
  bool second_image_augmented = false;
  TextSource text_source = TextSource::sections;
};

// Two images from distinct view tags when the study has at least two tags,
// otherwise two distinct images; a single image is paired with an augmented
// copy. Outputs are output_size x output_size.
ImagePair sample_images(const Study& study, const ImageAugConfig& cfg, Rng& rng);

// Label-only: two independent prompt renderings. Both sections: (findings,
// impression). One section: (section, augment_text(section)).
TextPair sample_texts(const Study& study, const TextAugConfig& cfg, Rng& rng,
                      const prompt::PromptGrammar& grammar, bool randomize_section_order = false,
                      std::optional<std::size_t> negative_sample_count = std::nullopt);

// Sentence boundary: '.', '?' or '!' followed by whitespace or end of text.
std::vector<std::string> split_sentences(std::string_view text);

std::string augment_text(std::string_view text, const TextAugConfig& cfg, Rng& rng);

// Round trip through the external translation hook; nullopt when the hook
// is unset or fails.
std::optional<std::string> backtranslate(const std::string& command, std::string_view text);

SampledPair sample_study(const Study& study, const SamplerConfig& cfg,
                         const prompt::PromptGrammar& grammar, Rng& rng);

struct Batch {
  std::vector<Image> x1;
  std::vector<Image> x2;
  std::vector<std::string> t1;
  std::vector<std::string> t2;
  std::vector<bool> second_image_augmented;
  std::vector<TextSource> text_source;

  std::size_t size() const { return x1.size(); }
};

// One sampled pair per study, in input order. Each study draws from its own
// generator seeded by (seed, study id). Failures are rethrown as StudyError.
Batch make_batch(std::span<const Study* const> studies, const SamplerConfig& cfg,
                 const prompt::PromptGrammar& grammar, std::uint64_t seed);

// Deterministic evaluation view: first frontal image (else first image)
// resized to `size`, and findings (else impression, else a prompt rendering
// with a fixed seed).
Image eval_image(const Study& study, int size);
std::string eval_text(const Study& study, const prompt::PromptGrammar& grammar);

}  // namespace cxrclip::sampler
