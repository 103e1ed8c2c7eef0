#include "cxrclip/sampler.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include <sys/wait.h>
#include <unistd.h>

#include "cxrclip/errors.hpp"

namespace cxrclip::sampler {

namespace {

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::string trim(std::string_view s) {
  while (!s.empty() && is_ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_ws(s.back())) s.remove_suffix(1);
  return std::string(s);
}

std::string join_sentences(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

std::optional<std::string> run_filter(const std::string& command, const std::string& direction,
                                      std::string_view input) {
  char path[] = "/tmp/cxrclip_bt_XXXXXX";
  const int fd = mkstemp(path);
  if (fd < 0) return std::nullopt;
  close(fd);
  {
    std::ofstream f(path, std::ios::binary);
    f << input;
  }
  const std::string cmd = shell_quote(command) + " " + direction + " < " + shell_quote(path);
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string output;
  int status = -1;
  if (pipe != nullptr) {
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) output.append(buf, n);
    status = pclose(pipe);
  }
  std::filesystem::remove(path);
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) return std::nullopt;
  std::string cleaned = trim(output);
  if (cleaned.empty()) return std::nullopt;
  return cleaned;
}

std::string prompt_text(const Study& study, const prompt::PromptGrammar& grammar, Rng& rng,
                        std::optional<std::size_t> negative_sample_count) {
  try {
    return grammar.build_study_text(*study.labels, rng, negative_sample_count);
  } catch (const EmptyLabelSet& e) {
    throw NoText(e.what());
  }
}

}  // namespace

ImagePair sample_images(const Study& study, const ImageAugConfig& cfg, Rng& rng) {
  const auto& images = study.images;
  if (images.empty()) throw NoImages("study has no images");
  const int size = cfg.output_size;
  ImagePair out;
  if (images.size() == 1) {
    out.x1 = resize_bilinear(images.front().pixels, size, size);
    out.x2 = augment_image(images.front().pixels, cfg, rng);
    out.second_augmented = true;
    return out;
  }

  std::set<View> tags;
  for (const auto& im : images) tags.insert(im.view);
  std::size_t first = 0;
  std::size_t second = 0;
  if (tags.size() >= 2) {
    std::vector<View> tag_list(tags.begin(), tags.end());
    const std::size_t a = rng.uniform_index(tag_list.size());
    std::size_t b = rng.uniform_index(tag_list.size() - 1);
    if (b >= a) ++b;
    auto pick_with = [&](View v) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].view == v) idx.push_back(i);
      }
      return idx[rng.uniform_index(idx.size())];
    };
    first = pick_with(tag_list[a]);
    second = pick_with(tag_list[b]);
  } else {
    first = rng.uniform_index(images.size());
    second = rng.uniform_index(images.size() - 1);
    if (second >= first) ++second;
  }
  out.x1 = resize_bilinear(images[first].pixels, size, size);
  out.x2 = resize_bilinear(images[second].pixels, size, size);
  return out;
}

TextPair sample_texts(const Study& study, const TextAugConfig& cfg, Rng& rng,
                      const prompt::PromptGrammar& grammar, bool randomize_section_order,
                      std::optional<std::size_t> negative_sample_count) {
  TextPair out;
  if (study.has_findings() && study.has_impression()) {
    out.t1 = *study.findings;
    out.t2 = *study.impression;
    if (randomize_section_order && rng.bernoulli(0.5)) std::swap(out.t1, out.t2);
    out.source = TextSource::sections;
  } else if (study.has_findings() || study.has_impression()) {
    out.t1 = study.has_findings() ? *study.findings : *study.impression;
    out.t2 = augment_text(out.t1, cfg, rng);
    out.source = TextSource::section_augmented;
  } else if (study.labels && !study.labels->empty()) {
    out.t1 = prompt_text(study, grammar, rng, negative_sample_count);
    out.t2 = prompt_text(study, grammar, rng, negative_sample_count);
    out.source = TextSource::prompts;
  } else {
    throw NoText("study has neither report sections nor labels");
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '?' || c == '!') && (i + 1 == text.size() || is_ws(text[i + 1]))) {
      std::string s = trim(text.substr(start, i + 1 - start));
      if (!s.empty()) out.push_back(std::move(s));
      start = i + 1;
    }
  }
  std::string tail = trim(text.substr(std::min(start, text.size())));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

std::string augment_text(std::string_view text, const TextAugConfig& cfg, Rng& rng) {
  if (cfg.mode == TextAugMode::identity) return std::string(text);
  if (cfg.mode == TextAugMode::external_backtranslation) {
    if (auto translated = backtranslate(cfg.backtranslation_command, text)) return *translated;
  }
  std::vector<std::string> sentences = split_sentences(text);
  rng.shuffle(sentences);
  return join_sentences(sentences);
}

std::optional<std::string> backtranslate(const std::string& command, std::string_view text) {
  if (command.empty()) return std::nullopt;
  auto forward = run_filter(command, "forward", text);
  if (!forward) return std::nullopt;
  return run_filter(command, "backward", *forward);
}

SampledPair sample_study(const Study& study, const SamplerConfig& cfg,
                         const prompt::PromptGrammar& grammar, Rng& rng) {
  validate(study);
  SampledPair out;
  const int size = cfg.image.output_size;

  if (cfg.mode == SamplingMode::multiview) {
    ImagePair images = sample_images(study, cfg.image, rng);
    TextPair texts = sample_texts(study, cfg.text, rng, grammar, cfg.randomize_section_order,
                                  cfg.negative_sample_count);
    out.second_image_augmented = images.second_augmented;
    out.text_source = texts.source;
    if (cfg.augment_views) {
      images.x1 = augment_image(images.x1, cfg.image, rng);
      if (!images.second_augmented) images.x2 = augment_image(images.x2, cfg.image, rng);
      if (texts.source != TextSource::prompts) texts.t1 = augment_text(texts.t1, cfg.text, rng);
      if (texts.source == TextSource::sections) texts.t2 = augment_text(texts.t2, cfg.text, rng);
    }
    out.x1 = std::move(images.x1);
    out.x2 = std::move(images.x2);
    out.t1 = std::move(texts.t1);
    out.t2 = std::move(texts.t2);
    return out;
  }

  if (cfg.mode == SamplingMode::naive) {
    out.x1 = resize_bilinear(study.images.front().pixels, size, size);
    if (study.has_findings()) {
      out.t1 = *study.findings;
    } else if (study.has_impression()) {
      out.t1 = *study.impression;
    } else {
      out.t1 = prompt_text(study, grammar, rng, cfg.negative_sample_count);
      out.text_source = TextSource::prompts;
    }
  } else {
    const auto& picked = study.images[rng.uniform_index(study.images.size())];
    out.x1 = resize_bilinear(picked.pixels, size, size);
    std::vector<const std::string*> sections;
    if (study.has_findings()) sections.push_back(&*study.findings);
    if (study.has_impression()) sections.push_back(&*study.impression);
    if (!sections.empty()) {
      out.t1 = *sections[rng.uniform_index(sections.size())];
    } else {
      out.t1 = prompt_text(study, grammar, rng, cfg.negative_sample_count);
      out.text_source = TextSource::prompts;
    }
    if (cfg.augment_views) {
      out.x1 = augment_image(out.x1, cfg.image, rng);
      if (out.text_source != TextSource::prompts) out.t1 = augment_text(out.t1, cfg.text, rng);
    }
  }
  out.x2 = out.x1;
  out.t2 = out.t1;
  return out;
}

Batch make_batch(std::span<const Study* const> studies, const SamplerConfig& cfg,
                 const prompt::PromptGrammar& grammar, std::uint64_t seed) {
  if (studies.empty()) throw std::invalid_argument("make_batch needs at least one study");
  Batch batch;
  for (const Study* s : studies) {
    Rng rng(derive_seed(seed, s->id));
    SampledPair p;
    try {
      p = sample_study(*s, cfg, grammar, rng);
    } catch (const StudyError&) {
      throw;
    } catch (const Error& e) {
      throw StudyError(s->id, e.what());
    }
    batch.x1.push_back(std::move(p.x1));
    batch.x2.push_back(std::move(p.x2));
    batch.t1.push_back(std::move(p.t1));
    batch.t2.push_back(std::move(p.t2));
    batch.second_image_augmented.push_back(p.second_image_augmented);
    batch.text_source.push_back(p.text_source);
  }
  return batch;
}

Image eval_image(const Study& study, int size) {
  if (study.images.empty()) throw NoImages("study " + study.id + " has no images");
  auto it = std::find_if(study.images.begin(), study.images.end(),
                         [](const StudyImage& im) { return is_frontal(im.view); });
  const StudyImage& chosen = it != study.images.end() ? *it : study.images.front();
  return resize_bilinear(chosen.pixels, size, size);
}

std::string eval_text(const Study& study, const prompt::PromptGrammar& grammar) {
  if (study.has_findings()) return *study.findings;
  if (study.has_impression()) return *study.impression;
  if (study.labels) {
    Rng rng(derive_seed(0, study.id));
    return prompt_text(study, grammar, rng, std::nullopt);
  }
  throw NoText("study " + study.id + " has no text");
}

}  // namespace cxrclip::sampler
