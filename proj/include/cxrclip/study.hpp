#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cxrclip/image.hpp"
#include "cxrclip/prompt.hpp"

namespace cxrclip {

enum class View { AP, PA, LATERAL, UNKNOWN };

std::optional<View> parse_view(std::string_view text);
std::string_view to_string(View v);
inline bool is_frontal(View v) { return v == View::AP || v == View::PA; }

struct StudyImage {
  Image pixels;
  View view = View::UNKNOWN;
  std::string path;  // relative path it was read from, empty for inline pixels
};

struct Study {
  std::string id;
  std::vector<StudyImage> images;
  std::optional<std::string> findings;
  std::optional<std::string> impression;
  std::optional<prompt::LabelRecord> labels;

  bool has_findings() const { return findings && !findings->empty(); }
  bool has_impression() const { return impression && !impression->empty(); }
};

// Checks the study invariant: at least one image and at least one of a
// non-empty section or a label map.
void validate(const Study& study);

// Line-delimited JSON, one study per line:
//   {"id": ..., "images": [{"path": "x.pgm" | "pixels": [[...]], "view": "PA"}],
//    "findings": ..., "impression": ..., "labels": {"Edema": "positive"}}
// Image paths are relative to the file's directory. Throws DataError with the
// line number on malformed input. When a grammar is given, label class names
// must be known to it.
std::vector<Study> read_studies(const std::filesystem::path& path,
                                const prompt::PromptGrammar* grammar = nullptr);

// Writes studies; images with a non-empty `path` are written as PGM files
// under the output directory, others inline.
void write_studies(const std::filesystem::path& path, const std::vector<Study>& studies);

}  // namespace cxrclip
