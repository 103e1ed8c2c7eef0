#pragma once

// Line-based text container for a trained model. The layout is described in
// docs/checkpoint-format.md.

#include <filesystem>
#include <map>
#include <string>

#include "cxrclip/encoders.hpp"

namespace cxrclip::model {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ClipModel model;
  std::map<std::string, std::string> meta;
};

std::string serialize_checkpoint(const ClipModel& m, const std::map<std::string, std::string>& meta);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const ClipModel& m,
                     const std::map<std::string, std::string>& meta = {});
// Throws DataError on unreadable or malformed files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cxrclip::model
