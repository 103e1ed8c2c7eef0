#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace cxrclip {

std::string sha1_hex(std::string_view data);

// Same id `git hash-object` prints: SHA-1 of "blob <size>\0" + content.
std::string git_blob_hash(std::string_view content);
std::string git_blob_hash_file(const std::filesystem::path& path);

// SHA-1 over "<relative path> <blob hash>\n" for every regular file below
// root, sorted by path.
std::string directory_hash(const std::filesystem::path& root);

}  // namespace cxrclip
