#pragma once

#include <filesystem>
#include <string>

namespace stip::io {

/// Writes `content` to `path` through a sibling temporary file and a rename,
/// creating parent directories as needed.
void write_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

}  // namespace stip::io
