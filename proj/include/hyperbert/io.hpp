#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace hyperbert {

// Writes `content` to a sibling temporary file and renames it over `path`, so
// readers never observe a partial file.
void write_file_atomically(const std::filesystem::path& path, std::string_view content);

// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace hyperbert
