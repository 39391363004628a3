#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ripo {

// Shortest representation that round-trips; used for every CSV/JSON number
// so artifacts are byte-stable.
std::string format_double(double value);

std::string read_text_file(const std::filesystem::path& path);
// Creates parent directories as needed.
void write_text_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace ripo
