#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rfd::io {

/// Malformed or truncated input file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace rfd::io
