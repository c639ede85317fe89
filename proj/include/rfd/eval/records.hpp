#pragma once

// JSON-lines result stream: a header object on the first line, then one
// object per attack run. Tensors travel as base64 little-endian f64 so a
// stream can be re-verified bit for bit.

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rfd/attacks/result.hpp"

namespace rfd::eval {

inline constexpr int kStreamSchema = 1;

struct Record {
  std::string model;   // model the success flag was verified against
  std::string source;  // model the example was crafted on
  std::size_t example = 0;  // index into the test set
  attacks::AttackResult result;
  /// The attack threw; the result carries the unmodified input.
  bool error = false;
  /// The attack cannot run on this model at all (no gradient surface).
  bool structural = false;
};

nlohmann::json record_to_json(const Record& r);
/// Throws io::FormatError on missing or ill-typed fields.
Record record_from_json(const nlohmann::json& j);

struct Stream {
  nlohmann::json header = nlohmann::json::object();
  std::vector<Record> records;
};

std::string encode_stream(const Stream& s);
/// An empty text decodes to an empty stream with an empty header.
Stream decode_stream(std::string_view text);

void write_stream(const std::filesystem::path& path, const Stream& s);
Stream read_stream(const std::filesystem::path& path);

}  // namespace rfd::eval
