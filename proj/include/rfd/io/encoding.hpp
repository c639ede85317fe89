#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rfd::io {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);

std::string base64_encode(std::string_view bytes);
/// Throws FormatError on malformed input.
std::string base64_decode(std::string_view text);

/// Little-endian f64 payload, base64 encoded.
std::string encode_f64s(std::span<const double> values);
std::vector<double> decode_f64s(std::string_view text);

}  // namespace rfd::io
