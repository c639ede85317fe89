#include "rfd/io/encoding.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <memory>

#include "rfd/io/binary.hpp"
#include "rfd/io/files.hpp"

namespace rfd::io {

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  std::string out;
  char hex[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(hex, sizeof hex, "%02x", md[i]);
    out += hex;
  }
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw FormatError("base64 length " + std::to_string(text.size()) + " is not a multiple of 4");
  std::string out(3 * (text.size() / 4) + 1, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw FormatError("malformed base64 text");
  // EVP_DecodeBlock keeps the zero bytes that stand in for '=' padding.
  std::size_t len = static_cast<std::size_t>(n);
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

std::string encode_f64s(std::span<const double> values) {
  ByteWriter w;
  w.f64s(values);
  return base64_encode(w.str());
}

std::vector<double> decode_f64s(std::string_view text) {
  const std::string raw = base64_decode(text);
  if (raw.size() % 8 != 0) throw FormatError("f64 payload of " + std::to_string(raw.size()) + " bytes");
  ByteReader r(raw);
  std::vector<double> out(raw.size() / 8);
  r.f64s(out);
  return out;
}

}  // namespace rfd::io
