#pragma once

// Little-endian byte packing shared by the model container sections.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

#include "rfd/io/files.hpp"

namespace rfd::io {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v), 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  void bytes(std::string_view b) { buf_.append(b); }
  /// u64 length prefix, then the bytes.
  void blob(std::string_view b) {
    u64(b.size());
    bytes(b);
  }

  const std::string& str() const noexcept { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

/// Bounds-checked reader; every failure reports the absolute byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::string_view buf, std::size_t base_offset = 0) : buf_(buf), base_(base_offset) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get_le(4))); }
  std::uint64_t u64() { return get_le(8); }
  double f64() { return std::bit_cast<double>(get_le(8)); }
  void f64s(std::span<double> out) {
    need(out.size() * 8);
    for (double& x : out) x = f64();
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string_view blob() { return bytes(checked_size(u64())); }

  std::size_t offset() const noexcept { return base_ + pos_; }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  bool done() const noexcept { return pos_ == buf_.size(); }

  /// Rejects counts that cannot possibly fit in the remaining bytes.
  std::size_t checked_size(std::uint64_t n, std::size_t elem_size = 1) const {
    if (elem_size == 0 || n > remaining() / elem_size) {
      throw FormatError("length " + std::to_string(n) + " at byte " + std::to_string(offset()) +
                        " exceeds the " + std::to_string(remaining()) + " remaining bytes");
    }
    return static_cast<std::size_t>(n);
  }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      throw FormatError("truncated input: need " + std::to_string(n) + " bytes at byte " +
                        std::to_string(offset()) + ", " + std::to_string(remaining()) + " left");
    }
  }
  std::uint64_t get_le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= std::uint64_t{static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])} << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view buf_;
  std::size_t base_ = 0;
  std::size_t pos_ = 0;
};

}  // namespace rfd::io
