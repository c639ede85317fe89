#include "rfd/io/idx.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>

#include "rfd/io/files.hpp"

namespace rfd::io {

namespace {

std::uint32_t read_be32(const std::string& buf, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > buf.size()) {
    throw FormatError(path.string() + ": truncated header at byte " + std::to_string(offset) + " (file has " +
                      std::to_string(buf.size()) + " bytes)");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + offset);
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>(v & 0xFF));
}

struct IdxHeader {
  std::vector<std::uint32_t> dims;
  std::size_t payload_offset = 0;
  std::size_t count = 1;
};

IdxHeader parse_header(const std::string& buf, std::uint32_t expected_magic, std::size_t elem_size,
                       const std::filesystem::path& path) {
  const std::uint32_t magic = read_be32(buf, 0, path);
  if (magic != expected_magic) {
    char got[11], want[11];
    std::snprintf(got, sizeof got, "0x%08X", magic);
    std::snprintf(want, sizeof want, "0x%08X", expected_magic);
    throw FormatError(path.string() + ": bad magic " + got + " at byte 0, expected " + want);
  }
  IdxHeader h;
  const std::size_t rank = magic & 0xFF;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::uint32_t d = read_be32(buf, 4 + 4 * i, path);
    if (d == 0) throw FormatError(path.string() + ": zero dimension at byte " + std::to_string(4 + 4 * i));
    h.dims.push_back(d);
    h.count *= d;
  }
  h.payload_offset = 4 + 4 * rank;
  const std::size_t expected = h.payload_offset + h.count * elem_size;
  if (buf.size() < expected) {
    throw FormatError(path.string() + ": truncated payload, expected " + std::to_string(expected) +
                      " bytes but file ends at byte " + std::to_string(buf.size()));
  }
  if (buf.size() > expected) {
    throw FormatError(path.string() + ": " + std::to_string(buf.size() - expected) +
                      " trailing bytes after payload end at byte " + std::to_string(expected));
  }
  return h;
}

Shape image_shape_of(const Tensor& images) {
  if (images.rank() == 3) return images.shape();
  if (images.rank() == 4 && images.dim(3) == 1) return {images.dim(0), images.dim(1), images.dim(2)};
  throw std::invalid_argument("IDX images must be [N, rows, cols] or [N, rows, cols, 1], got " +
                              to_string(images.shape()));
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const std::string ibuf = read_file(images_path);
  const std::string lbuf = read_file(labels_path);
  const IdxHeader ih = parse_header(ibuf, kIdxImagesMagic, 1, images_path);
  const IdxHeader lh = parse_header(lbuf, kIdxLabelsMagic, 1, labels_path);
  if (ih.dims[0] != lh.dims[0]) {
    throw FormatError(images_path.string() + " holds " + std::to_string(ih.dims[0]) + " images but " +
                      labels_path.string() + " holds " + std::to_string(lh.dims[0]) + " labels");
  }
  Dataset ds;
  std::vector<double> pixels(ih.count);
  const auto* src = reinterpret_cast<const unsigned char*>(ibuf.data() + ih.payload_offset);
  for (std::size_t i = 0; i < ih.count; ++i) pixels[i] = static_cast<double>(src[i]) / 255.0 - 0.5;
  ds.images = Tensor({ih.dims[0], ih.dims[1], ih.dims[2], 1}, std::move(pixels));
  const auto* lsrc = reinterpret_cast<const unsigned char*>(lbuf.data() + lh.payload_offset);
  ds.labels.resize(lh.count);
  for (std::size_t i = 0; i < lh.count; ++i) {
    if (lsrc[i] > 9) {
      throw FormatError(labels_path.string() + ": label " + std::to_string(lsrc[i]) + " at byte " +
                        std::to_string(lh.payload_offset + i) + " is not a digit class");
    }
    ds.labels[i] = lsrc[i];
  }
  return ds;
}

void write_idx_images(const std::filesystem::path& path, const Tensor& images) {
  const Shape s = image_shape_of(images);
  std::string out;
  out.reserve(16 + images.size());
  put_be32(out, kIdxImagesMagic);
  for (auto d : s) put_be32(out, static_cast<std::uint32_t>(d));
  for (double v : images.data()) {
    const double q = std::round((v + 0.5) * 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(q, 0.0, 255.0))));
  }
  write_file_atomic(path, out);
}

void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels) {
  std::string out;
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw std::invalid_argument("IDX label out of byte range");
    out.push_back(static_cast<char>(static_cast<unsigned char>(l)));
  }
  write_file_atomic(path, out);
}

void write_idx_f64(const std::filesystem::path& path, const Tensor& images) {
  const Shape s = image_shape_of(images);
  std::string out;
  out.reserve(16 + images.size() * 8);
  put_be32(out, kIdxDoubleImagesMagic);
  for (auto d : s) put_be32(out, static_cast<std::uint32_t>(d));
  for (double v : images.data()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<char>((bits >> shift) & 0xFF));
  }
  write_file_atomic(path, out);
}

Tensor read_idx_f64(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  const IdxHeader h = parse_header(buf, kIdxDoubleImagesMagic, 8, path);
  std::vector<double> values(h.count);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + h.payload_offset);
  for (std::size_t i = 0; i < h.count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits = (bits << 8) | p[i * 8 + static_cast<std::size_t>(b)];
    values[i] = std::bit_cast<double>(bits);
  }
  return Tensor({h.dims[0], h.dims[1], h.dims[2], 1}, std::move(values));
}

}  // namespace rfd::io
