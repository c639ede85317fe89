#pragma once

// IDX container (the MNIST distribution format): a 4-byte magic of two zero
// bytes, a type code and a rank, then `rank` big-endian u32 dimensions and the
// row-major payload. Type 0x08 is unsigned bytes, 0x0E big-endian f64.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rfd/dataset.hpp"
#include "rfd/tensor.hpp"

namespace rfd::io {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr std::uint32_t kIdxDoubleImagesMagic = 0x00000E03;

/// Loads an image/label pair; pixels map to v / 255 - 0.5 and the file order
/// is kept. Images get a trailing channel axis: [N, rows, cols, 1].
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Quantises to bytes with round((v + 0.5) * 255).
void write_idx_images(const std::filesystem::path& path, const Tensor& images);
void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels);

/// Lossless dump of an [N, rows, cols(, 1)] batch as big-endian doubles.
void write_idx_f64(const std::filesystem::path& path, const Tensor& images);
Tensor read_idx_f64(const std::filesystem::path& path);

}  // namespace rfd::io
