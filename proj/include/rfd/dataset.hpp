#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rfd/tensor.hpp"

namespace rfd {

/// Labelled image batch in file order. Images are NHWC with pixel values in
/// [-0.5, 0.5].
struct Dataset {
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  Shape image_shape() const;
  Tensor image(std::size_t i) const { return images.row(i); }
  /// Gathers the given rows into a new batch tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;

  /// Throws if labels and images disagree or a pixel leaves [-0.5, 0.5].
  void validate(std::size_t num_classes) const;
};

}  // namespace rfd
