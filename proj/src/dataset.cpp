#include "rfd/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rfd {

Shape Dataset::image_shape() const {
  if (images.rank() < 2) throw std::logic_error("dataset has no images");
  return Shape(images.shape().begin() + 1, images.shape().end());
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  const Shape inner = image_shape();
  const std::size_t stride = numel(inner);
  Shape shape{indices.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> data(indices.size() * stride);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) throw std::out_of_range("dataset index " + std::to_string(indices[k]));
    std::copy_n(images.ptr() + indices[k] * stride, stride, data.data() + k * stride);
  }
  return Tensor(std::move(shape), std::move(data));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.images = gather(indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(idx);
}

void Dataset::validate(std::size_t num_classes) const {
  if (images.rank() < 2 || images.dim(0) != labels.size()) {
    throw std::invalid_argument("dataset: " + std::to_string(labels.size()) + " labels for images of shape " +
                                to_string(images.shape()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                  " outside [0, " + std::to_string(num_classes - 1) + "]");
    }
  }
  for (double v : images.data()) {
    if (!(v >= -0.5 && v <= 0.5)) throw std::invalid_argument("dataset: pixel value outside [-0.5, 0.5]");
  }
}

}  // namespace rfd
