#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace rfd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles with an explicit shape.
///
/// A default-constructed tensor has rank 0 and no storage. Every other
/// tensor satisfies `numel(shape()) == size()`; constructors reject shapes
/// with zero-length axes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::initializer_list<double> values);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same data viewed under a new shape with the same element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  /// Copy of rows [begin, end) along axis 0.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  /// Row `i` of axis 0 with the leading axis dropped.
  Tensor row(std::size_t i) const;

  void fill(double value);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);
/// Joins two batches along axis 0; trailing axes must agree.
Tensor concat_rows(const Tensor& a, const Tensor& b);

bool all_finite(std::span<const double> values);
inline bool all_finite(const Tensor& t) { return all_finite(t.data()); }

double l2_norm(std::span<const double> values);
double squared_l2_distance(std::span<const double> a, std::span<const double> b);
double l2_distance(std::span<const double> a, std::span<const double> b);
double linf_distance(std::span<const double> a, std::span<const double> b);

/// Index of the largest value; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace rfd
