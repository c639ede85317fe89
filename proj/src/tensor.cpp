#include "rfd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rfd {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor shape " + to_string(shape) + " has a zero-length axis");
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (numel(shape_) != data_.size()) {
    throw std::invalid_argument("tensor shape " + to_string(shape_) + " holds " +
                                std::to_string(numel(shape_)) + " values but " +
                                std::to_string(data_.size()) + " were supplied");
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (numel(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), std::move(data_));
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (rank() == 0 || begin >= end || end > shape_[0]) {
    throw std::out_of_range("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") invalid for shape " + to_string(shape_));
  }
  const std::size_t stride = data_.size() / shape_[0];
  Shape shape = shape_;
  shape[0] = end - begin;
  std::vector<double> data(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                           data_.begin() + static_cast<std::ptrdiff_t>(end * stride));
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::row(std::size_t i) const {
  if (rank() < 2) throw std::invalid_argument("row() needs rank >= 2, got " + to_string(shape_));
  Tensor r = slice_rows(i, i + 1);
  Shape shape(shape_.begin() + 1, shape_.end());
  return std::move(r).reshaped(std::move(shape));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("stack of zero tensors");
  const Shape& inner = items.front().shape();
  Shape shape;
  shape.push_back(items.size());
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> data;
  data.reserve(numel(shape));
  for (const auto& t : items) {
    if (t.shape() != inner) {
      throw std::invalid_argument("stack: shape " + to_string(t.shape()) + " != " + to_string(inner));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double l2_norm(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

double squared_l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("distance between vectors of different length");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_l2_distance(a, b));
}

double linf_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("distance between vectors of different length");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw std::invalid_argument("concat_rows: cannot join " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor(std::move(s), std::move(data));
}

}  // namespace rfd
