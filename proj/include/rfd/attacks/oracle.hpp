#pragma once

// Query-only views of a model for black-box attacks. An oracle exposes one
// kind of output and counts every example it is asked about; it never hands
// out gradients. Counters are atomic so one oracle can serve many workers.

#include <atomic>
#include <functional>
#include <vector>

#include "rfd/hybrid.hpp"
#include "rfd/network.hpp"
#include "rfd/tensor.hpp"

namespace rfd::attacks {

class SoftOracle {
 public:
  /// [N, ...input] -> [N, J] class probabilities.
  using Fn = std::function<Tensor(const Tensor& batch)>;

  SoftOracle(Fn fn, Shape input_shape) : fn_(std::move(fn)), input_shape_(std::move(input_shape)) {}
  SoftOracle(const SoftOracle&) = delete;
  SoftOracle& operator=(const SoftOracle&) = delete;

  /// Counts batch.dim(0) queries.
  Tensor query(const Tensor& batch) const;
  std::vector<double> query_one(const Tensor& x) const;

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t queries() const noexcept { return count_.load(); }

 private:
  Fn fn_;
  Shape input_shape_;
  mutable std::atomic<std::size_t> count_{0};
};

class LabelOracle {
 public:
  /// [N, ...input] -> N hard labels.
  using Fn = std::function<std::vector<int>(const Tensor& batch)>;

  LabelOracle(Fn fn, Shape input_shape) : fn_(std::move(fn)), input_shape_(std::move(input_shape)) {}
  LabelOracle(const LabelOracle&) = delete;
  LabelOracle& operator=(const LabelOracle&) = delete;

  std::vector<int> query(const Tensor& batch) const;
  int query_one(const Tensor& x) const;

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t queries() const noexcept { return count_.load(); }

 private:
  Fn fn_;
  Shape input_shape_;
  mutable std::atomic<std::size_t> count_{0};
};

/// Softmax of the network's logits.
SoftOracle soft_oracle(const Network& net);
SoftOracle soft_oracle(const hybrid::HybridModel& model);
LabelOracle label_oracle(const Network& net);
LabelOracle label_oracle(const hybrid::HybridModel& model);

/// Adds a leading batch axis of 1.
Tensor as_batch(const Tensor& x);

}  // namespace rfd::attacks
