#pragma once

// Tensor-level reverse-mode automatic differentiation.
//
// A Tape records every operation in creation order, so node ids are already
// a topological order and the reverse pass is a single descending sweep.
// Values are stored in a deque; references returned by Var::value() stay
// valid for the life of the tape.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "rfd/kernels.hpp"
#include "rfd/tensor.hpp"

namespace rfd::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Gradients {
 public:
  /// Gradient of the head w.r.t. `v`; zeros if the head does not depend on it.
  const Tensor& operator[](Var v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  const Tape* tape_ = nullptr;
  // Zero gradients are built on first lookup.
  mutable std::map<std::size_t, Tensor> zeros_;
};

class Tape {
 public:
  /// Accumulates the input gradients given the output gradient. Entries of
  /// `grad_inputs` are null for inputs that need no gradient.
  using Backward = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_inputs)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  /// Reverse sweep from a single-element head.
  Gradients backward(Var head) const;

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
};

// Elementwise arithmetic; operands must share a shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var square(Var a);
Var relu(Var a);
Var tanh(Var a);

Var reshape(Var a, Shape shape);
Var sum(Var a);
/// [N, ...] -> [N]
Var row_sum(Var a);

// Layers. Inputs carry a leading batch axis.
Var dense(Var x, Var weight, Var bias);
Var conv2d(Var x, Var weight, Var bias, kernels::Padding padding);
Var maxpool2d(Var x, std::size_t size);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;
};
/// Normalises over every axis but the last using batch statistics; the
/// statistics used are written to `stats` when non-null.
Var batchnorm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats);
Var batchnorm_infer(Var x, Var gamma, Var beta, std::span<const double> running_mean,
                    std::span<const double> running_var, double eps);

/// Row-wise log-softmax of [N, J] logits.
Var log_softmax(Var logits);
/// Mean cross-entropy of [N, J] logits against integer labels.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
/// [N, J] -> [N], picks column `index[n]` of row n.
Var pick(Var a, std::span<const int> index);
/// [N, J] -> [N]: max(max_{i != t} z_i - z_t, -kappa) per row.
Var target_margin(Var logits, std::span<const int> targets, double kappa);

}  // namespace rfd::ad
