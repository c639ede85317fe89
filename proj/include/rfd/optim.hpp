#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rfd/tensor.hpp"

namespace rfd {

/// Heavy-ball SGD: v <- momentum * v + g, p <- p - lr * v.
///
/// `velocity` must be congruent with `params` (zero-initialised by the caller
/// on the first step). Throws std::domain_error before touching anything if a
/// gradient is not finite.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, std::span<Tensor> velocity,
              double lr, double momentum);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-element Adam moments with per-element step counters, so a subset of
/// coordinates can be advanced independently (coordinate-wise Adam).
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::vector<std::int64_t> steps;

  explicit AdamState(std::size_t size = 0) : m(size, 0.0), v(size, 0.0), steps(size, 0) {}
  std::size_t size() const noexcept { return m.size(); }
};

/// Advances every element by one step and returns the additive update.
Tensor adam_step(AdamState& state, const Tensor& grad, const AdamHyper& hyper);

/// Advances only `coords`, with `grads[i]` the gradient for `coords[i]`;
/// writes the additive update for each coordinate into `updates`.
void adam_step_coordinates(AdamState& state, std::span<const std::size_t> coords,
                           std::span<const double> grads, const AdamHyper& hyper,
                           std::span<double> updates);

}  // namespace rfd
