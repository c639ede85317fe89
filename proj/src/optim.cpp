#include "rfd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace rfd {

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, std::span<Tensor> velocity,
              double lr, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw std::invalid_argument("sgd_step: parameter, gradient and velocity counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != velocity[i].shape()) {
      throw std::invalid_argument("sgd_step: parameter " + std::to_string(i) + " has shape " +
                                  to_string(params[i].shape()) + " but gradient " + to_string(grads[i].shape()));
    }
    if (!all_finite(grads[i])) {
      throw std::domain_error("sgd_step: non-finite gradient for parameter " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto v = velocity[i].data();
    auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = momentum * v[k] + g[k];
      p[k] -= lr * v[k];
    }
  }
}

namespace {

double adam_update(AdamState& s, std::size_t i, double g, const AdamHyper& h) {
  s.m[i] = h.beta1 * s.m[i] + (1.0 - h.beta1) * g;
  s.v[i] = h.beta2 * s.v[i] + (1.0 - h.beta2) * g * g;
  const auto t = static_cast<double>(++s.steps[i]);
  const double m_hat = s.m[i] / (1.0 - std::pow(h.beta1, t));
  const double v_hat = s.v[i] / (1.0 - std::pow(h.beta2, t));
  return -h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
}

}  // namespace

Tensor adam_step(AdamState& state, const Tensor& grad, const AdamHyper& hyper) {
  if (grad.size() != state.size()) {
    throw std::invalid_argument("adam_step: state holds " + std::to_string(state.size()) + " elements, gradient " +
                                std::to_string(grad.size()));
  }
  if (!all_finite(grad)) throw std::domain_error("adam_step: non-finite gradient");
  Tensor update(grad.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) update[i] = adam_update(state, i, grad[i], hyper);
  return update;
}

void adam_step_coordinates(AdamState& state, std::span<const std::size_t> coords,
                           std::span<const double> grads, const AdamHyper& hyper,
                           std::span<double> updates) {
  if (coords.size() != grads.size() || coords.size() != updates.size()) {
    throw std::invalid_argument("adam_step_coordinates: coordinate/gradient count mismatch");
  }
  if (!all_finite(grads)) throw std::domain_error("adam_step_coordinates: non-finite gradient");
  for (std::size_t k = 0; k < coords.size(); ++k) {
    if (coords[k] >= state.size()) throw std::out_of_range("adam_step_coordinates: coordinate out of range");
    updates[k] = adam_update(state, coords[k], grads[k], hyper);
  }
}

}  // namespace rfd
