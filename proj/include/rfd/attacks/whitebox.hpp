#pragma once

// Gradient-based attacks. They accept only models satisfying Differentiable;
// a HybridModel does not, so these calls do not compile against it.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rfd/attacks/result.hpp"
#include "rfd/network.hpp"

namespace rfd::attacks {

/// Type-erased reference to a differentiable model. Only constructible from
/// a Differentiable type.
class GradientView {
 public:
  template <Differentiable M>
  explicit GradientView(const M& model)
      : record_([&model](ad::Tape& t, ad::Var v) { return model.record(t, v); }),
        forward_([&model](const Tensor& x) { return model.forward(x); }),
        input_shape_(model.input_shape()) {}

  ad::Var record(ad::Tape& tape, ad::Var input) const { return record_(tape, input); }
  Tensor forward(const Tensor& batch) const { return forward_(batch); }
  const Shape& input_shape() const noexcept { return input_shape_; }

  /// Argmax of the logits of a single example.
  int label(const Tensor& x) const;

 private:
  std::function<ad::Var(ad::Tape&, ad::Var)> record_;
  std::function<Tensor(const Tensor&)> forward_;
  Shape input_shape_;
};

struct CwConfig {
  double kappa = 0.0;
  std::size_t binary_search_steps = 9;
  double initial_const = 1e-3;
  std::size_t max_iterations = 1000;
  double learning_rate = 1e-2;
  bool abort_early = true;
  /// Wall-clock limit for the whole call; 0 disables it.
  double max_seconds = 0.0;

  void validate() const;
};

namespace detail {
std::vector<AttackResult> cw_l2_batch(const GradientView& model, const Tensor& x, int true_label,
                                      std::span<const int> targets, const CwConfig& cfg);
Tensor fgsm_batch(const GradientView& model, const Tensor& batch, std::span<const int> labels, double eps,
                  bool targeted);
}  // namespace detail

/// Targeted C&W L2 on one example against every class in `targets`,
/// optimised jointly as one batch (rows are independent). Minimises
/// ||x~ - x||^2 + c * max(max_{i!=t} Z_i - Z_t, -kappa) with x~ = tanh(w)/2,
/// binary-searching c per target.
template <Differentiable M>
std::vector<AttackResult> cw_l2(const M& model, const Tensor& x, int true_label, std::span<const int> targets,
                                const CwConfig& cfg = {}) {
  return detail::cw_l2_batch(GradientView(model), x, true_label, targets, cfg);
}

template <Differentiable M>
AttackResult cw_l2(const M& model, const Tensor& x, int true_label, int target, const CwConfig& cfg = {}) {
  const int t[] = {target};
  return std::move(detail::cw_l2_batch(GradientView(model), x, true_label, t, cfg).front());
}

/// Fast gradient sign step on a batch: untargeted moves up the cross-entropy
/// of `labels`, targeted moves down the cross-entropy of the targets in
/// `labels`. The result is clipped to the box.
template <Differentiable M>
Tensor fgsm(const M& model, const Tensor& batch, std::span<const int> labels, double eps, bool targeted = false) {
  return detail::fgsm_batch(GradientView(model), batch, labels, eps, targeted);
}

/// Single-example FGSM wrapped as a verified result.
template <Differentiable M>
AttackResult fgsm(const M& model, const Tensor& x, int true_label, double eps, std::optional<int> target = {}) {
  const GradientView view(model);
  Stopwatch clock;
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  const int label[] = {target.value_or(true_label)};
  Tensor adv = detail::fgsm_batch(view, x.reshaped(s), label, eps, target.has_value()).reshaped(x.shape());
  return make_result("fgsm", x, std::move(adv), true_label, target,
                     [&view](const Tensor& a) { return view.label(a); }, 1, clock.seconds());
}

}  // namespace rfd::attacks
