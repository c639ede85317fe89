#include "rfd/attacks/result.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rfd::attacks {

bool in_box(const Tensor& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](double v) { return v >= kBoxLow && v <= kBoxHigh; });
}

void clip_to_box(Tensor& x) {
  for (double& v : x.data()) v = std::clamp(v, kBoxLow, kBoxHigh);
}

AttackResult make_result(std::string attack, const Tensor& original, Tensor adversarial, int true_label,
                         std::optional<int> target, const LabelFn& verify, std::size_t queries, double seconds,
                         bool budget_exhausted) {
  if (adversarial.shape() != original.shape()) {
    throw std::logic_error(attack + ": adversarial shape " + to_string(adversarial.shape()) +
                           " differs from the original " + to_string(original.shape()));
  }
  if (!in_box(adversarial) || !all_finite(adversarial)) {
    throw std::logic_error(attack + ": adversarial example leaves the [-0.5, 0.5] box");
  }
  AttackResult r;
  r.attack = std::move(attack);
  r.original = original;
  r.true_label = true_label;
  r.target = target;
  r.predicted = verify(adversarial);
  r.success = is_success(r.predicted, true_label, target);
  r.l2_squared = squared_l2_distance(original.data(), adversarial.data());
  r.l2 = std::sqrt(r.l2_squared);
  r.adversarial = std::move(adversarial);
  r.queries = queries;
  r.seconds = seconds;
  r.budget_exhausted = budget_exhausted;
  return r;
}

}  // namespace rfd::attacks
