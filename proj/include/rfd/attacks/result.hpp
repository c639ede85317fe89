#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>

#include "rfd/tensor.hpp"

namespace rfd::attacks {

inline constexpr double kBoxLow = -0.5;
inline constexpr double kBoxHigh = 0.5;

/// Zero means "no limit" for each field.
struct Budget {
  std::size_t max_iterations = 0;
  std::size_t max_queries = 0;
  double max_seconds = 0.0;
};

/// Predicted class of one example (no batch axis).
using LabelFn = std::function<int(const Tensor& x)>;

struct AttackResult {
  std::string attack;
  Tensor original;
  Tensor adversarial;
  int true_label = -1;
  std::optional<int> target;
  /// Class the model assigned to `adversarial` when the result was built.
  int predicted = -1;
  bool success = false;
  double l2 = 0.0;
  double l2_squared = 0.0;
  std::size_t queries = 0;
  double seconds = 0.0;
  bool budget_exhausted = false;
};

/// Builds a result whose success flag comes from one fresh query of `verify`
/// rather than from the attack: targeted runs succeed iff the prediction is
/// the target, untargeted runs iff it differs from the true label. Throws
/// std::logic_error if the adversarial leaves [-0.5, 0.5] or changes shape.
AttackResult make_result(std::string attack, const Tensor& original, Tensor adversarial, int true_label,
                         std::optional<int> target, const LabelFn& verify, std::size_t queries, double seconds,
                         bool budget_exhausted = false);

/// True iff `predicted` counts as a success for the given goal.
inline bool is_success(int predicted, int true_label, std::optional<int> target) {
  return target ? predicted == *target : predicted != true_label;
}

bool in_box(const Tensor& x);
void clip_to_box(Tensor& x);

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace rfd::attacks
