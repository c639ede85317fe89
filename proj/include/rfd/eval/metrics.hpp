#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rfd/attacks/result.hpp"
#include "rfd/dataset.hpp"

namespace rfd::eval {

/// ASR counts every attempt; the distortion means cover successful runs
/// only and are empty when nothing succeeded.
struct Metrics {
  std::size_t attempts = 0;
  std::size_t successes = 0;
  std::optional<double> asr;  // percent; empty for an empty input
  std::optional<double> mean_l2;
  std::optional<double> mean_l2_squared;
  std::optional<double> mean_seconds;
};

struct Outcome {
  bool success = false;
  double l2 = 0.0;
  double seconds = 0.0;
};

Metrics compute_metrics(std::span<const Outcome> outcomes);
Metrics compute_metrics(std::span<const attacks::AttackResult> results);

/// Batch classifier: [N, ...] -> N labels.
using BatchLabelFn = std::function<std::vector<int>(const Tensor& batch)>;

struct Subset {
  Dataset data;
  std::vector<std::size_t> indices;  // positions in the source test set
  std::size_t consumed = 0;          // test examples looked at
  bool short_of_target = false;
};

/// First n examples, in file order, that `classify` labels correctly.
Subset select_subset(const BatchLabelFn& classify, const Dataset& test_set, std::size_t n, std::size_t chunk = 256);
/// Same, from predictions already computed for the whole test set.
Subset select_subset(std::span<const int> predictions, const Dataset& test_set, std::size_t n);

enum class TargetRule {
  All,   // every class except the true one
  Next,  // (label + 1) mod classes
};

std::vector<int> targets_for(int label, std::size_t num_classes, TargetRule rule);

/// Runs attack(x, label, targets, seed) for every example, where `targets`
/// follows the rule; jobs fan out over `workers` threads and the results
/// come back in (example, target) order whatever the scheduling. A job that
/// throws is counted in `errors` and yields failed results built by `failed`
/// instead of aborting the sweep.
using SweepAttack = std::function<std::vector<attacks::AttackResult>(const Tensor& x, int label,
                                                                     std::span<const int> targets,
                                                                     std::uint64_t seed)>;
using FailedResult = std::function<attacks::AttackResult(const Tensor& x, int label, int target)>;

struct SweepOptions {
  TargetRule rule = TargetRule::All;
  std::size_t num_classes = 10;
  std::size_t workers = 1;
  std::uint64_t seed = 1;
  /// Examples not started once this many seconds have passed are skipped.
  double max_seconds = 0.0;
};

struct SweepOutcome {
  std::vector<attacks::AttackResult> results;
  std::vector<std::size_t> example_of;  // result -> example index in the subset
  std::vector<bool> errored;            // result came from `failed`
  std::size_t errors = 0;
  std::size_t skipped_examples = 0;
};

SweepOutcome targeted_sweep(const SweepAttack& attack, const Dataset& subset, const SweepOptions& opts,
                            const FailedResult& failed);

/// Per-job seed derived from the sweep seed, example index and target.
std::uint64_t job_seed(std::uint64_t seed, std::size_t example, int target);

}  // namespace rfd::eval
