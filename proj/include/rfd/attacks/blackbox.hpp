#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rfd/attacks/oracle.hpp"
#include "rfd/attacks/result.hpp"
#include "rfd/dataset.hpp"
#include "rfd/network.hpp"
#include "rfd/train.hpp"

namespace rfd::attacks {

struct ZooConfig {
  double kappa = 0.0;
  std::size_t max_iterations = 1500;
  /// Coordinates estimated per iteration.
  std::size_t batch_coordinates = 128;
  double h = 1e-4;
  double learning_rate = 1e-2;
  std::size_t binary_search_steps = 1;
  double initial_const = 10.0;
  bool abort_early = true;
  std::size_t max_queries = 0;
  double max_seconds = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Zeroth-order targeted attack. The loss ||x~ - x||^2 + c * f with
/// f = max(max_{i!=t} log P_i - log P_t, -kappa) is evaluated through the
/// oracle only; every iteration estimates B coordinate derivatives by
/// symmetric differences in tanh space and takes a coordinate-wise Adam
/// step. An iteration costs 2B + 1 queries (the +1 evaluates the current
/// iterate), and one more query verifies the returned example.
AttackResult zoo(const SoftOracle& oracle, const Tensor& x, int true_label, int target, const ZooConfig& cfg);

/// Symmetric-difference estimates (f(x + h e_i) - f(x - h e_i)) / 2h of the
/// log-probability margin f = max(max_{j!=t} log P_j - log P_t, -kappa) for
/// each listed coordinate, at 2 queries per coordinate. On a piecewise
/// constant oracle every coordinate whose +-h move stays inside one cell
/// estimates exactly 0.
std::vector<double> estimate_margin_gradient(const SoftOracle& oracle, const Tensor& x, int target,
                                             std::span<const std::size_t> coords, double h, double kappa = 0.0);

struct BoundaryConfig {
  double delta = 0.1;    // orthogonal step, relative to the current distance
  double epsilon = 1.0;  // contraction step toward the original, relative
  std::size_t candidates = 5;
  std::size_t max_steps = 100;
  /// Proposals in the rolling window that drives the delta adaptation.
  std::size_t window = 30;
  std::size_t max_queries = 0;
  double max_seconds = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Decision-only targeted attack starting from `target_seed`, which the
/// oracle must already place in `target`. Each step draws `candidates`
/// orthogonal perturbations on the sphere around x, and for each one that
/// stays in the target class tries a contraction toward x; the first
/// contraction that stays in the class and strictly reduces the distance is
/// accepted. distance_trace records the distance after every accepted move.
struct BoundaryResult {
  AttackResult result;
  std::vector<double> distance_trace;
};
BoundaryResult boundary_attack(const LabelOracle& oracle, const Tensor& x, int true_label, int target,
                               const Tensor& target_seed, const BoundaryConfig& cfg);

struct SubstituteConfig {
  std::size_t augmentation_rounds = 5;
  double lambda = 0.1;  // sign alternates every round
  std::vector<std::size_t> hidden = {200, 200};
  TrainConfig train{.epochs = 10, .batch_size = 32, .lr = 0.01, .momentum = 0.9, .lr_decay = 1.0, .seed = 1};
  std::size_t num_classes = 10;
  std::size_t max_queries = 0;

  void validate() const;
};

struct SubstituteReport {
  Network model;
  std::size_t dataset_size = 0;
  std::size_t rounds_completed = 0;
  std::size_t queries = 0;
  bool budget_exhausted = false;
};

/// Jacobian-augmented substitute training: label the seeds through the
/// oracle, train, then each round add x + lambda_r * sign(dZ_{label}/dx)
/// computed on the substitute, relabel through the oracle and continue
/// training. The dataset doubles every round.
SubstituteReport train_substitute(const LabelOracle& oracle, const Tensor& seeds, const SubstituteConfig& cfg);

struct TransferSummary {
  double asr = 0.0;  // percent
  std::size_t n = 0;
  std::size_t hits = 0;
  bool empty = true;
};

/// Share of the adversarial examples in `results` that `classify` assigns
/// to their target (or, untargeted, to anything but the true label).
TransferSummary transfer_eval(std::span<const AttackResult> results, const LabelFn& classify);

}  // namespace rfd::attacks
