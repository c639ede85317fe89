#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rfd/dataset.hpp"
#include "rfd/network.hpp"

namespace rfd {

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  /// Multiplies lr after every epoch.
  double lr_decay = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::optional<double> test_accuracy;
};

using ProgressFn = std::function<void(std::size_t epoch, std::size_t batch, std::size_t batches, double loss)>;

/// Mini-batch SGD with momentum on mean softmax cross-entropy. Shuffles with
/// a generator seeded from cfg.seed, so identical inputs give identical
/// parameters. Throws std::runtime_error if the loss stops being finite.
TrainReport train(Network& net, const Dataset& train_set, const TrainConfig& cfg,
                  const Dataset* test_set = nullptr, const ProgressFn& progress = {});

/// Predicted labels for a batch of images, evaluated in chunks.
std::vector<int> predict_labels(const Network& net, const Tensor& images, std::size_t chunk = 256);
double accuracy(const Network& net, const Dataset& data);

}  // namespace rfd
