#pragma once

#include <concepts>
#include <cstdint>
#include <functional>
#include <variant>
#include <vector>

#include "rfd/autodiff.hpp"
#include "rfd/kernels.hpp"
#include "rfd/tensor.hpp"

namespace rfd {

using kernels::Padding;

struct Conv2d {
  std::size_t kernel = 3;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Padding padding = Padding::Valid;
  Tensor weight;  // [k, k, in, out]
  Tensor bias;    // [out]
};

struct Dense {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct Relu {};

struct MaxPool2d {
  std::size_t size = 2;
};

struct Flatten {};

/// Per-channel normalisation over the trailing axis. Running statistics are
/// buffers updated in training mode and frozen for inference.
struct BatchNorm {
  std::size_t channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
};

using Layer = std::variant<Conv2d, Relu, MaxPool2d, Flatten, Dense, BatchNorm>;

const char* layer_name(const Layer& layer);

/// A feed-forward stack of layers with an explicit activation index.
///
/// Activation k (1-based) is the output of layer `activation_positions()[k-1]`.
/// Inputs to forward() and friends carry a leading batch axis; per-example
/// shapes never include it.
class Network {
 public:
  Network(Shape input_shape, std::vector<Layer> layers, std::vector<std::size_t> activation_positions);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const { return layer_shapes_.empty() ? input_shape_ : layer_shapes_.back(); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const std::vector<std::size_t>& activation_positions() const noexcept { return activation_positions_; }
  std::size_t num_activations() const noexcept { return activation_positions_.size(); }
  /// Per-example shape of activation k.
  const Shape& activation_shape(std::size_t activation) const;

  Tensor forward(const Tensor& batch) const;
  /// Single example without batch axis.
  Tensor forward_one(const Tensor& x) const;

  /// Flattened [N, d_k] output of activation k.
  Tensor tap(std::size_t activation, const Tensor& batch) const;
  /// Every activation, flattened, in activation order.
  std::vector<Tensor> activations(const Tensor& batch) const;
  /// Runs the layers after activation k on a flattened tapped batch.
  Tensor forward_from(std::size_t activation, const Tensor& tapped) const;
  /// Layers up to and including activation k.
  Network prefix(std::size_t activation) const;

  /// Records the inference-mode graph; parameters enter the tape as constants.
  ad::Var record(ad::Tape& tape, ad::Var input) const;
  /// Records the training-mode graph with parameters as tape variables
  /// (appended to `params` in trainable_parameters() order). Batch-norm
  /// running statistics are updated as a side effect.
  ad::Var record_training(ad::Tape& tape, ad::Var input, std::vector<ad::Var>& params);

  using Head = std::function<ad::Var(ad::Var output)>;
  /// d head(forward(batch)) / d batch; the head must reduce to one value.
  Tensor input_gradient(const Tensor& batch, const Head& head) const;

  std::vector<Tensor*> trainable_parameters();
  std::vector<const Tensor*> trainable_parameters() const;

 private:
  void check_batch(const Tensor& batch) const;
  Tensor run_layers(std::size_t begin, std::size_t end, Tensor x) const;

  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> layer_shapes_;
  std::vector<std::size_t> activation_positions_;
};

/// Models that expose input gradients. Attacks that need gradients accept
/// only types satisfying this.
template <class M>
concept Differentiable = requires(const M& m, ad::Tape& tape, ad::Var v, const Tensor& x,
                                  const Network::Head& head) {
  { m.record(tape, v) } -> std::same_as<ad::Var>;
  { m.input_gradient(x, head) } -> std::same_as<Tensor>;
  { m.forward(x) } -> std::same_as<Tensor>;
};

static_assert(Differentiable<Network>);

enum class Init { HeUniform, Zeros };

/// conv32-3x3, ReLU, conv32-3x3, ReLU, pool2, conv64-3x3, ReLU, conv64-3x3,
/// ReLU, pool2, fc200, ReLU, fc200, ReLU, fc10 on 28x28x1 inputs.
///
/// Seven activations: the six ReLU outputs (a pool is folded into the ReLU
/// that feeds it) and the logits.
Network build_mnistnet(std::uint64_t seed, Init init = Init::HeUniform);

/// Fully connected classifier: sizes = {in, hidden..., classes}, ReLU
/// between dense layers; each ReLU output and the logits are activations.
Network build_mlp(const Shape& input_shape, const std::vector<std::size_t>& sizes, std::uint64_t seed,
                  Init init = Init::HeUniform);

}  // namespace rfd
