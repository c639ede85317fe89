#include "rfd/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace rfd {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void expect_shape(const Tensor& t, const Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw std::invalid_argument(std::string(what) + " has shape " + to_string(t.shape()) + ", expected " +
                                to_string(shape));
  }
}

Shape infer_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      overloaded{
          [&](const Conv2d& c) -> Shape {
            if (in.size() != 3 || in[2] != c.in_channels) {
              throw std::invalid_argument("conv2d expects [H, W, " + std::to_string(c.in_channels) + "], got " +
                                          to_string(in));
            }
            expect_shape(c.weight, {c.kernel, c.kernel, c.in_channels, c.out_channels}, "conv2d weight");
            expect_shape(c.bias, {c.out_channels}, "conv2d bias");
            kernels::ConvGeometry g{1, in[0], in[1], in[2], c.kernel, c.out_channels, c.padding};
            if (c.padding == Padding::Valid && (c.kernel > in[0] || c.kernel > in[1])) {
              throw std::invalid_argument("conv2d kernel larger than input " + to_string(in));
            }
            return {g.out_h(), g.out_w(), c.out_channels};
          },
          [&](const Relu&) -> Shape { return in; },
          [&](const MaxPool2d& p) -> Shape {
            if (in.size() != 3 || p.size == 0 || in[0] < p.size || in[1] < p.size) {
              throw std::invalid_argument("maxpool2d cannot pool input " + to_string(in));
            }
            return {in[0] / p.size, in[1] / p.size, in[2]};
          },
          [&](const Flatten&) -> Shape { return {numel(in)}; },
          [&](const Dense& d) -> Shape {
            if (in.size() != 1 || in[0] != d.in_features) {
              throw std::invalid_argument("dense expects [" + std::to_string(d.in_features) + "], got " +
                                          to_string(in));
            }
            expect_shape(d.weight, {d.in_features, d.out_features}, "dense weight");
            expect_shape(d.bias, {d.out_features}, "dense bias");
            return {d.out_features};
          },
          [&](const BatchNorm& b) -> Shape {
            if (in.back() != b.channels) throw std::invalid_argument("batchnorm channel mismatch on " + to_string(in));
            for (const Tensor* t : {&b.gamma, &b.beta, &b.running_mean, &b.running_var}) {
              expect_shape(*t, {b.channels}, "batchnorm parameter");
            }
            return in;
          },
      },
      layer);
}

Shape with_batch(std::size_t n, const Shape& inner) {
  Shape s{n};
  s.insert(s.end(), inner.begin(), inner.end());
  return s;
}

Tensor apply_inference(const Layer& layer, const Tensor& x, const Shape& out_inner) {
  const std::size_t n = x.dim(0);
  Tensor y(with_batch(n, out_inner));
  std::visit(overloaded{
                 [&](const Conv2d& c) {
                   kernels::ConvGeometry g{n, x.dim(1), x.dim(2), x.dim(3), c.kernel, c.out_channels, c.padding};
                   kernels::conv2d_forward(g, x.data(), c.weight.data(), c.bias.data(), y.data());
                 },
                 [&](const Relu&) { kernels::relu_forward(x.data(), y.data()); },
                 [&](const MaxPool2d& p) {
                   kernels::PoolGeometry g{n, x.dim(1), x.dim(2), x.dim(3), p.size};
                   kernels::maxpool_forward(g, x.data(), y.data(), {});
                 },
                 [&](const Flatten&) { std::copy(x.data().begin(), x.data().end(), y.data().begin()); },
                 [&](const Dense& d) {
                   kernels::dense_forward(n, d.in_features, d.out_features, x.data(), d.weight.data(),
                                          d.bias.data(), y.data());
                 },
                 [&](const BatchNorm& b) {
                   const std::size_t c = b.channels, m = x.size() / c;
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       const double inv_std = 1.0 / std::sqrt(b.running_var[ch] + b.eps);
                       const double h = (x[i * c + ch] - b.running_mean[ch]) * inv_std;
                       y[i * c + ch] = b.gamma[ch] * h + b.beta[ch];
                     }
                 },
             },
             layer);
  return y;
}

}  // namespace

const char* layer_name(const Layer& layer) {
  return std::visit(overloaded{
                        [](const Conv2d&) { return "conv2d"; },
                        [](const Relu&) { return "relu"; },
                        [](const MaxPool2d&) { return "maxpool2d"; },
                        [](const Flatten&) { return "flatten"; },
                        [](const Dense&) { return "dense"; },
                        [](const BatchNorm&) { return "batchnorm"; },
                    },
                    layer);
}

Network::Network(Shape input_shape, std::vector<Layer> layers, std::vector<std::size_t> activation_positions)
    : input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      activation_positions_(std::move(activation_positions)) {
  if (input_shape_.empty() || numel(input_shape_) == 0) throw std::invalid_argument("network input shape is empty");
  Shape s = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      s = infer_shape(layers_[i], s);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("layer " + std::to_string(i) + " (" + layer_name(layers_[i]) + "): " + e.what());
    }
    layer_shapes_.push_back(s);
  }
  for (std::size_t k = 0; k < activation_positions_.size(); ++k) {
    if (activation_positions_[k] >= layers_.size()) {
      throw std::invalid_argument("activation " + std::to_string(k + 1) + " points past the last layer");
    }
    if (k > 0 && activation_positions_[k] <= activation_positions_[k - 1]) {
      throw std::invalid_argument("activation positions must be strictly increasing");
    }
  }
}

const Shape& Network::activation_shape(std::size_t activation) const {
  if (activation < 1 || activation > num_activations()) {
    throw std::out_of_range("activation " + std::to_string(activation) + " outside [1, " +
                            std::to_string(num_activations()) + "]");
  }
  return layer_shapes_[activation_positions_[activation - 1]];
}

void Network::check_batch(const Tensor& batch) const {
  const bool ok = batch.rank() == input_shape_.size() + 1 &&
                  std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1);
  if (!ok) {
    throw std::invalid_argument("network input must be [N]" + to_string(input_shape_) + ", got " +
                                to_string(batch.shape()));
  }
}

Tensor Network::run_layers(std::size_t begin, std::size_t end, Tensor x) const {
  for (std::size_t i = begin; i < end; ++i) x = apply_inference(layers_[i], x, layer_shapes_[i]);
  return x;
}

Tensor Network::forward(const Tensor& batch) const {
  check_batch(batch);
  return run_layers(0, layers_.size(), batch);
}

Tensor Network::forward_one(const Tensor& x) const {
  if (x.shape() != input_shape_) {
    throw std::invalid_argument("network input must be " + to_string(input_shape_) + ", got " + to_string(x.shape()));
  }
  Tensor out = forward(x.reshaped(with_batch(1, input_shape_)));
  return std::move(out).reshaped(output_shape());
}

Tensor Network::tap(std::size_t activation, const Tensor& batch) const {
  const Shape& shape = activation_shape(activation);
  check_batch(batch);
  const std::size_t n = batch.dim(0);
  return run_layers(0, activation_positions_[activation - 1] + 1, batch).reshaped({n, numel(shape)});
}

std::vector<Tensor> Network::activations(const Tensor& batch) const {
  check_batch(batch);
  const std::size_t n = batch.dim(0);
  std::vector<Tensor> out;
  Tensor x = batch;
  std::size_t next = 0;
  for (std::size_t i = 0; i < layers_.size() && next < activation_positions_.size(); ++i) {
    x = apply_inference(layers_[i], x, layer_shapes_[i]);
    if (i == activation_positions_[next]) {
      out.push_back(x.reshaped({n, numel(layer_shapes_[i])}));
      ++next;
    }
  }
  return out;
}

Tensor Network::forward_from(std::size_t activation, const Tensor& tapped) const {
  const Shape& shape = activation_shape(activation);
  if (tapped.rank() != 2 || tapped.dim(1) != numel(shape)) {
    throw std::invalid_argument("tapped batch must be [N, " + std::to_string(numel(shape)) + "], got " +
                                to_string(tapped.shape()));
  }
  const std::size_t pos = activation_positions_[activation - 1];
  return run_layers(pos + 1, layers_.size(), tapped.reshaped(with_batch(tapped.dim(0), shape)));
}

Network Network::prefix(std::size_t activation) const {
  activation_shape(activation);
  const std::size_t pos = activation_positions_[activation - 1];
  std::vector<Layer> layers(layers_.begin(), layers_.begin() + static_cast<std::ptrdiff_t>(pos + 1));
  std::vector<std::size_t> acts(activation_positions_.begin(),
                                activation_positions_.begin() + static_cast<std::ptrdiff_t>(activation));
  return Network(input_shape_, std::move(layers), std::move(acts));
}

ad::Var Network::record(ad::Tape& tape, ad::Var input) const {
  check_batch(input.value());
  ad::Var x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = std::visit(overloaded{
                       [&](const Conv2d& c) {
                         return ad::conv2d(x, tape.constant(c.weight), tape.constant(c.bias), c.padding);
                       },
                       [&](const Relu&) { return ad::relu(x); },
                       [&](const MaxPool2d& p) { return ad::maxpool2d(x, p.size); },
                       [&](const Flatten&) { return ad::reshape(x, with_batch(x.shape()[0], layer_shapes_[i])); },
                       [&](const Dense& d) {
                         return ad::dense(x, tape.constant(d.weight), tape.constant(d.bias));
                       },
                       [&](const BatchNorm& b) {
                         return ad::batchnorm_infer(x, tape.constant(b.gamma), tape.constant(b.beta),
                                                    b.running_mean.data(), b.running_var.data(), b.eps);
                       },
                   },
                   layers_[i]);
  }
  return x;
}

ad::Var Network::record_training(ad::Tape& tape, ad::Var input, std::vector<ad::Var>& params) {
  check_batch(input.value());
  ad::Var x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = std::visit(overloaded{
                       [&](Conv2d& c) {
                         ad::Var w = tape.variable(c.weight), b = tape.variable(c.bias);
                         params.push_back(w);
                         params.push_back(b);
                         return ad::conv2d(x, w, b, c.padding);
                       },
                       [&](Relu&) { return ad::relu(x); },
                       [&](MaxPool2d& p) { return ad::maxpool2d(x, p.size); },
                       [&](Flatten&) { return ad::reshape(x, with_batch(x.shape()[0], layer_shapes_[i])); },
                       [&](Dense& d) {
                         ad::Var w = tape.variable(d.weight), b = tape.variable(d.bias);
                         params.push_back(w);
                         params.push_back(b);
                         return ad::dense(x, w, b);
                       },
                       [&](BatchNorm& b) {
                         ad::Var g = tape.variable(b.gamma), be = tape.variable(b.beta);
                         params.push_back(g);
                         params.push_back(be);
                         ad::BatchStats stats;
                         ad::Var y = ad::batchnorm_train(x, g, be, b.eps, &stats);
                         const double m = static_cast<double>(x.value().size() / b.channels);
                         const double unbias = m > 1 ? m / (m - 1) : 1.0;
                         for (std::size_t ch = 0; ch < b.channels; ++ch) {
                           b.running_mean[ch] = (1 - b.momentum) * b.running_mean[ch] + b.momentum * stats.mean[ch];
                           b.running_var[ch] =
                               (1 - b.momentum) * b.running_var[ch] + b.momentum * stats.var[ch] * unbias;
                         }
                         return y;
                       },
                   },
                   layers_[i]);
  }
  return x;
}

Tensor Network::input_gradient(const Tensor& batch, const Head& head) const {
  ad::Tape tape;
  ad::Var x = tape.variable(batch);
  ad::Var out = record(tape, x);
  ad::Var h = head(out);
  return tape.backward(h)[x];
}

std::vector<Tensor*> Network::trainable_parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    std::visit(overloaded{
                   [&](Conv2d& c) { out.insert(out.end(), {&c.weight, &c.bias}); },
                   [&](Dense& d) { out.insert(out.end(), {&d.weight, &d.bias}); },
                   [&](BatchNorm& b) { out.insert(out.end(), {&b.gamma, &b.beta}); },
                   [](auto&) {},
               },
               layer);
  }
  return out;
}

std::vector<const Tensor*> Network::trainable_parameters() const {
  auto mutable_ptrs = const_cast<Network*>(this)->trainable_parameters();
  return {mutable_ptrs.begin(), mutable_ptrs.end()};
}

namespace {

void init_uniform(Tensor& t, std::size_t fan_in, Init init, std::mt19937_64& rng) {
  if (init == Init::Zeros) {
    t.fill(0.0);
    return;
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.data()) v = dist(rng);
}

Conv2d make_conv(std::size_t k, std::size_t in, std::size_t out, Init init, std::mt19937_64& rng) {
  Conv2d c{k, in, out, Padding::Valid, Tensor({k, k, in, out}), Tensor({out})};
  init_uniform(c.weight, k * k * in, init, rng);
  return c;
}

Dense make_dense(std::size_t in, std::size_t out, Init init, std::mt19937_64& rng) {
  Dense d{in, out, Tensor({in, out}), Tensor({out})};
  init_uniform(d.weight, in, init, rng);
  return d;
}

}  // namespace

Network build_mnistnet(std::uint64_t seed, Init init) {
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  layers.emplace_back(make_conv(3, 1, 32, init, rng));    // 0
  layers.emplace_back(Relu{});                            // 1  activation 1
  layers.emplace_back(make_conv(3, 32, 32, init, rng));   // 2
  layers.emplace_back(Relu{});                            // 3
  layers.emplace_back(MaxPool2d{2});                      // 4  activation 2
  layers.emplace_back(make_conv(3, 32, 64, init, rng));   // 5
  layers.emplace_back(Relu{});                            // 6  activation 3
  layers.emplace_back(make_conv(3, 64, 64, init, rng));   // 7
  layers.emplace_back(Relu{});                            // 8
  layers.emplace_back(MaxPool2d{2});                      // 9  activation 4
  layers.emplace_back(Flatten{});                         // 10
  layers.emplace_back(make_dense(1024, 200, init, rng));  // 11
  layers.emplace_back(Relu{});                            // 12 activation 5
  layers.emplace_back(make_dense(200, 200, init, rng));   // 13
  layers.emplace_back(Relu{});                            // 14 activation 6
  layers.emplace_back(make_dense(200, 10, init, rng));    // 15 activation 7 (logits)
  return Network({28, 28, 1}, std::move(layers), {1, 4, 6, 9, 12, 14, 15});
}

Network build_mlp(const Shape& input_shape, const std::vector<std::size_t>& sizes, std::uint64_t seed, Init init) {
  if (sizes.size() < 2 || sizes.front() != numel(input_shape)) {
    throw std::invalid_argument("mlp sizes must start with the flattened input size");
  }
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  std::vector<std::size_t> acts;
  if (input_shape.size() != 1) layers.emplace_back(Flatten{});
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    layers.emplace_back(make_dense(sizes[i], sizes[i + 1], init, rng));
    if (i + 2 < sizes.size()) layers.emplace_back(Relu{});
    acts.push_back(layers.size() - 1);
  }
  return Network(input_shape, std::move(layers), std::move(acts));
}

}  // namespace rfd
