#include "rfd/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "rfd/optim.hpp"

namespace rfd {

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train: epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("train: momentum must lie in [0, 1)");
}

TrainReport train(Network& net, const Dataset& train_set, const TrainConfig& cfg, const Dataset* test_set,
                  const ProgressFn& progress) {
  cfg.validate();
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  const std::size_t classes = numel(net.output_shape());
  train_set.validate(classes);

  std::vector<Tensor*> params = net.trainable_parameters();
  std::vector<Tensor> velocity;
  for (const Tensor* p : params) velocity.emplace_back(p->shape());

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;

  TrainReport report;
  double lr = cfg.lr;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(train_set.labels[i]);

      ad::Tape tape;
      std::vector<ad::Var> param_vars;
      ad::Var x = tape.constant(train_set.gather(idx));
      ad::Var logits = net.record_training(tape, x, param_vars);
      ad::Var loss = ad::softmax_cross_entropy(logits, labels);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw std::runtime_error("training diverged: loss is " + std::to_string(lv) + " at epoch " +
                                 std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1));
      }
      ad::Gradients grads = tape.backward(loss);

      std::vector<Tensor> g;
      g.reserve(param_vars.size());
      for (ad::Var v : param_vars) g.push_back(grads[v]);
      std::vector<Tensor> current;
      current.reserve(params.size());
      for (Tensor* p : params) current.push_back(std::move(*p));
      sgd_step(current, g, velocity, lr, cfg.momentum);
      for (std::size_t i = 0; i < params.size(); ++i) *params[i] = std::move(current[i]);

      loss_sum += lv * static_cast<double>(idx.size());
      if (progress) progress(epoch, b, batches, lv);
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    lr *= cfg.lr_decay;
  }
  if (test_set) report.test_accuracy = accuracy(net, *test_set);
  return report;
}

std::vector<int> predict_labels(const Network& net, const Tensor& images, std::size_t chunk) {
  const std::size_t n = images.dim(0);
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    Tensor logits = net.forward(images.slice_rows(begin, end));
    const std::size_t j = logits.size() / (end - begin);
    for (std::size_t r = 0; r < end - begin; ++r) {
      out.push_back(static_cast<int>(argmax(logits.data().subspan(r * j, j))));
    }
  }
  return out;
}

double accuracy(const Network& net, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy of an empty dataset");
  auto pred = predict_labels(net, data.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace rfd
