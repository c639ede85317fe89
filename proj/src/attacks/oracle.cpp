#include "rfd/attacks/oracle.hpp"

#include <stdexcept>

#include "rfd/kernels.hpp"

namespace rfd::attacks {

namespace {

void check(const Tensor& batch, const Shape& input) {
  if (batch.rank() != input.size() + 1 || !std::equal(input.begin(), input.end(), batch.shape().begin() + 1)) {
    throw std::invalid_argument("oracle input must be [N]" + to_string(input) + ", got " + to_string(batch.shape()));
  }
}

}  // namespace

Tensor as_batch(const Tensor& x) {
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  return x.reshaped(s);
}

Tensor SoftOracle::query(const Tensor& batch) const {
  check(batch, input_shape_);
  count_.fetch_add(batch.dim(0));
  return fn_(batch);
}

std::vector<double> SoftOracle::query_one(const Tensor& x) const {
  const Tensor p = query(as_batch(x));
  return {p.data().begin(), p.data().end()};
}

std::vector<int> LabelOracle::query(const Tensor& batch) const {
  check(batch, input_shape_);
  count_.fetch_add(batch.dim(0));
  return fn_(batch);
}

int LabelOracle::query_one(const Tensor& x) const { return query(as_batch(x)).front(); }

SoftOracle soft_oracle(const Network& net) {
  return SoftOracle(
      [&net](const Tensor& batch) {
        Tensor logits = net.forward(batch);
        const std::size_t n = logits.dim(0), j = logits.size() / n;
        for (std::size_t r = 0; r < n; ++r) {
          auto row = logits.data().subspan(r * j, j);
          const auto p = kernels::softmax(row);
          std::copy(p.begin(), p.end(), row.begin());
        }
        return logits;
      },
      net.input_shape());
}

SoftOracle soft_oracle(const hybrid::HybridModel& model) {
  return SoftOracle([&model](const Tensor& batch) { return model.classify_proba(batch); }, model.input_shape());
}

LabelOracle label_oracle(const Network& net) {
  return LabelOracle(
      [&net](const Tensor& batch) {
        const Tensor logits = net.forward(batch);
        const std::size_t n = logits.dim(0), j = logits.size() / n;
        std::vector<int> out(n);
        for (std::size_t r = 0; r < n; ++r) out[r] = static_cast<int>(argmax(logits.data().subspan(r * j, j)));
        return out;
      },
      net.input_shape());
}

LabelOracle label_oracle(const hybrid::HybridModel& model) {
  return LabelOracle([&model](const Tensor& batch) { return model.classify_labels(batch); },
                     model.input_shape());
}

}  // namespace rfd::attacks
