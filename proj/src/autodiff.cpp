#include "rfd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace rfd::ad {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value(id_);
}

const Tensor& Gradients::operator[](Var v) const {
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
  if (v.tape() != tape_ || v.id() >= tape_->size())
    throw std::out_of_range("Var does not belong to this gradient set");
  auto [it, inserted] = zeros_.try_emplace(v.id());
  if (inserted) it->second = Tensor(tape_->value(v.id()).shape());
  return it->second;
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  for (Var in : inputs) {
    if (in.tape() != this) throw std::logic_error("operation mixes Vars from different tapes");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var head) const {
  if (head.tape() != this) throw std::logic_error("backward on a Var from another tape");
  const Node& h = nodes_[head.id()];
  if (h.value.size() != 1) {
    throw std::invalid_argument("backward needs a scalar head, got shape " + to_string(h.value.shape()));
  }
  Gradients out;
  out.grads_.resize(head.id() + 1);
  out.tape_ = this;
  out.grads_[head.id()] = Tensor(h.value.shape(), 1.0);

  std::vector<Tensor*> ptrs;
  for (std::size_t id = head.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.requires_grad || !node.backward || out.grads_[id].empty()) continue;
    ptrs.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (out.grads_[in].empty()) out.grads_[in] = Tensor(nodes_[in].value.shape());
      ptrs[k] = &out.grads_[in];
    }
    node.backward(out.grads_[id], ptrs);
    if (!node.inputs.empty()) out.grads_[id] = Tensor();  // interior gradients are not kept
  }
  return out;
}

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

std::size_t rows_of(const Tensor& t) { return t.dim(0); }

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor v(a.shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  return a.tape()->record(std::move(v), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (Tensor* t : gi) {
      if (!t) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor v(a.shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
  return a.tape()->record(std::move(v), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    if (gi[1]) for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor v(a.shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  Tape* tape = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape->record(std::move(v), {a, b}, [tape, ia, ib](const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& av = tape->value(ia);
    const Tensor& bv = tape->value(ib);
    if (gi[0]) for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bv[i];
    if (gi[1]) for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * av[i];
  });
}

Var scale(Var a, double factor) {
  Tensor v = map(a.value(), [factor](double x) { return x * factor; });
  return a.tape()->record(std::move(v), {a}, [factor](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * factor;
  });
}

Var square(Var a) {
  Tensor v = map(a.value(), [](double x) { return x * x; });
  Tape* tape = a.tape();
  const std::size_t ia = a.id();
  return tape->record(std::move(v), {a}, [tape, ia](const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& av = tape->value(ia);
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += 2.0 * av[i] * g[i];
  });
}

Var relu(Var a) {
  Tensor v(a.shape());
  kernels::relu_forward(a.value().data(), v.data());
  Tape* tape = a.tape();
  const std::size_t ia = a.id();
  return tape->record(std::move(v), {a}, [tape, ia](const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& av = tape->value(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) (*gi[0])[i] += g[i];
    }
  });
}

Var tanh(Var a) {
  Tensor v = map(a.value(), [](double x) { return std::tanh(x); });
  Tensor factor = map(v, [](double y) { return 1.0 - y * y; });
  return a.tape()->record(std::move(v), {a},
                          [factor = std::move(factor)](const Tensor& g, std::span<Tensor* const> gi) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * factor[i];
                          });
}

Var reshape(Var a, Shape shape) {
  Tensor v = a.value().reshaped(std::move(shape));
  return a.tape()->record(std::move(v), {a}, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.tape()->record(Tensor::scalar(s), {a}, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (double& x : gi[0]->data()) x += g[0];
  });
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  const std::size_t n = rows_of(av), stride = av.size() / n;
  Tensor v({n});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < stride; ++j) s += av[r * stride + j];
    v[r] = s;
  }
  return a.tape()->record(std::move(v), {a}, [stride](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t r = 0; r < g.size(); ++r)
      for (std::size_t j = 0; j < stride; ++j) (*gi[0])[r * stride + j] += g[r];
  });
}

Var dense(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0) || bias.value().size() != wv.dim(1)) {
    throw std::invalid_argument("dense: input " + to_string(xv.shape()) + " incompatible with weight " +
                                to_string(wv.shape()));
  }
  const std::size_t n = xv.dim(0), in = wv.dim(0), out = wv.dim(1);
  Tensor y({n, out});
  kernels::dense_forward(n, in, out, xv.data(), wv.data(), bias.value().data(), y.data());
  Tape* tape = x.tape();
  const std::size_t ix = x.id(), iw = weight.id();
  return tape->record(std::move(y), {x, weight, bias},
                      [tape, ix, iw, n, in, out](const Tensor& g, std::span<Tensor* const> gi) {
                        kernels::dense_backward(n, in, out, tape->value(ix).data(), tape->value(iw).data(),
                                                g.data(), gi[0] ? gi[0]->data() : std::span<double>{},
                                                gi[1] ? gi[1]->data() : std::span<double>{},
                                                gi[2] ? gi[2]->data() : std::span<double>{});
                      });
}

Var conv2d(Var x, Var weight, Var bias, kernels::Padding padding) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(0) != wv.dim(1) || wv.dim(2) != xv.dim(3)) {
    throw std::invalid_argument("conv2d: input " + to_string(xv.shape()) + " incompatible with weight " +
                                to_string(wv.shape()));
  }
  kernels::ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(3), padding};
  Tensor y({geo.batch, geo.out_h(), geo.out_w(), geo.out_c});
  kernels::conv2d_forward(geo, xv.data(), wv.data(), bias.value().data(), y.data());
  Tape* tape = x.tape();
  const std::size_t ix = x.id(), iw = weight.id();
  return tape->record(std::move(y), {x, weight, bias},
                      [tape, ix, iw, geo](const Tensor& g, std::span<Tensor* const> gi) {
                        kernels::conv2d_backward(geo, tape->value(ix).data(), tape->value(iw).data(), g.data(),
                                                 gi[0] ? gi[0]->data() : std::span<double>{},
                                                 gi[1] ? gi[1]->data() : std::span<double>{},
                                                 gi[2] ? gi[2]->data() : std::span<double>{});
                      });
}

Var maxpool2d(Var x, std::size_t size) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw std::invalid_argument("maxpool2d: expects NHWC input, got " + to_string(xv.shape()));
  kernels::PoolGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), size};
  Tensor y({geo.batch, geo.out_h(), geo.out_w(), geo.channels});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(y.size());
  kernels::maxpool_forward(geo, xv.data(), y.data(), *argmax);
  return x.tape()->record(std::move(y), {x}, [argmax](const Tensor& g, std::span<Tensor* const> gi) {
    kernels::maxpool_backward(*argmax, g.data(), gi[0]->data());
  });
}

Var batchnorm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.shape().back();
  const std::size_t m = xv.size() / c;
  if (gamma.value().size() != c || beta.value().size() != c) throw std::invalid_argument("batchnorm: channel mismatch");
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += xv[i * c + ch];
  for (auto& v : mean) v /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double d = xv[i * c + ch] - mean[ch];
      var[ch] += d * d;
    }
  for (auto& v : var) v /= static_cast<double>(m);

  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  for (std::size_t ch = 0; ch < c; ++ch) (*inv_std)[ch] = 1.0 / std::sqrt(var[ch] + eps);
  Tensor y(xv.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double h = (xv[i * c + ch] - mean[ch]) * (*inv_std)[ch];
      (*xhat)[i * c + ch] = h;
      y[i * c + ch] = gv[ch] * h + bv[ch];
    }
  if (stats) *stats = BatchStats{mean, var};

  Tape* tape = x.tape();
  const std::size_t ig = gamma.id();
  return tape->record(std::move(y), {x, gamma, beta},
                      [tape, ig, xhat, inv_std, m, c](const Tensor& g, std::span<Tensor* const> gi) {
                        const Tensor& gam = tape->value(ig);
                        std::vector<double> sum_g(c, 0.0), sum_gh(c, 0.0);
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            sum_g[ch] += g[i * c + ch];
                            sum_gh[ch] += g[i * c + ch] * (*xhat)[i * c + ch];
                          }
                        if (gi[1]) for (std::size_t ch = 0; ch < c; ++ch) (*gi[1])[ch] += sum_gh[ch];
                        if (gi[2]) for (std::size_t ch = 0; ch < c; ++ch) (*gi[2])[ch] += sum_g[ch];
                        if (gi[0]) {
                          const double md = static_cast<double>(m);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t ch = 0; ch < c; ++ch) {
                              const double h = (*xhat)[i * c + ch];
                              (*gi[0])[i * c + ch] += gam[ch] * (*inv_std)[ch] / md *
                                                      (md * g[i * c + ch] - sum_g[ch] - h * sum_gh[ch]);
                            }
                        }
                      });
}

Var batchnorm_infer(Var x, Var gamma, Var beta, std::span<const double> running_mean,
                    std::span<const double> running_var, double eps) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.shape().back();
  const std::size_t m = xv.size() / c;
  if (gamma.value().size() != c || running_mean.size() != c || running_var.size() != c) {
    throw std::invalid_argument("batchnorm: channel mismatch");
  }
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  for (std::size_t ch = 0; ch < c; ++ch) (*inv_std)[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
  Tensor y(xv.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double h = (xv[i * c + ch] - running_mean[ch]) * (*inv_std)[ch];
      (*xhat)[i * c + ch] = h;
      y[i * c + ch] = gv[ch] * h + bv[ch];
    }
  Tape* tape = x.tape();
  const std::size_t ig = gamma.id();
  return tape->record(std::move(y), {x, gamma, beta},
                      [tape, ig, xhat, inv_std, m, c](const Tensor& g, std::span<Tensor* const> gi) {
                        const Tensor& gam = tape->value(ig);
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            const double gv = g[i * c + ch];
                            if (gi[0]) (*gi[0])[i * c + ch] += gv * gam[ch] * (*inv_std)[ch];
                            if (gi[1]) (*gi[1])[ch] += gv * (*xhat)[i * c + ch];
                            if (gi[2]) (*gi[2])[ch] += gv;
                          }
                      });
}

Var log_softmax(Var logits) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw std::invalid_argument("log_softmax: expects [N, J], got " + to_string(z.shape()));
  const std::size_t n = z.dim(0), j = z.dim(1);
  Tensor out(z.shape());
  kernels::log_softmax_rows(n, j, z.data(), out.data());
  auto probs = std::make_shared<Tensor>(map(out, [](double v) { return std::exp(v); }));
  return logits.tape()->record(std::move(out), {logits},
                               [probs, n, j](const Tensor& g, std::span<Tensor* const> gi) {
                                 for (std::size_t r = 0; r < n; ++r) {
                                   double gs = 0.0;
                                   for (std::size_t k = 0; k < j; ++k) gs += g[r * j + k];
                                   for (std::size_t k = 0; k < j; ++k)
                                     (*gi[0])[r * j + k] += g[r * j + k] - (*probs)[r * j + k] * gs;
                                 }
                               });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || labels.size() != z.dim(0)) {
    throw std::invalid_argument("softmax_cross_entropy: logits " + to_string(z.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = z.dim(0), j = z.dim(1);
  Tensor logp(z.shape());
  kernels::log_softmax_rows(n, j, z.data(), logp.data());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= j) throw std::invalid_argument("label out of range");
    loss -= logp[r * j + static_cast<std::size_t>(y)];
  }
  loss /= static_cast<double>(n);
  std::vector<int> ys(labels.begin(), labels.end());
  auto lp = std::make_shared<Tensor>(std::move(logp));
  return logits.tape()->record(Tensor::scalar(loss), {logits},
                               [lp, ys = std::move(ys), n, j](const Tensor& g, std::span<Tensor* const> gi) {
                                 const double s = g[0] / static_cast<double>(n);
                                 for (std::size_t r = 0; r < n; ++r)
                                   for (std::size_t k = 0; k < j; ++k) {
                                     const double p = std::exp((*lp)[r * j + k]);
                                     const double t = static_cast<std::size_t>(ys[r]) == k ? 1.0 : 0.0;
                                     (*gi[0])[r * j + k] += s * (p - t);
                                   }
                               });
}

Var pick(Var a, std::span<const int> index) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || index.size() != av.dim(0)) throw std::invalid_argument("pick: shape mismatch");
  const std::size_t n = av.dim(0), j = av.dim(1);
  Tensor out({n});
  std::vector<std::size_t> idx(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= j) throw std::invalid_argument("pick: index out of range");
    idx[r] = static_cast<std::size_t>(index[r]);
    out[r] = av[r * j + idx[r]];
  }
  return a.tape()->record(std::move(out), {a}, [idx = std::move(idx), j](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t r = 0; r < idx.size(); ++r) (*gi[0])[r * j + idx[r]] += g[r];
  });
}

Var target_margin(Var logits, std::span<const int> targets, double kappa) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || targets.size() != z.dim(0) || z.dim(1) < 2) {
    throw std::invalid_argument("target_margin: logits " + to_string(z.shape()) + " vs targets");
  }
  const std::size_t n = z.dim(0), j = z.dim(1);
  Tensor out({n});
  // Per row: (other class index, target index) or no gradient when clamped at -kappa.
  std::vector<std::pair<std::size_t, std::size_t>> active;
  active.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto t = static_cast<std::size_t>(targets[r]);
    if (targets[r] < 0 || t >= j) throw std::invalid_argument("target_margin: target out of range");
    std::size_t other = t == 0 ? 1 : 0;
    for (std::size_t k = 0; k < j; ++k) {
      if (k != t && z[r * j + k] > z[r * j + other]) other = k;
    }
    const double m = z[r * j + other] - z[r * j + t];
    if (m > -kappa) {
      out[r] = m;
      active.emplace_back(other, t);
    } else {
      out[r] = -kappa;
      active.emplace_back(j, j);
    }
  }
  return logits.tape()->record(std::move(out), {logits},
                               [active = std::move(active), j](const Tensor& g, std::span<Tensor* const> gi) {
                                 for (std::size_t r = 0; r < active.size(); ++r) {
                                   if (active[r].first == j) continue;
                                   (*gi[0])[r * j + active[r].first] += g[r];
                                   (*gi[0])[r * j + active[r].second] -= g[r];
                                 }
                               });
}

}  // namespace rfd::ad
