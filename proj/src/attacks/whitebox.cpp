#include "rfd/attacks/whitebox.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "rfd/optim.hpp"

namespace rfd::attacks {

int GradientView::label(const Tensor& x) const {
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  const Tensor z = forward(x.reshaped(s));
  return static_cast<int>(argmax(z.data()));
}

void CwConfig::validate() const {
  if (kappa < 0.0) throw std::invalid_argument("cw: kappa must be >= 0");
  if (binary_search_steps == 0) throw std::invalid_argument("cw: binary_search_steps must be >= 1");
  if (!(initial_const > 0.0)) throw std::invalid_argument("cw: initial_const must be > 0");
  if (max_iterations == 0) throw std::invalid_argument("cw: max_iterations must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("cw: learning_rate must be > 0");
}

namespace detail {

namespace {

Tensor repeat_rows(const Tensor& x, std::size_t n) {
  Shape s{n};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  Tensor out(s);
  const std::size_t d = x.size();
  for (std::size_t r = 0; r < n; ++r) std::copy(x.data().begin(), x.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  return out;
}

// Target wins after its logit is handicapped by kappa.
bool reaches_target(std::span<const double> z, int target, double kappa) {
  std::vector<double> adj(z.begin(), z.end());
  adj[static_cast<std::size_t>(target)] -= kappa;
  return static_cast<int>(argmax(adj)) == target;
}

void check_input(const GradientView& model, const Tensor& x) {
  if (x.shape() != model.input_shape()) {
    throw std::invalid_argument("attack input must be " + to_string(model.input_shape()) + ", got " +
                                to_string(x.shape()));
  }
}

}  // namespace

std::vector<AttackResult> cw_l2_batch(const GradientView& model, const Tensor& x, int true_label,
                                      std::span<const int> targets, const CwConfig& cfg) {
  cfg.validate();
  check_input(model, x);
  if (targets.empty()) return {};
  Stopwatch clock;
  const LabelFn verify = [&model](const Tensor& a) { return model.label(a); };

  const Tensor z0 = model.forward(repeat_rows(x, 1));
  const std::size_t classes = z0.size();
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes)
      throw std::invalid_argument("cw: target " + std::to_string(t) + " outside [0, " + std::to_string(classes) + ")");
  }

  const std::size_t n = targets.size(), d = x.size();
  std::vector<std::optional<AttackResult>> results(n);
  std::vector<std::size_t> rows;  // targets still to attack
  for (std::size_t r = 0; r < n; ++r) {
    const auto t = static_cast<std::size_t>(targets[r]);
    double other = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes; ++k)
      if (k != t) other = std::max(other, z0[k]);
    if (other - z0[t] <= -cfg.kappa && reaches_target(z0.data(), targets[r], cfg.kappa)) {
      results[r] = make_result("cw_l2", x, x, true_label, targets[r], verify, 2, clock.seconds());
    } else {
      rows.push_back(r);
    }
  }

  const std::size_t b = rows.size();
  if (b > 0) {
    const Tensor xb = repeat_rows(x, b);
    Tensor w0 = xb;
    for (double& v : w0.data()) v = std::atanh(std::clamp(2.0 * v, -1.0, 1.0) * 0.999999);
    std::vector<int> tgt(b);
    for (std::size_t i = 0; i < b; ++i) tgt[i] = targets[rows[i]];

    std::vector<double> lower(b, 0.0), upper(b, 1e10), c(b, cfg.initial_const);
    std::vector<double> best_l2(b, std::numeric_limits<double>::infinity());
    std::vector<Tensor> best_adv(b, x);
    std::vector<std::size_t> evals(b, 1);
    bool out_of_time = false;
    const AdamHyper hyper{cfg.learning_rate, 0.9, 0.999, 1e-8};
    const std::size_t check_every = std::max<std::size_t>(1, cfg.max_iterations / 10);

    for (std::size_t step = 0; step < cfg.binary_search_steps && !out_of_time; ++step) {
      Tensor w = w0;
      AdamState adam(w.size());
      std::vector<bool> step_success(b, false);
      double prev = std::numeric_limits<double>::infinity();
      const Tensor cvec({b}, c);

      for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        ad::Tape tape;
        const ad::Var wv = tape.variable(w);
        const ad::Var xt = ad::scale(ad::tanh(wv), 0.5);
        const ad::Var l2 = ad::row_sum(ad::square(ad::sub(xt, tape.constant(xb))));
        const ad::Var logits = model.record(tape, xt);
        const ad::Var f = ad::target_margin(logits, tgt, cfg.kappa);
        const ad::Var loss = ad::sum(ad::add(l2, ad::mul(f, tape.constant(cvec))));
        const Tensor& z = logits.value();
        for (std::size_t i = 0; i < b; ++i) {
          ++evals[i];
          const double l2v = l2.value()[i];
          if (!reaches_target(z.data().subspan(i * classes, classes), tgt[i], cfg.kappa)) continue;
          step_success[i] = true;
          if (l2v < best_l2[i]) {
            best_l2[i] = l2v;
            Tensor a(x.shape());
            const auto src = xt.value().data().subspan(i * d, d);
            std::copy(src.begin(), src.end(), a.data().begin());
            best_adv[i] = std::move(a);
          }
        }
        const double lv = loss.value()[0];
        if (cfg.abort_early && it % check_every == 0) {
          if (lv > prev * 0.9999) break;
          prev = lv;
        }
        const Tensor g = tape.backward(loss)[wv];
        const Tensor upd = adam_step(adam, g, hyper);
        for (std::size_t k = 0; k < w.size(); ++k) w[k] += upd[k];
        if (cfg.max_seconds > 0.0 && clock.seconds() > cfg.max_seconds) {
          out_of_time = true;
          break;
        }
      }

      for (std::size_t i = 0; i < b; ++i) {
        if (step_success[i]) {
          upper[i] = std::min(upper[i], c[i]);
          if (upper[i] < 1e9) c[i] = 0.5 * (lower[i] + upper[i]);
        } else {
          lower[i] = std::max(lower[i], c[i]);
          c[i] = upper[i] < 1e9 ? 0.5 * (lower[i] + upper[i]) : c[i] * 10.0;
        }
      }
    }
    const double secs = clock.seconds() / static_cast<double>(n);
    for (std::size_t i = 0; i < b; ++i) {
      results[rows[i]] = make_result("cw_l2", x, std::move(best_adv[i]), true_label, tgt[i], verify, evals[i] + 1,
                                     secs, out_of_time);
    }
  }

  std::vector<AttackResult> out;
  out.reserve(n);
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

Tensor fgsm_batch(const GradientView& model, const Tensor& batch, std::span<const int> labels, double eps,
                  bool targeted) {
  if (!(eps >= 0.0)) throw std::invalid_argument("fgsm: eps must be >= 0");
  if (batch.rank() != model.input_shape().size() + 1 || batch.dim(0) != labels.size()) {
    throw std::invalid_argument("fgsm: batch " + to_string(batch.shape()) + " does not match " +
                                std::to_string(labels.size()) + " labels");
  }
  ad::Tape tape;
  const ad::Var xv = tape.variable(batch);
  const ad::Var loss = ad::softmax_cross_entropy(model.record(tape, xv), labels);
  const Tensor g = tape.backward(loss)[xv];
  Tensor out = batch;
  const double dir = targeted ? -eps : eps;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double s = g[k] > 0.0 ? 1.0 : (g[k] < 0.0 ? -1.0 : 0.0);
    out[k] += dir * s;
  }
  clip_to_box(out);
  return out;
}

}  // namespace detail

}  // namespace rfd::attacks
