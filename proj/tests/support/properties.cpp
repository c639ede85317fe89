#include "properties.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>

#include "rfd/attacks/blackbox.hpp"
#include "rfd/attacks/oracle.hpp"
#include "rfd/attacks/whitebox.hpp"
#include "rfd/autodiff.hpp"
#include "rfd/eval/metrics.hpp"
#include "rfd/eval/records.hpp"
#include "rfd/forest.hpp"
#include "rfd/hybrid.hpp"
#include "rfd/io/binary.hpp"
#include "rfd/io/idx.hpp"
#include "rfd/io/model_file.hpp"
#include "rfd/network.hpp"

namespace rfd::testing {

namespace {

using Rng = std::mt19937_64;

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Values with |v| in [0.05, 1], away from the ReLU kink.
Tensor away_from_zero(Rng& rng, Shape shape) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

std::vector<int> random_labels(Rng& rng, std::size_t n, int classes) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::vector<int> out(n);
  for (int& v : out) v = u(rng);
  return out;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void fail(SuiteResult& r, const std::string& what) {
  ++r.failures;
  if (r.detail.empty()) r.detail = what;
}

// ---------------------------------------------------------------- autodiff

struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)> build;
};

Conv2d random_conv(Rng& rng, std::size_t k, std::size_t cin, std::size_t cout, Padding pad) {
  return Conv2d{k, cin, cout, pad, uniform(rng, {k, k, cin, cout}, -0.5, 0.5), uniform(rng, {cout}, -0.1, 0.1)};
}

Dense random_dense(Rng& rng, std::size_t in, std::size_t out) {
  return Dense{in, out, uniform(rng, {in, out}, -0.5, 0.5), uniform(rng, {out}, -0.1, 0.1)};
}

GradCase make_case(std::size_t kind, Rng& rng) {
  std::uniform_int_distribution<std::size_t> dim(2, 4);
  const std::size_t n = dim(rng), m = dim(rng);
  switch (kind) {
    case 0:
      return {"add", {uniform(rng, {n, m}, -1, 1), uniform(rng, {n, m}, -1, 1)},
              [](ad::Tape&, const auto& v) { return ad::add(v[0], v[1]); }};
    case 1:
      return {"sub", {uniform(rng, {n, m}, -1, 1), uniform(rng, {n, m}, -1, 1)},
              [](ad::Tape&, const auto& v) { return ad::sub(v[0], v[1]); }};
    case 2:
      return {"mul", {uniform(rng, {n, m}, -1, 1), uniform(rng, {n, m}, -1, 1)},
              [](ad::Tape&, const auto& v) { return ad::mul(v[0], v[1]); }};
    case 3:
      return {"scale", {uniform(rng, {n, m}, -1, 1)}, [](ad::Tape&, const auto& v) { return ad::scale(v[0], -1.7); }};
    case 4:
      return {"square", {uniform(rng, {n, m}, -1, 1)}, [](ad::Tape&, const auto& v) { return ad::square(v[0]); }};
    case 5:
      return {"relu", {away_from_zero(rng, {n, m})}, [](ad::Tape&, const auto& v) { return ad::relu(v[0]); }};
    case 6:
      return {"tanh", {uniform(rng, {n, m}, -2, 2)}, [](ad::Tape&, const auto& v) { return ad::tanh(v[0]); }};
    case 7:
      return {"reshape+row_sum", {uniform(rng, {n, m, 2}, -1, 1)}, [n, m](ad::Tape&, const auto& v) {
                return ad::row_sum(ad::square(ad::reshape(v[0], {n, m * 2})));
              }};
    case 8:
      return {"sum", {uniform(rng, {n, m}, -1, 1)},
              [](ad::Tape&, const auto& v) { return ad::sum(ad::tanh(v[0])); }};
    case 9:
      return {"dense", {uniform(rng, {n, m}, -1, 1), uniform(rng, {m, 3}, -1, 1), uniform(rng, {3}, -1, 1)},
              [](ad::Tape&, const auto& v) { return ad::dense(v[0], v[1], v[2]); }};
    case 10:
    case 11: {
      const auto pad = kind == 10 ? Padding::Valid : Padding::Same;
      return {kind == 10 ? "conv2d valid" : "conv2d same",
              {uniform(rng, {2, 5, 4, 2}, -1, 1), uniform(rng, {3, 3, 2, 3}, -1, 1), uniform(rng, {3}, -1, 1)},
              [pad](ad::Tape&, const auto& v) { return ad::conv2d(v[0], v[1], v[2], pad); }};
    }
    case 12: {
      // Distinct values spaced well beyond the difference step.
      Tensor x({2, 4, 4, 2});
      std::vector<double> vals(x.size());
      for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = -1.0 + 0.03 * static_cast<double>(i);
      std::shuffle(vals.begin(), vals.end(), rng);
      std::copy(vals.begin(), vals.end(), x.data().begin());
      return {"maxpool2d", {x}, [](ad::Tape&, const auto& v) { return ad::maxpool2d(v[0], 2); }};
    }
    case 13:
      return {"batchnorm_train",
              {uniform(rng, {n + 2, 3}, -1, 1), uniform(rng, {3}, 0.5, 1.5), uniform(rng, {3}, -0.5, 0.5)},
              [](ad::Tape&, const auto& v) { return ad::batchnorm_train(v[0], v[1], v[2], 1e-5, nullptr); }};
    case 14: {
      const Tensor mean = uniform(rng, {3}, -0.5, 0.5), var = uniform(rng, {3}, 0.5, 2.0);
      return {"batchnorm_infer",
              {uniform(rng, {n, 2, 2, 3}, -1, 1), uniform(rng, {3}, 0.5, 1.5), uniform(rng, {3}, -0.5, 0.5)},
              [mean, var](ad::Tape&, const auto& v) {
                return ad::batchnorm_infer(v[0], v[1], v[2], mean.data(), var.data(), 1e-5);
              }};
    }
    case 15:
      return {"log_softmax", {uniform(rng, {n, 5}, -3, 3)},
              [](ad::Tape&, const auto& v) { return ad::log_softmax(v[0]); }};
    case 16: {
      const auto labels = random_labels(rng, n, 5);
      return {"softmax_cross_entropy", {uniform(rng, {n, 5}, -3, 3)},
              [labels](ad::Tape&, const auto& v) { return ad::softmax_cross_entropy(v[0], labels); }};
    }
    case 17: {
      const auto idx = random_labels(rng, n, 4);
      return {"pick", {uniform(rng, {n, 4}, -1, 1)},
              [idx](ad::Tape&, const auto& v) { return ad::pick(v[0], idx); }};
    }
    case 18: {
      const auto targets = random_labels(rng, n, 6);
      const double kappa = std::bernoulli_distribution(0.5)(rng) ? 0.0 : 0.3;
      return {"target_margin", {uniform(rng, {n, 6}, -3, 3)}, [targets, kappa](ad::Tape&, const auto& v) {
                return ad::target_margin(v[0], targets, kappa);
              }};
    }
    case 19: {
      const Network net = build_mlp({6}, {6, 7, 5, 3}, rng());
      return {"mlp input gradient", {uniform(rng, {n, 6}, -1, 1)},
              [net](ad::Tape& t, const auto& v) { return net.record(t, v[0]); }};
    }
    case 20: {
      std::vector<Layer> layers{random_conv(rng, 3, 2, 3, Padding::Valid), Relu{}, MaxPool2d{2}, Flatten{},
                                random_dense(rng, 12, 4)};
      const Network net({6, 6, 2}, std::move(layers), {1, 4});
      return {"conv net input gradient", {uniform(rng, {2, 6, 6, 2}, -0.5, 0.5)},
              [net](ad::Tape& t, const auto& v) { return net.record(t, v[0]); }};
    }
    default: {
      // The C&W objective: tanh box, squared distance, margin.
      const Network net = build_mlp({5}, {5, 6, 4}, rng());
      const Tensor x0 = uniform(rng, {n, 5}, -0.4, 0.4);
      const auto targets = random_labels(rng, n, 4);
      return {"cw objective", {uniform(rng, {n, 5}, -1, 1)}, [net, x0, targets](ad::Tape& t, const auto& v) {
                const ad::Var xt = ad::scale(ad::tanh(v[0]), 0.5);
                const ad::Var l2 = ad::row_sum(ad::square(ad::sub(xt, t.constant(x0))));
                return ad::add(l2, ad::scale(ad::target_margin(net.record(t, xt), targets, 0.0), 3.0));
              }};
    }
  }
}

constexpr std::size_t kGradKinds = 22;

double head_value(const GradCase& c, const std::vector<Tensor>& inputs, const Tensor& w) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  const ad::Var out = c.build(tape, vars);
  return ad::sum(ad::mul(out, tape.constant(w))).value()[0];
}

}  // namespace

SuiteResult autodiff_fd_suite(std::uint64_t seed, std::size_t cases, double tolerance) {
  SuiteResult r{"autodiff finite differences"};
  Rng rng(seed);
  constexpr double h = 1e-6;
  constexpr std::size_t kMaxEntries = 48;
  for (std::size_t c = 0; c < cases; ++c) {
    const GradCase gc = make_case(c % kGradKinds, rng);
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& x : gc.inputs) vars.push_back(tape.variable(x));
    const ad::Var out = gc.build(tape, vars);
    const Tensor w = uniform(rng, out.shape(), -1, 1);
    const ad::Var head = ad::sum(ad::mul(out, tape.constant(w)));
    const auto grads = tape.backward(head);
    ++r.cases;

    double worst = 0.0;
    std::string where;
    for (std::size_t i = 0; i < gc.inputs.size(); ++i) {
      const Tensor& analytic = grads[vars[i]];
      std::vector<std::size_t> entries(gc.inputs[i].size());
      std::iota(entries.begin(), entries.end(), std::size_t{0});
      std::shuffle(entries.begin(), entries.end(), rng);
      if (entries.size() > kMaxEntries) entries.resize(kMaxEntries);
      for (std::size_t e : entries) {
        auto plus = gc.inputs, minus = gc.inputs;
        plus[i][e] += h;
        minus[i][e] -= h;
        const double numeric = (head_value(gc, plus, w) - head_value(gc, minus, w)) / (2 * h);
        const double a = analytic[e];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-4});
        if (rel > worst) {
          worst = rel;
          where = gc.name + " input " + std::to_string(i) + " entry " + std::to_string(e) + ": tape " +
                  std::to_string(a) + " vs differences " + std::to_string(numeric);
        }
      }
    }
    r.worst = std::max(r.worst, worst);
    if (worst > tolerance) fail(r, where);
  }
  if (r.detail.empty()) r.detail = "worst relative error " + sci(r.worst);
  return r;
}

// ------------------------------------------------------------ split oracle

namespace {

double oracle_gini(const std::vector<double>& counts) {
  double n = 0.0;
  for (double c : counts) n += c;
  double s = 0.0;
  for (double c : counts) s += (c / n) * (c / n);
  return 1.0 - s;
}

struct OracleSplit {
  std::size_t feature;
  double threshold;
  double score;
};

// Enumerates every feature and every cut between consecutive distinct
// values, keeping the first candidate unless a later one is better by more
// than the tolerance.
std::optional<OracleSplit> brute_force_split(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                             const std::vector<std::size_t>& samples, std::size_t d, int classes,
                                             std::size_t min_leaf, bool weighted) {
  std::optional<OracleSplit> best;
  for (std::size_t f = 0; f < d; ++f) {
    std::vector<double> vals;
    for (auto s : samples) vals.push_back(x[s][f]);
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
      const double t = 0.5 * (vals[k] + vals[k + 1]);
      std::vector<double> left(classes, 0.0), right(classes, 0.0);
      double nl = 0, nr = 0;
      for (auto s : samples) {
        if (x[s][f] <= t) {
          left[y[s]] += 1;
          nl += 1;
        } else {
          right[y[s]] += 1;
          nr += 1;
        }
      }
      if (nl < static_cast<double>(min_leaf) || nr < static_cast<double>(min_leaf)) continue;
      double score = oracle_gini(left) + oracle_gini(right);
      if (weighted) score = (nl * oracle_gini(left) + nr * oracle_gini(right)) / (nl + nr);
      if (!best || score < best->score - forest::kScoreTolerance) best = OracleSplit{f, t, score};
    }
  }
  return best;
}

}  // namespace

SuiteResult split_oracle_suite(std::uint64_t seed, std::size_t cases) {
  SuiteResult r{"split score exhaustive oracle"};
  Rng rng(seed);
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    const int classes = std::uniform_int_distribution<int>(2, 4)(rng);
    const int range = std::array{2, 3, 5, 10}[c % 4];
    const std::size_t min_leaf = 1 + c % 3;
    const bool weighted = (c / 3) % 2 == 1;

    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    Tensor flat({n, d});
    std::uniform_int_distribution<int> val(0, range - 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < d; ++f) flat[i * d + f] = rows[i][f] = val(rng) * 0.25;
    const auto y = random_labels(rng, n, classes);
    std::vector<std::size_t> samples(n);
    std::iota(samples.begin(), samples.end(), std::size_t{0});
    if (c % 5 == 4) {
      // A bootstrap-like multiset.
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& s : samples) s = pick(rng);
    }
    std::vector<std::size_t> features(d);
    std::iota(features.begin(), features.end(), std::size_t{0});
    std::shuffle(features.begin(), features.end(), rng);

    const forest::FeatureView view{flat.data(), n, d};
    const auto got = forest::find_best_split(view, y, samples, features, static_cast<std::size_t>(classes), min_leaf,
                                             weighted);
    const auto want = brute_force_split(rows, y, samples, d, classes, min_leaf, weighted);
    ++r.cases;
    const std::string tag = "case " + std::to_string(c) + " (n=" + std::to_string(n) + ", d=" + std::to_string(d) + ")";
    if (got.has_value() != want.has_value()) {
      fail(r, tag + ": split found by only one side");
      continue;
    }
    if (!got) continue;
    const double err = std::abs(got->score - want->score);
    r.worst = std::max(r.worst, err);
    if (err > 1e-12 || got->feature != want->feature || got->threshold != want->threshold) {
      fail(r, tag + ": implementation picked feature " + std::to_string(got->feature) + " at " +
                  std::to_string(got->threshold) + " score " + std::to_string(got->score) + ", oracle feature " +
                  std::to_string(want->feature) + " at " + std::to_string(want->threshold) + " score " +
                  std::to_string(want->score));
      continue;
    }
    // The reported child histograms must be the partition at that cut.
    forest::Counts left(static_cast<std::size_t>(classes), 0), right = left;
    for (auto s : samples) ++(rows[s][got->feature] <= got->threshold ? left : right)[static_cast<std::size_t>(y[s])];
    if (left != got->left_counts || right != got->right_counts) fail(r, tag + ": child histograms disagree");
    const double g = forest::split_score(left, right, weighted);
    if (g != got->score) fail(r, tag + ": split_score differs from the scan score");
  }
  // Every split a grown tree keeps refines its parent: the sample-weighted
  // child impurity never exceeds the parent's, whichever score picked it.
  for (std::size_t c = 0; c < 24; ++c) {
    const std::size_t n = 40 + 10 * c, d = 4;
    const Tensor x = uniform(rng, {n, d}, -1, 1);
    const auto y = random_labels(rng, n, 3);
    forest::GrowthParams p;
    p.num_trees = 2;
    p.max_nodes = 31;
    p.weighted_gini = c % 2 == 1;
    p.seed = seed + c;
    const auto grown = forest::grow_forest(x, y, 3, p);
    for (const auto& tree : grown.trees()) {
      for (const auto& node : tree.nodes) {
        if (node.is_leaf()) continue;
        ++r.cases;
        const auto& l = tree.nodes[node.left].counts;
        const auto& rt = tree.nodes[node.right].counts;
        const auto total = [](const forest::Counts& k) { return std::accumulate(k.begin(), k.end(), 0.0); };
        const double nl = total(l), nr = total(rt);
        const double child = (nl * forest::gini(l) + nr * forest::gini(rt)) / (nl + nr);
        if (child > forest::gini(node.counts) + 1e-12) fail(r, "weighted child impurity exceeds the parent's");
      }
    }
  }
  if (r.detail.empty()) r.detail = "largest score difference " + sci(r.worst);
  return r;
}

// ------------------------------------------------------ forest normalization

SuiteResult forest_normalization_suite(std::uint64_t seed, std::size_t inputs) {
  SuiteResult r{"forest output normalization"};
  Rng rng(seed);
  const std::size_t n = 300, d = 6;
  const int classes = 4;
  Tensor x = uniform(rng, {n, d}, -1, 1);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = (x[i * d] > 0 ? 1 : 0) + (x[i * d + 1] > 0.3 ? 2 : 0);
  forest::GrowthParams p;
  p.num_trees = 7;
  p.max_nodes = 41;
  p.seed = seed;
  const auto f = forest::grow_forest(x, y, classes, p);
  for (std::size_t i = 0; i < inputs; ++i) {
    const Tensor q = uniform(rng, {d}, -1.5, 1.5);
    const auto proba = f.predict_proba(q.data());
    ++r.cases;
    double s = 0.0;
    bool range_ok = true;
    for (double v : proba) {
      s += v;
      range_ok = range_ok && v >= 0.0 && v <= 1.0;
    }
    r.worst = std::max(r.worst, std::abs(s - 1.0));
    if (!range_ok || std::abs(s - 1.0) > 1e-12) fail(r, "input " + std::to_string(i) + ": probabilities sum to " +
                                                          std::to_string(s));
    if (f.predict(q.data()) != static_cast<int>(argmax(proba))) fail(r, "predict disagrees with argmax");
  }
  if (r.detail.empty()) r.detail = "largest |sum - 1| " + sci(r.worst);
  return r;
}

// ----------------------------------------------------- zero perturbation

SuiteResult zero_perturbation_suite(std::uint64_t seed) {
  SuiteResult r{"zero perturbation gives a zero profile"};
  Rng rng(seed);
  const std::vector<Network> nets{build_mnistnet(seed), build_mlp({3, 3, 1}, {9, 8, 8, 4}, seed + 1)};
  for (const auto& net : nets) {
    for (std::size_t trial = 0; trial < 3; ++trial) {
      Shape s{3};
      s.insert(s.end(), net.input_shape().begin(), net.input_shape().end());
      const Tensor clean = uniform(rng, s, -0.5, 0.5);
      const auto p = hybrid::distance_profile(net, clean, clean);
      ++r.cases;
      if (p.d.size() != net.num_activations()) fail(r, "profile length differs from the activation count");
      for (std::size_t k = 0; k < p.d.size(); ++k) {
        if (p.d[k] != 0.0) fail(r, "D_" + std::to_string(k + 1) + " = " + std::to_string(p.d[k]));
      }
    }
  }
  if (r.detail.empty()) r.detail = "all profiles exactly zero";
  return r;
}

// -------------------------------------------------------- attack invariants

namespace {

// Softmax of a fixed linear map on 8-dimensional inputs.
struct LinearStub {
  Tensor w;  // [8, 3]
  Tensor logits(const Tensor& batch) const {
    const std::size_t n = batch.dim(0);
    Tensor z({n, 3});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 8; ++k) z[i * 3 + j] += batch[i * 8 + k] * w[k * 3 + j];
    return z;
  }
  Tensor proba(const Tensor& batch) const {
    Tensor z = logits(batch);
    for (std::size_t i = 0; i < batch.dim(0); ++i) {
      double m = z[i * 3], s = 0.0;
      for (std::size_t j = 1; j < 3; ++j) m = std::max(m, z[i * 3 + j]);
      for (std::size_t j = 0; j < 3; ++j) s += (z[i * 3 + j] = std::exp(z[i * 3 + j] - m));
      for (std::size_t j = 0; j < 3; ++j) z[i * 3 + j] /= s;
    }
    return z;
  }
  std::vector<int> labels(const Tensor& batch) const {
    const Tensor z = logits(batch);
    std::vector<int> out(batch.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(argmax(z.data().subspan(i * 3, 3)));
    return out;
  }
};

bool check_result(SuiteResult& r, const attacks::AttackResult& a, const attacks::LabelFn& fresh,
                  const std::string& tag) {
  ++r.cases;
  bool ok = true;
  if (!attacks::in_box(a.adversarial)) {
    fail(r, tag + ": adversarial leaves the box");
    ok = false;
  }
  if (attacks::is_success(fresh(a.adversarial), a.true_label, a.target) != a.success) {
    fail(r, tag + ": success flag disagrees with a fresh query");
    ok = false;
  }
  if (squared_l2_distance(a.original.data(), a.adversarial.data()) != a.l2_squared) {
    fail(r, tag + ": recorded distance is stale");
    ok = false;
  }
  return ok;
}

}  // namespace

SuiteResult attack_invariants_suite(std::uint64_t seed) {
  SuiteResult r{"attack box and success verification"};
  Rng rng(seed);

  // make_result trusts only its verify callback.
  {
    const Tensor x = uniform(rng, {8}, -0.5, 0.5);
    for (int stub = 0; stub < 3; ++stub) {
      const attacks::LabelFn verify = [stub](const Tensor&) { return stub; };
      const auto a = attacks::make_result("stub", x, x, 0, 2, verify, 1, 0.0);
      ++r.cases;
      if (a.success != (stub == 2) || a.predicted != stub) fail(r, "make_result ignores its verify callback");
    }
    Tensor outside = x;
    outside[0] = 0.75;
    ++r.cases;
    try {
      (void)attacks::make_result("stub", x, outside, 0, 1, [](const Tensor&) { return 1; }, 1, 0.0);
      fail(r, "make_result accepted an out-of-box example");
    } catch (const std::logic_error&) {
    }
  }

  for (std::size_t trial = 0; trial < 4; ++trial) {
    const LinearStub stub{uniform(rng, {8, 3}, -3, 3)};
    const attacks::SoftOracle soft([&stub](const Tensor& b) { return stub.proba(b); }, {8});
    const attacks::LabelOracle hard([&stub](const Tensor& b) { return stub.labels(b); }, {8});
    const attacks::LabelFn fresh = [&stub](const Tensor& x) { return stub.labels(attacks::as_batch(x))[0]; };
    const Tensor x = uniform(rng, {8}, -0.5, 0.5);
    const int label = fresh(x);
    const int target = (label + 1 + static_cast<int>(trial % 2)) % 3;

    attacks::ZooConfig zc;
    zc.max_iterations = 40;
    zc.batch_coordinates = 4;
    zc.seed = seed + trial;
    const std::size_t before = soft.queries();
    const auto z = attacks::zoo(soft, x, label, target, zc);
    check_result(r, z, fresh, "zoo trial " + std::to_string(trial));
    ++r.cases;
    if (soft.queries() - before != z.queries) fail(r, "zoo query count disagrees with the oracle counter");

    // A starting point in the target class, found by scanning the box.
    std::optional<Tensor> start;
    for (int k = 0; k < 2000 && !start; ++k) {
      Tensor s = uniform(rng, {8}, -0.5, 0.5);
      if (fresh(s) == target) start = s;
    }
    if (start) {
      attacks::BoundaryConfig bc;
      bc.max_steps = 30;
      bc.seed = seed + trial;
      const auto b = attacks::boundary_attack(hard, x, label, target, *start, bc);
      check_result(r, b.result, fresh, "boundary trial " + std::to_string(trial));
      ++r.cases;
      for (std::size_t k = 1; k < b.distance_trace.size(); ++k) {
        if (!(b.distance_trace[k] < b.distance_trace[k - 1])) {
          fail(r, "boundary distance did not strictly decrease");
          break;
        }
      }
    }
  }

  // White-box attack on a small network.
  {
    const Network net = build_mlp({8}, {8, 10, 3}, seed);
    const attacks::LabelFn fresh = [&net](const Tensor& x) {
      return static_cast<int>(argmax(net.forward_one(x).data()));
    };
    attacks::CwConfig cc;
    cc.binary_search_steps = 3;
    cc.max_iterations = 60;
    cc.learning_rate = 0.05;
    for (std::size_t trial = 0; trial < 3; ++trial) {
      const Tensor x = uniform(rng, {8}, -0.5, 0.5);
      const int label = fresh(x);
      const int targets[] = {(label + 1) % 3, (label + 2) % 3};
      for (const auto& a : attacks::cw_l2(net, x, label, targets, cc)) check_result(r, a, fresh, "cw");
    }
  }

  // A throwing attack yields failed results and never aborts the sweep.
  {
    Dataset data{uniform(rng, {5, 8}, -0.5, 0.5), {0, 1, 2, 3, 4}};
    const eval::SweepAttack boom = [](const Tensor&, int label, std::span<const int> t, std::uint64_t)
        -> std::vector<attacks::AttackResult> {
      if (label % 2 == 0) throw std::runtime_error("stub failure");
      std::vector<attacks::AttackResult> out;
      for (int target : t)
        out.push_back(attacks::make_result("stub", Tensor({8}), Tensor({8}), label, target,
                                           [](const Tensor&) { return -1; }, 1, 0.0));
      return out;
    };
    const eval::FailedResult failed = [](const Tensor& x, int label, int target) {
      return attacks::make_result("stub", x, x, label, target, [label](const Tensor&) { return label; }, 0, 0.0);
    };
    const auto out = eval::targeted_sweep(boom, data, {eval::TargetRule::All, 10, 2, seed, 0.0}, failed);
    ++r.cases;
    if (out.results.size() != 45 || out.errors != 3) fail(r, "sweep lost runs after an attack threw");
    const auto m = eval::compute_metrics(out.results);
    ++r.cases;
    if (!m.asr || *m.asr != 0.0) fail(r, "all-failure sweep reports a non-zero ASR");
  }
  if (r.detail.empty()) r.detail = std::to_string(r.cases) + " checks";
  return r;
}

// ------------------------------------------------------------ serialization

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(std::uint64_t seed) {
    path = std::filesystem::temp_directory_path() /
           ("rfd-props-" + std::to_string(seed) + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double u, double v) {
           return std::bit_cast<std::uint64_t>(u) == std::bit_cast<std::uint64_t>(v);
         });
}

}  // namespace

SuiteResult serialization_suite(std::uint64_t seed) {
  SuiteResult r{"serialization round-trips"};
  Rng rng(seed);
  TempDir dir(seed);

  // Network file.
  {
    const Network net = build_mnistnet(seed);
    const auto path = dir.path / "net.rfd";
    io::save_network(path, net, {{"note", "round trip"}});
    const auto back = io::load_network(path);
    ++r.cases;
    const auto a = net.trainable_parameters();
    const auto b = back.network.trainable_parameters();
    bool same = a.size() == b.size() && net.activation_positions() == back.network.activation_positions();
    for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i]->shape() == b[i]->shape() && bit_equal(a[i]->data(), b[i]->data());
    if (!same) fail(r, "network parameters changed across save/load");
    const Tensor x = uniform(rng, {2, 28, 28, 1}, -0.5, 0.5);
    ++r.cases;
    if (!bit_equal(net.forward(x).data(), back.network.forward(x).data())) fail(r, "reloaded network computes differently");
    ++r.cases;
    if (back.meta.value("note", "") != "round trip") fail(r, "network metadata lost");
  }

  // Forest and hybrid.
  {
    const Network net = build_mlp({4}, {4, 6, 3}, seed);
    const Tensor images = uniform(rng, {120, 4}, -0.5, 0.5);
    std::vector<int> labels(120);
    for (std::size_t i = 0; i < 120; ++i) labels[i] = images[i * 4] > 0 ? (images[i * 4 + 1] > 0 ? 2 : 1) : 0;
    forest::GrowthParams p;
    p.num_trees = 4;
    p.max_nodes = 25;
    p.seed = seed;
    const auto h = hybrid::build_hybrid(net, 1, Dataset{images, labels}, p, 3);

    io::ByteWriter w;
    h.forest().encode(w);
    const std::string bytes = w.str();
    io::ByteReader rd(bytes);
    const auto f2 = forest::Forest::decode(rd);
    ++r.cases;
    if (!(f2 == h.forest()) || !rd.done()) fail(r, "forest changed across encode/decode");
    io::ByteWriter w2;
    f2.encode(w2);
    ++r.cases;
    if (w2.str() != bytes) fail(r, "forest re-encoding differs");

    const std::string file = h.serialize({{"k", 1}});
    const auto h2 = hybrid::HybridModel::deserialize(file);
    ++r.cases;
    if (h2.serialize({{"k", 1}}) != file) fail(r, "hybrid re-serialization differs");
    ++r.cases;
    if (!bit_equal(h.classify_proba(images).data(), h2.classify_proba(images).data()))
      fail(r, "reloaded hybrid classifies differently");
  }

  // IDX images, labels and f64 batches.
  {
    Tensor images({3, 4, 5, 1});
    std::uniform_int_distribution<int> byte(0, 255);
    for (double& v : images.data()) v = byte(rng) / 255.0 - 0.5;
    images[0] = -0.5;
    images[1] = 0.5;
    const std::vector<int> labels{3, 1, 4};
    io::write_idx_images(dir.path / "img.idx", images);
    io::write_idx_labels(dir.path / "lab.idx", labels);
    const auto back = io::load_idx(dir.path / "img.idx", dir.path / "lab.idx");
    ++r.cases;
    if (!bit_equal(back.images.data(), images.data()) || back.labels != labels || back.images.shape() != images.shape())
      fail(r, "IDX byte round trip changed the data");
    const Tensor f = uniform(rng, {3, 4, 5, 1}, -0.5, 0.5);
    io::write_idx_f64(dir.path / "f.idx", f);
    ++r.cases;
    if (!bit_equal(io::read_idx_f64(dir.path / "f.idx").data(), f.data())) fail(r, "f64 IDX round trip changed data");
  }

  // Profile CSV.
  {
    hybrid::DistanceProfile p;
    for (int k = 0; k < 7; ++k) p.d.push_back(uniform(rng, {1}, 0, 3)[0]);
    p.excluded_pairs.assign(7, 2);
    std::stringstream s;
    hybrid::write_profile_csv(s, p);
    const auto back = hybrid::read_profile_csv(s);
    ++r.cases;
    if (!bit_equal(back.d, p.d) || back.excluded_pairs != p.excluded_pairs) fail(r, "profile CSV round trip");
  }

  // Result stream.
  {
    eval::Stream s;
    s.header = {{"seed", seed}, {"config_digest", "abc"}};
    for (int i = 0; i < 4; ++i) {
      const Tensor x = uniform(rng, {2, 3, 1}, -0.5, 0.5);
      Tensor adv = uniform(rng, {2, 3, 1}, -0.5, 0.5);
      auto a = attacks::make_result("zoo", x, adv, i, i % 2 ? std::optional<int>(i + 1) : std::nullopt,
                                    [i](const Tensor&) { return i + 1; }, 7 + i, 0.1 * i);
      s.records.push_back({"dnn", "hybrid", static_cast<std::size_t>(i), a, i == 2, i == 3});
    }
    const auto back = eval::decode_stream(eval::encode_stream(s));
    ++r.cases;
    bool same = back.records.size() == s.records.size() && back.header.value("config_digest", "") == "abc";
    for (std::size_t i = 0; same && i < s.records.size(); ++i) {
      const auto& a = s.records[i];
      const auto& b = back.records[i];
      same = a.model == b.model && a.source == b.source && a.example == b.example && a.error == b.error &&
             a.structural == b.structural && a.result.attack == b.result.attack &&
             a.result.true_label == b.result.true_label && a.result.target == b.result.target &&
             a.result.predicted == b.result.predicted && a.result.success == b.result.success &&
             std::bit_cast<std::uint64_t>(a.result.l2) == std::bit_cast<std::uint64_t>(b.result.l2) &&
             std::bit_cast<std::uint64_t>(a.result.l2_squared) == std::bit_cast<std::uint64_t>(b.result.l2_squared) &&
             a.result.queries == b.result.queries && a.result.seconds == b.result.seconds &&
             a.result.original.shape() == b.result.original.shape() &&
             bit_equal(a.result.original.data(), b.result.original.data()) &&
             bit_equal(a.result.adversarial.data(), b.result.adversarial.data());
    }
    if (!same) fail(r, "result stream round trip changed a record");
  }
  if (r.detail.empty()) r.detail = std::to_string(r.cases) + " round trips bit-exact";
  return r;
}

std::vector<SuiteResult> run_property_suites(std::uint64_t seed) {
  return {autodiff_fd_suite(seed),          split_oracle_suite(seed + 1),  forest_normalization_suite(seed + 2),
          zero_perturbation_suite(seed + 3), attack_invariants_suite(seed + 4), serialization_suite(seed + 5)};
}

}  // namespace rfd::testing
