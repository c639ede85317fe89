#include "rfd/attacks/blackbox.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "rfd/optim.hpp"

namespace rfd::attacks {

namespace {

void check_input(const Shape& expected, const Tensor& x) {
  if (x.shape() != expected) {
    throw std::invalid_argument("attack input must be " + to_string(expected) + ", got " + to_string(x.shape()));
  }
}

Shape batched(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

constexpr double kLogFloor = 1e-30;

// max(max_{i != t} log P_i - log P_t, -kappa)
double log_margin(std::span<const double> p, int target, double kappa) {
  const auto t = static_cast<std::size_t>(target);
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < p.size(); ++k)
    if (k != t) other = std::max(other, std::log(std::max(p[k], kLogFloor)));
  return std::max(other - std::log(std::max(p[t], kLogFloor)), -kappa);
}

}  // namespace

void ZooConfig::validate() const {
  if (kappa < 0.0) throw std::invalid_argument("zoo: kappa must be >= 0");
  if (max_iterations == 0 || batch_coordinates == 0 || binary_search_steps == 0)
    throw std::invalid_argument("zoo: iterations, batch_coordinates and binary_search_steps must be >= 1");
  if (!(h > 0.0) || !(learning_rate > 0.0) || !(initial_const > 0.0))
    throw std::invalid_argument("zoo: h, learning_rate and initial_const must be > 0");
}

AttackResult zoo(const SoftOracle& oracle, const Tensor& x, int true_label, int target, const ZooConfig& cfg) {
  cfg.validate();
  check_input(oracle.input_shape(), x);
  Stopwatch clock;
  const std::size_t d = x.size();
  const std::size_t b = std::min(cfg.batch_coordinates, d);
  const std::size_t rows = 2 * b + 1;
  std::size_t queries = 0;
  bool exhausted = false;

  Tensor w0 = x;
  for (double& v : w0.data()) v = std::atanh(std::clamp(2.0 * v, -1.0, 1.0) * 0.999999);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> perm(d);
  std::iota(perm.begin(), perm.end(), std::size_t{0});

  double lower = 0.0, upper = 1e10, c = cfg.initial_const;
  double best_l2 = std::numeric_limits<double>::infinity();
  Tensor best_adv;
  Tensor last = x;
  const AdamHyper hyper{cfg.learning_rate, 0.9, 0.999, 1e-8};
  const std::size_t check_every = std::max<std::size_t>(1, cfg.max_iterations / 10);

  Tensor batch(batched(rows, x.shape()));
  std::vector<std::size_t> coords(b);
  std::vector<double> grads(b), updates(b);

  for (std::size_t step = 0; step < cfg.binary_search_steps && !exhausted; ++step) {
    Tensor w = w0;
    AdamState adam(d);
    bool step_success = false;
    double prev = std::numeric_limits<double>::infinity();

    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
      if ((cfg.max_queries && queries + rows + 1 > cfg.max_queries) ||
          (cfg.max_seconds > 0.0 && clock.seconds() > cfg.max_seconds)) {
        exhausted = true;
        break;
      }
      // Partial Fisher-Yates: the first b entries of perm become a uniform
      // sample without replacement.
      for (std::size_t j = 0; j < b; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, d - 1);
        std::swap(perm[j], perm[pick(rng)]);
        coords[j] = perm[j];
      }
      // Row 0 is the current iterate, rows 2j+1 / 2j+2 move coordinate j by +h / -h.
      auto out = batch.data();
      for (std::size_t k = 0; k < d; ++k) out[k] = 0.5 * std::tanh(w[k]);
      for (std::size_t r = 1; r < rows; ++r) std::copy(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d), out.begin() + static_cast<std::ptrdiff_t>(r * d));
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t i = coords[j];
        out[(2 * j + 1) * d + i] = 0.5 * std::tanh(w[i] + cfg.h);
        out[(2 * j + 2) * d + i] = 0.5 * std::tanh(w[i] - cfg.h);
      }
      const Tensor p = oracle.query(batch);
      queries += rows;
      const std::size_t classes = p.dim(1);

      auto loss = [&](std::size_t r) {
        const double l2 = squared_l2_distance(out.subspan(r * d, d), x.data());
        return l2 + c * log_margin(p.data().subspan(r * classes, classes), target, cfg.kappa);
      };
      const auto p0 = p.data().subspan(0, classes);
      last = batch.slice_rows(0, 1).reshaped(x.shape());
      const double l2_now = squared_l2_distance(last.data(), x.data());
      if (static_cast<int>(argmax(p0)) == target && log_margin(p0, target, cfg.kappa) <= -cfg.kappa) {
        step_success = true;
        if (l2_now < best_l2) {
          best_l2 = l2_now;
          best_adv = last;
        }
      }
      const double l0 = loss(0);
      if (cfg.abort_early && it % check_every == 0) {
        if (l0 > prev * 0.9999) break;
        prev = l0;
      }
      for (std::size_t j = 0; j < b; ++j) grads[j] = (loss(2 * j + 1) - loss(2 * j + 2)) / (2.0 * cfg.h);
      adam_step_coordinates(adam, coords, grads, hyper, updates);
      for (std::size_t j = 0; j < b; ++j) w[coords[j]] += updates[j];
    }

    if (step_success) {
      upper = std::min(upper, c);
      if (upper < 1e9) c = 0.5 * (lower + upper);
    } else {
      lower = std::max(lower, c);
      c = upper < 1e9 ? 0.5 * (lower + upper) : c * 10.0;
    }
  }

  Tensor adv = best_adv.empty() ? last : best_adv;
  clip_to_box(adv);
  ++queries;
  return make_result(
      "zoo", x, std::move(adv), true_label, target,
      [&oracle](const Tensor& a) { return static_cast<int>(argmax(oracle.query_one(a))); }, queries, clock.seconds(),
      exhausted);
}

std::vector<double> estimate_margin_gradient(const SoftOracle& oracle, const Tensor& x, int target,
                                             std::span<const std::size_t> coords, double h, double kappa) {
  check_input(oracle.input_shape(), x);
  if (!(h > 0.0)) throw std::invalid_argument("estimate_margin_gradient: h must be > 0");
  const std::size_t d = x.size();
  Tensor batch(batched(2 * coords.size(), x.shape()));
  auto out = batch.data();
  for (std::size_t j = 0; j < coords.size(); ++j) {
    if (coords[j] >= d) throw std::out_of_range("estimate_margin_gradient: coordinate out of range");
    for (std::size_t r = 2 * j; r < 2 * j + 2; ++r) std::copy(x.data().begin(), x.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r * d));
    out[2 * j * d + coords[j]] += h;
    out[(2 * j + 1) * d + coords[j]] -= h;
  }
  const Tensor p = oracle.query(batch);
  const std::size_t classes = p.dim(1);
  std::vector<double> g(coords.size());
  for (std::size_t j = 0; j < coords.size(); ++j) {
    const double up = log_margin(p.data().subspan(2 * j * classes, classes), target, kappa);
    const double down = log_margin(p.data().subspan((2 * j + 1) * classes, classes), target, kappa);
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

void BoundaryConfig::validate() const {
  if (!(delta > 0.0) || !(epsilon > 0.0) || epsilon > 1.0)
    throw std::invalid_argument("boundary: need delta > 0 and 0 < epsilon <= 1");
  if (candidates == 0 || max_steps == 0 || window == 0)
    throw std::invalid_argument("boundary: candidates, max_steps and window must be >= 1");
}

BoundaryResult boundary_attack(const LabelOracle& oracle, const Tensor& x, int true_label, int target,
                               const Tensor& target_seed, const BoundaryConfig& cfg) {
  cfg.validate();
  check_input(oracle.input_shape(), x);
  check_input(oracle.input_shape(), target_seed);
  Stopwatch clock;
  std::size_t queries = 0;
  auto ask = [&](const Tensor& z) {
    ++queries;
    return oracle.query_one(z);
  };
  const LabelFn verify = [&](const Tensor& a) { return ask(a); };

  BoundaryResult out;
  Tensor adv = target_seed;
  clip_to_box(adv);
  if (ask(adv) != target) {
    // The starting point is not adversarial; report it as a failed run.
    out.result = make_result("boundary", x, std::move(adv), true_label, target, verify, queries, clock.seconds());
    out.result.queries = queries;
    return out;
  }

  const std::size_t d = x.size();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double delta = cfg.delta, eps = cfg.epsilon;
  double dist = l2_distance(adv.data(), x.data());
  out.distance_trace.push_back(dist);
  std::deque<bool> window;
  bool exhausted = false;
  Tensor cand(x.shape()), eta(x.shape()), contracted(x.shape());

  for (std::size_t step = 0; step < cfg.max_steps && dist > 0.0; ++step) {
    for (std::size_t c = 0; c < cfg.candidates; ++c) {
      if ((cfg.max_queries && queries + 3 > cfg.max_queries) ||
          (cfg.max_seconds > 0.0 && clock.seconds() > cfg.max_seconds)) {
        exhausted = true;
        break;
      }
      // Random direction with its component toward x removed, scaled to
      // delta * dist, then projected back onto the sphere of radius dist.
      double along = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        eta[k] = normal(rng);
        along += eta[k] * (x[k] - adv[k]) / dist;
      }
      for (std::size_t k = 0; k < d; ++k) eta[k] -= along * (x[k] - adv[k]) / dist;
      const double norm = l2_norm(eta.data());
      if (norm == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) cand[k] = adv[k] + eta[k] * delta * dist / norm - x[k];
      const double r = l2_norm(cand.data());
      for (std::size_t k = 0; k < d; ++k) cand[k] = x[k] + cand[k] * dist / r;
      clip_to_box(cand);

      const bool stays = ask(cand) == target;
      window.push_back(stays);
      if (window.size() > cfg.window) window.pop_front();
      if (!stays) continue;

      for (std::size_t k = 0; k < d; ++k) contracted[k] = cand[k] + eps * (x[k] - cand[k]);
      const double nd = l2_distance(contracted.data(), x.data());
      if (nd < dist && ask(contracted) == target) {
        adv = contracted;
        dist = nd;
        out.distance_trace.push_back(dist);
        eps = std::min(1.0, eps / 0.9);
        break;
      }
      eps *= 0.5;
    }
    if (exhausted) break;
    if (window.size() >= std::min<std::size_t>(cfg.window, 10)) {
      const double rate = static_cast<double>(std::count(window.begin(), window.end(), true)) /
                          static_cast<double>(window.size());
      if (rate < 0.2) delta *= 0.9;
      else if (rate > 0.5) delta /= 0.9;
    }
  }

  out.result = make_result("boundary", x, std::move(adv), true_label, target, verify, 0, clock.seconds(), exhausted);
  out.result.queries = queries;
  return out;
}

void SubstituteConfig::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("substitute: lambda must be > 0");
  if (num_classes < 2) throw std::invalid_argument("substitute: need at least two classes");
  train.validate();
}

SubstituteReport train_substitute(const LabelOracle& oracle, const Tensor& seeds, const SubstituteConfig& cfg) {
  cfg.validate();
  const Shape& in = oracle.input_shape();
  if (seeds.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), seeds.shape().begin() + 1)) {
    throw std::invalid_argument("substitute seeds must be [N]" + to_string(in) + ", got " + to_string(seeds.shape()));
  }
  std::vector<std::size_t> sizes{numel(in)};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(cfg.num_classes);
  SubstituteReport rep{build_mlp(in, sizes, cfg.train.seed), 0, 0, 0, false};

  auto within_budget = [&](std::size_t n) { return cfg.max_queries == 0 || rep.queries + n <= cfg.max_queries; };
  if (!within_budget(seeds.dim(0))) {
    rep.budget_exhausted = true;
    return rep;
  }
  Dataset data{seeds, oracle.query(seeds)};
  rep.queries += seeds.dim(0);

  for (std::size_t round = 0;; ++round) {
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train.seed + round;
    train(rep.model, data, tc);
    rep.dataset_size = data.size();
    if (round == cfg.augmentation_rounds) break;

    const double lambda = round % 2 == 0 ? cfg.lambda : -cfg.lambda;
    Tensor fresh = data.images;
    const std::size_t n = data.size(), d = numel(in);
    constexpr std::size_t kChunk = 512;
    for (std::size_t begin = 0; begin < n; begin += kChunk) {
      const std::size_t end = std::min(n, begin + kChunk);
      const std::vector<int> lab(data.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                                 data.labels.begin() + static_cast<std::ptrdiff_t>(end));
      const Tensor g = rep.model.input_gradient(data.images.slice_rows(begin, end),
                                                [&lab](ad::Var z) { return ad::sum(ad::pick(z, lab)); });
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double s = g[k] > 0.0 ? 1.0 : (g[k] < 0.0 ? -1.0 : 0.0);
        fresh[begin * d + k] += lambda * s;
      }
    }
    clip_to_box(fresh);
    if (!within_budget(n)) {
      rep.budget_exhausted = true;
      break;
    }
    auto labels = oracle.query(fresh);
    rep.queries += n;
    data.images = concat_rows(data.images, fresh);
    data.labels.insert(data.labels.end(), labels.begin(), labels.end());
    rep.rounds_completed = round + 1;
  }
  return rep;
}

TransferSummary transfer_eval(std::span<const AttackResult> results, const LabelFn& classify) {
  TransferSummary s;
  s.n = results.size();
  s.empty = results.empty();
  if (s.empty) return s;
  for (const auto& r : results) {
    if (is_success(classify(r.adversarial), r.true_label, r.target)) ++s.hits;
  }
  s.asr = 100.0 * static_cast<double>(s.hits) / static_cast<double>(s.n);
  return s;
}

}  // namespace rfd::attacks
