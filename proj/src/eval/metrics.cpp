#include "rfd/eval/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <stdexcept>

#include "rfd/attacks/result.hpp"
#include "rfd/eval/pool.hpp"

namespace rfd::eval {

Metrics compute_metrics(std::span<const Outcome> outcomes) {
  Metrics m;
  m.attempts = outcomes.size();
  if (m.attempts == 0) return m;
  // Sorted sums make the means independent of result order.
  std::vector<double> l2s, sqs, secs;
  for (const auto& o : outcomes) {
    secs.push_back(o.seconds);
    if (!o.success) continue;
    ++m.successes;
    l2s.push_back(o.l2);
    sqs.push_back(o.l2 * o.l2);
  }
  auto sorted_sum = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  };
  m.asr = 100.0 * static_cast<double>(m.successes) / static_cast<double>(m.attempts);
  m.mean_seconds = sorted_sum(secs) / static_cast<double>(m.attempts);
  if (m.successes > 0) {
    m.mean_l2 = sorted_sum(l2s) / static_cast<double>(m.successes);
    m.mean_l2_squared = sorted_sum(sqs) / static_cast<double>(m.successes);
  }
  return m;
}

Metrics compute_metrics(std::span<const attacks::AttackResult> results) {
  std::vector<Outcome> o;
  o.reserve(results.size());
  for (const auto& r : results) o.push_back({r.success, r.l2, r.seconds});
  return compute_metrics(o);
}

Subset select_subset(const BatchLabelFn& classify, const Dataset& test_set, std::size_t n, std::size_t chunk) {
  Subset s;
  std::vector<std::size_t> picked;
  const std::size_t total = test_set.size();
  for (std::size_t begin = 0; begin < total && picked.size() < n; begin += chunk) {
    const std::size_t end = std::min(total, begin + chunk);
    const auto pred = classify(test_set.images.slice_rows(begin, end));
    for (std::size_t i = begin; i < end && picked.size() < n; ++i) {
      s.consumed = i + 1;
      if (pred[i - begin] == test_set.labels[i]) picked.push_back(i);
    }
  }
  s.short_of_target = picked.size() < n;
  s.indices = picked;
  if (!picked.empty()) s.data = test_set.subset(picked);
  return s;
}

Subset select_subset(std::span<const int> predictions, const Dataset& test_set, std::size_t n) {
  if (predictions.size() != test_set.size()) throw std::invalid_argument("one prediction per test example");
  Subset s;
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < test_set.size() && picked.size() < n; ++i) {
    s.consumed = i + 1;
    if (predictions[i] == test_set.labels[i]) picked.push_back(i);
  }
  s.short_of_target = picked.size() < n;
  s.indices = picked;
  if (!picked.empty()) s.data = test_set.subset(picked);
  return s;
}

std::vector<int> targets_for(int label, std::size_t num_classes, TargetRule rule) {
  const int j = static_cast<int>(num_classes);
  if (rule == TargetRule::Next) return {(label + 1) % j};
  std::vector<int> t;
  for (int c = 0; c < j; ++c)
    if (c != label) t.push_back(c);
  return t;
}

std::uint64_t job_seed(std::uint64_t seed, std::size_t example, int target) {
  // splitmix64 over the packed job coordinates
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (1 + (static_cast<std::uint64_t>(example) << 8) +
                                                   static_cast<std::uint64_t>(target + 1));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SweepOutcome targeted_sweep(const SweepAttack& attack, const Dataset& subset, const SweepOptions& opts,
                            const FailedResult& failed) {
  const std::size_t n = subset.size();
  std::vector<std::vector<attacks::AttackResult>> per_example(n);
  std::vector<char> ran(n, 0), threw(n, 0);
  std::atomic<std::size_t> errors{0};
  const attacks::Stopwatch clock;
  parallel_for(n, opts.workers, [&](std::size_t i) {
    if (opts.max_seconds > 0.0 && clock.seconds() > opts.max_seconds) return;
    const Tensor x = subset.image(i);
    const int label = subset.labels[i];
    const auto targets = targets_for(label, opts.num_classes, opts.rule);
    try {
      per_example[i] = attack(x, label, targets, job_seed(opts.seed, i, label));
      if (per_example[i].size() != targets.size()) throw std::logic_error("attack returned the wrong result count");
    } catch (const std::exception&) {
      ++errors;
      threw[i] = 1;
      per_example[i].clear();
      for (int t : targets) per_example[i].push_back(failed(x, label, t));
    }
    ran[i] = 1;
  });
  SweepOutcome out;
  out.errors = errors.load();
  for (std::size_t i = 0; i < n; ++i) {
    if (!ran[i]) {
      ++out.skipped_examples;
      continue;
    }
    for (auto& r : per_example[i]) {
      out.results.push_back(std::move(r));
      out.example_of.push_back(i);
      out.errored.push_back(threw[i] != 0);
    }
  }
  return out;
}

}  // namespace rfd::eval
