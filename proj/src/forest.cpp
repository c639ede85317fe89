#include "rfd/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <queue>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>

namespace rfd::forest {

namespace {

std::uint64_t total(std::span<const std::uint32_t> c) {
  return std::accumulate(c.begin(), c.end(), std::uint64_t{0});
}

std::uint64_t sum_squares(std::span<const std::uint32_t> c) {
  std::uint64_t s = 0;
  for (auto v : c) s += std::uint64_t{v} * v;
  return s;
}

// Gini from integer sufficient statistics, so the incremental scan and the
// standalone gini() agree to the last bit.
double gini_from(std::uint64_t sumsq, std::uint64_t n) {
  const double nd = static_cast<double>(n);
  return 1.0 - static_cast<double>(sumsq) / (nd * nd);
}

double score_from(std::uint64_t sq_l, std::uint64_t n_l, std::uint64_t sq_r, std::uint64_t n_r, bool weighted) {
  const double gl = gini_from(sq_l, n_l), gr = gini_from(sq_r, n_r);
  if (!weighted) return gl + gr;
  return (static_cast<double>(n_l) * gl + static_cast<double>(n_r) * gr) / static_cast<double>(n_l + n_r);
}

double midpoint(double a, double b) {
  const double mid = 0.5 * a + 0.5 * b;
  return (mid >= a && mid < b) ? mid : a;
}

}  // namespace

double gini(std::span<const std::uint32_t> counts) {
  const auto n = total(counts);
  if (n == 0) throw std::invalid_argument("gini of an empty count vector");
  return gini_from(sum_squares(counts), n);
}

double split_score(std::span<const std::uint32_t> left, std::span<const std::uint32_t> right, bool weighted) {
  const auto nl = total(left), nr = total(right);
  if (nl == 0 || nr == 0) throw std::invalid_argument("split side is empty");
  return score_from(sum_squares(left), nl, sum_squares(right), nr, weighted);
}

void GrowthParams::validate() const {
  if (num_trees == 0) throw std::invalid_argument("num_trees must be >= 1");
  if (max_nodes == 0) throw std::invalid_argument("max_nodes must be >= 1");
  if (min_leaf == 0) throw std::invalid_argument("min_leaf must be >= 1");
}

std::size_t GrowthParams::resolved_features_per_split(std::size_t d) const {
  if (d == 0) return 0;
  if (features_per_split != 0) return std::min(features_per_split, d);
  auto m = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
  while (m * m < d) ++m;
  while (m > 1 && (m - 1) * (m - 1) >= d) --m;
  return std::min(m, d);
}

std::size_t Tree::leaf_index(std::span<const double> x) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
  return i;
}

std::size_t Tree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (!nodes[i].is_leaf()) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
  }
  return best;
}

std::optional<Split> find_best_split(const FeatureView& x, std::span<const int> labels,
                                     std::span<const std::size_t> samples, std::span<const std::size_t> features,
                                     std::size_t num_classes, std::size_t min_leaf, bool weighted) {
  const std::size_t n = samples.size();
  if (n < 2 * std::max<std::size_t>(min_leaf, 1)) return std::nullopt;

  Counts parent(num_classes, 0);
  for (auto s : samples) ++parent[static_cast<std::size_t>(labels[s])];
  const std::uint64_t parent_sq = sum_squares(parent);

  std::vector<std::size_t> order(features.begin(), features.end());
  std::sort(order.begin(), order.end());

  std::optional<Split> best;
  std::vector<std::pair<double, int>> column(n);
  Counts left(num_classes), right(num_classes);
  for (std::size_t f : order) {
    for (std::size_t i = 0; i < n; ++i) column[i] = {x.at(samples[i], f), labels[samples[i]]};
    std::sort(column.begin(), column.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    if (!(column.front().first < column.back().first)) continue;

    std::fill(left.begin(), left.end(), 0);
    right = parent;
    std::uint64_t sq_l = 0, sq_r = parent_sq;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const auto c = static_cast<std::size_t>(column[i].second);
      sq_l += 2 * std::uint64_t{left[c]} + 1;
      sq_r -= 2 * std::uint64_t{right[c]} - 1;
      ++left[c];
      --right[c];
      if (!(column[i].first < column[i + 1].first)) continue;
      const std::size_t n_l = i + 1, n_r = n - n_l;
      if (n_l < min_leaf || n_r < min_leaf) continue;
      const double s = score_from(sq_l, n_l, sq_r, n_r, weighted);
      if (!best || s < best->score - kScoreTolerance) {
        if (!best) best.emplace();
        best->feature = f;
        best->threshold = midpoint(column[i].first, column[i + 1].first);
        best->score = s;
        best->left_counts = left;
        best->right_counts = right;
      }
    }
  }
  return best;
}

namespace {

struct Candidate {
  double priority;
  std::uint32_t node;
  bool operator<(const Candidate& o) const {
    // std::priority_queue pops the largest; ties go to the older node.
    if (priority != o.priority) return priority < o.priority;
    return node > o.node;
  }
};

double weighted_decrease(const Counts& parent, const Split& s) {
  const double n = static_cast<double>(total(parent));
  const double nl = static_cast<double>(total(s.left_counts));
  const double nr = static_cast<double>(total(s.right_counts));
  return n * gini(parent) - nl * gini(s.left_counts) - nr * gini(s.right_counts);
}

}  // namespace

Tree grow_tree(const FeatureView& x, std::span<const int> labels, std::span<const std::size_t> samples,
               std::size_t num_classes, const GrowthParams& params, std::uint64_t tree_seed) {
  if (samples.empty()) throw std::invalid_argument("grow_tree needs at least one sample");
  std::mt19937_64 rng(tree_seed);
  const std::size_t d = x.cols;
  const std::size_t m = params.resolved_features_per_split(d);

  Tree tree;
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::optional<Split>> pending;

  auto add_node = [&](std::vector<std::size_t> idx) {
    TreeNode node;
    node.counts.assign(num_classes, 0);
    for (auto s : idx) ++node.counts[static_cast<std::size_t>(labels[s])];
    tree.nodes.push_back(std::move(node));
    members.push_back(std::move(idx));
    pending.emplace_back();
    return static_cast<std::uint32_t>(tree.nodes.size() - 1);
  };

  std::vector<std::size_t> perm(d);
  auto propose = [&](std::uint32_t id) -> std::optional<Split> {
    const auto& idx = members[id];
    if (d == 0 || gini(tree.nodes[id].counts) == 0.0) return std::nullopt;
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    auto split = find_best_split(x, labels, idx, std::span(perm).first(m), num_classes, params.min_leaf,
                                 params.weighted_gini);
    // Keep drawing features one at a time when the sampled subset is constant
    // on this node.
    for (std::size_t j = m; !split && j < d; ++j) {
      split = find_best_split(x, labels, idx, std::span(perm).subspan(j, 1), num_classes, params.min_leaf,
                              params.weighted_gini);
    }
    return split;
  };

  std::priority_queue<Candidate> frontier;
  const auto root = add_node({samples.begin(), samples.end()});
  if (params.max_nodes >= 3) {
    pending[root] = propose(root);
    if (pending[root]) frontier.push({weighted_decrease(tree.nodes[root].counts, *pending[root]), root});
  }

  while (!frontier.empty() && tree.nodes.size() + 2 <= params.max_nodes) {
    const auto id = frontier.top().node;
    frontier.pop();
    const Split split = std::move(*pending[id]);
    pending[id].reset();

    std::vector<std::size_t> left_idx, right_idx;
    for (auto s : members[id]) (x.at(s, split.feature) <= split.threshold ? left_idx : right_idx).push_back(s);
    members[id].clear();
    members[id].shrink_to_fit();

    const auto l = add_node(std::move(left_idx));
    const auto r = add_node(std::move(right_idx));
    auto& node = tree.nodes[id];
    node.feature = static_cast<std::int32_t>(split.feature);
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;

    for (auto child : {l, r}) {
      pending[child] = propose(child);
      if (pending[child]) frontier.push({weighted_decrease(tree.nodes[child].counts, *pending[child]), child});
    }
  }
  return tree;
}

Forest::Forest(std::size_t num_classes, std::size_t feature_dim, GrowthParams params, std::vector<Tree> trees)
    : num_classes_(num_classes), feature_dim_(feature_dim), params_(params), trees_(std::move(trees)) {
  if (num_classes_ == 0) throw std::invalid_argument("forest needs at least one class");
  if (trees_.empty()) throw std::invalid_argument("forest needs at least one tree");
  for (std::size_t h = 0; h < trees_.size(); ++h) {
    const auto& nodes = trees_[h].nodes;
    if (nodes.empty()) throw std::invalid_argument("tree " + std::to_string(h) + " has no nodes");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      const std::string where = "tree " + std::to_string(h) + " node " + std::to_string(i);
      if (n.counts.size() != num_classes_) throw std::invalid_argument(where + ": wrong histogram length");
      if (n.is_leaf()) {
        if (total(n.counts) == 0) throw std::invalid_argument(where + ": empty leaf");
        continue;
      }
      if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= feature_dim_)
        throw std::invalid_argument(where + ": feature index out of range");
      // Children always follow their parent, which also rules out cycles.
      if (n.left <= i || n.right <= i || n.left >= nodes.size() || n.right >= nodes.size())
        throw std::invalid_argument(where + ": bad child offset");
    }
  }
}

std::vector<double> Forest::predict_proba(std::span<const double> x) const {
  if (x.size() != feature_dim_) {
    throw std::invalid_argument("forest expects " + std::to_string(feature_dim_) + " features, got " +
                                std::to_string(x.size()));
  }
  std::vector<double> p(num_classes_, 0.0);
  for (const auto& t : trees_) {
    const auto& leaf = t.nodes[t.leaf_index(x)];
    const double n = static_cast<double>(total(leaf.counts));
    for (std::size_t j = 0; j < num_classes_; ++j) p[j] += static_cast<double>(leaf.counts[j]) / n;
  }
  const double h = static_cast<double>(trees_.size());
  for (auto& v : p) v /= h;
  return p;
}

Tensor Forest::predict_proba(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != feature_dim_) {
    throw std::invalid_argument("forest expects [N, " + std::to_string(feature_dim_) + "] features, got " +
                                to_string(features.shape()));
  }
  const std::size_t n = features.dim(0);
  Tensor out({n, num_classes_});
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = predict_proba(features.data().subspan(i * feature_dim_, feature_dim_));
    std::copy(p.begin(), p.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * num_classes_));
  }
  return out;
}

int Forest::predict(std::span<const double> x) const {
  const auto p = predict_proba(x);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

void Forest::encode(io::ByteWriter& out) const {
  out.u64(num_classes_);
  out.u64(feature_dim_);
  out.u64(params_.num_trees);
  out.u64(params_.max_nodes);
  out.u64(params_.min_leaf);
  out.u64(params_.features_per_split);
  out.u64(params_.seed);
  out.u8(params_.bootstrap ? 1 : 0);
  out.u8(params_.weighted_gini ? 1 : 0);
  out.u64(trees_.size());
  for (const auto& t : trees_) {
    out.u32(static_cast<std::uint32_t>(t.nodes.size()));
    for (const auto& n : t.nodes) {
      out.i32(n.feature);
      out.f64(n.threshold);
      out.u32(n.left);
      out.u32(n.right);
      for (auto c : n.counts) out.u32(c);
    }
  }
}

Forest Forest::decode(io::ByteReader& in) {
  const auto j = in.u64();
  const auto d = in.u64();
  GrowthParams p;
  p.num_trees = in.u64();
  p.max_nodes = in.u64();
  p.min_leaf = in.u64();
  p.features_per_split = in.u64();
  p.seed = in.u64();
  p.bootstrap = in.u8() != 0;
  p.weighted_gini = in.u8() != 0;
  const std::size_t per_node = 20 + 4 * static_cast<std::size_t>(j);
  const auto h = in.checked_size(in.u64(), 4);
  std::vector<Tree> trees(h);
  for (auto& t : trees) {
    t.nodes.resize(in.checked_size(in.u32(), per_node));
    for (auto& n : t.nodes) {
      n.feature = in.i32();
      n.threshold = in.f64();
      n.left = in.u32();
      n.right = in.u32();
      n.counts.resize(j);
      for (auto& c : n.counts) c = in.u32();
    }
  }
  try {
    return Forest(j, d, p, std::move(trees));
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(std::string("invalid forest section: ") + e.what());
  }
}

Forest grow_forest(const Tensor& features, std::span<const int> labels, std::size_t num_classes,
                   const GrowthParams& params) {
  params.validate();
  if (features.rank() != 2) throw std::invalid_argument("grow_forest expects [N, d] features");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (n == 0) throw std::invalid_argument("grow_forest needs at least one sample");
  if (labels.size() != n) throw std::invalid_argument("grow_forest: label count does not match rows");
  if (num_classes == 0) throw std::invalid_argument("grow_forest: num_classes must be >= 1");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
      throw std::invalid_argument("grow_forest: label " + std::to_string(l) + " out of range");
  }
  const FeatureView view{features.data(), n, d};

  std::vector<Tree> trees(params.num_trees);
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t h; (h = next.fetch_add(1)) < trees.size();) try {
      const std::uint64_t seed = params.seed ^ h;
      std::vector<std::size_t> samples(n);
      if (params.bootstrap) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (auto& s : samples) s = pick(rng);
        // The tree's own generator is offset so it does not replay the draws.
        trees[h] = grow_tree(view, labels, samples, num_classes, params, seed + 0x9E3779B97F4A7C15ULL);
      } else {
        std::iota(samples.begin(), samples.end(), std::size_t{0});
        trees[h] = grow_tree(view, labels, samples, num_classes, params, seed);
      }
    } catch (...) {
      std::lock_guard lock(error_mu);
      if (!error) error = std::current_exception();
    }
  };
  std::size_t threads = params.threads ? params.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, trees.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < threads; ++i) pool.emplace_back(worker);
    worker();
  }
  if (error) std::rethrow_exception(error);
  return Forest(num_classes, d, params, std::move(trees));
}

}  // namespace rfd::forest
