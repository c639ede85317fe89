#pragma once

// Random forest of axis-aligned classification trees.
//
// Nodes split on "feature <= threshold" (left) with thresholds at midpoints
// between consecutive distinct values. A split is scored by G(L) + G(R),
// the plain sum of the child Gini impurities; the sample-weighted sum is
// available through GrowthParams::weighted_gini.

#include <bit>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rfd/io/binary.hpp"
#include "rfd/tensor.hpp"

namespace rfd::forest {

using Counts = std::vector<std::uint32_t>;

/// 1 - sum_j (c_j / n)^2. Throws std::invalid_argument when all counts are 0.
double gini(std::span<const std::uint32_t> counts);

/// G(L) + G(R), or (n_L G(L) + n_R G(R)) / n when weighted. Throws on an
/// empty side.
double split_score(std::span<const std::uint32_t> left, std::span<const std::uint32_t> right,
                   bool weighted = false);

struct GrowthParams {
  std::size_t num_trees = 10;
  /// Internal nodes plus leaves, per tree.
  std::size_t max_nodes = 1000;
  std::size_t min_leaf = 1;
  /// 0 selects ceil(sqrt(d)).
  std::size_t features_per_split = 0;
  std::uint64_t seed = 1;
  bool bootstrap = true;
  bool weighted_gini = false;
  /// Worker threads for growing trees; 0 uses the hardware concurrency.
  std::size_t threads = 0;

  void validate() const;
  std::size_t resolved_features_per_split(std::size_t d) const;
};

struct TreeNode {
  static constexpr std::int32_t kLeaf = -1;

  std::int32_t feature = kLeaf;
  double threshold = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  /// Class histogram of the training samples that reached this node.
  Counts counts;

  bool is_leaf() const noexcept { return feature == kLeaf; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  std::size_t leaf_index(std::span<const double> x) const;
  std::size_t depth() const;
};

/// A row-major feature matrix view.
struct FeatureView {
  std::span<const double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct Split {
  std::size_t feature = 0;
  double threshold = 0.0;
  double score = 0.0;
  Counts left_counts;
  Counts right_counts;
};

/// Best split of `samples` over `features`, scanned in ascending feature then
/// threshold order; later candidates win only if strictly better by more than
/// kScoreTolerance. Candidates leaving fewer than min_leaf samples on a side
/// are skipped. Returns nullopt if no candidate qualifies.
inline constexpr double kScoreTolerance = 1e-12;
std::optional<Split> find_best_split(const FeatureView& x, std::span<const int> labels,
                                     std::span<const std::size_t> samples, std::span<const std::size_t> features,
                                     std::size_t num_classes, std::size_t min_leaf, bool weighted);

/// Grows a single tree on the given (possibly repeated) sample indices.
Tree grow_tree(const FeatureView& x, std::span<const int> labels, std::span<const std::size_t> samples,
               std::size_t num_classes, const GrowthParams& params, std::uint64_t tree_seed);

inline bool operator==(const TreeNode& a, const TreeNode& b) {
  return a.feature == b.feature && a.left == b.left && a.right == b.right && a.counts == b.counts &&
         std::bit_cast<std::uint64_t>(a.threshold) == std::bit_cast<std::uint64_t>(b.threshold);
}
inline bool operator==(const Tree& a, const Tree& b) { return a.nodes == b.nodes; }
inline bool operator==(const GrowthParams& a, const GrowthParams& b) {
  return a.num_trees == b.num_trees && a.max_nodes == b.max_nodes && a.min_leaf == b.min_leaf &&
         a.features_per_split == b.features_per_split && a.seed == b.seed && a.bootstrap == b.bootstrap &&
         a.weighted_gini == b.weighted_gini;
}

class Forest {
 public:
  Forest() = default;
  Forest(std::size_t num_classes, std::size_t feature_dim, GrowthParams params, std::vector<Tree> trees);

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  const GrowthParams& params() const noexcept { return params_; }
  const std::vector<Tree>& trees() const noexcept { return trees_; }

  /// Mean over trees of the normalised leaf histograms.
  std::vector<double> predict_proba(std::span<const double> x) const;
  /// [N, d] -> [N, J]
  Tensor predict_proba(const Tensor& features) const;
  /// Argmax of predict_proba, ties to the lowest class.
  int predict(std::span<const double> x) const;

  void encode(io::ByteWriter& out) const;
  static Forest decode(io::ByteReader& in);

  bool operator==(const Forest&) const = default;

 private:
  std::size_t num_classes_ = 0;
  std::size_t feature_dim_ = 0;
  GrowthParams params_;
  std::vector<Tree> trees_;
};

/// Grows params.num_trees trees; tree h is seeded with params.seed ^ h and
/// draws a bootstrap sample of size N when params.bootstrap is set.
/// `features` is [N, d]; labels lie in [0, num_classes).
Forest grow_forest(const Tensor& features, std::span<const int> labels, std::size_t num_classes,
                   const GrowthParams& params);

}  // namespace rfd::forest
