#pragma once

// The hybrid classifier: a frozen network prefix whose activation feeds a
// random forest. It has no gradient surface at all; the only operations are
// classification and serialisation.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfd/dataset.hpp"
#include "rfd/forest.hpp"
#include "rfd/network.hpp"

namespace rfd::hybrid {

/// Mean relative L2 change of each activation between clean inputs and
/// their adversarial counterparts.
struct DistanceProfile {
  std::vector<double> d;  // d[k-1] is D_k
  std::vector<std::size_t> excluded_pairs;
  std::size_t sample_count = 0;
  std::string source;

  std::size_t size() const noexcept { return d.size(); }
};

/// D_k = mean_i ||a_i - a~_i|| / ||a_i|| over the pairs whose clean
/// activation k is non-zero; zero-norm pairs are counted in excluded_pairs.
/// Per-layer terms are summed in sorted order, so the result does not depend
/// on pair order.
DistanceProfile distance_profile(const Network& net, const Tensor& clean, const Tensor& adversarial,
                                 std::string source = {}, std::size_t chunk = 64);

enum class TapRule {
  LargestGrowth,    // k = argmax_{j>=2} D_j - D_{j-1}
  LargestDistance,  // k = argmax_{j>=2} D_j
};

struct TapChoice {
  std::size_t k = 0;
  std::size_t tap = 0;  // k - 1: the activation handed to the forest
};

/// Ties (within 1e-12 of the profile's largest magnitude) go to the smaller k.
TapChoice select_tap(const std::vector<double>& profile, TapRule rule = TapRule::LargestGrowth);

void write_profile_csv(std::ostream& out, const DistanceProfile& profile);
/// Reads the activation_index,D_k,excluded_pairs table; '#' lines are skipped.
DistanceProfile read_profile_csv(std::istream& in);

class HybridModel {
 public:
  struct Classification {
    int label = 0;
    std::vector<double> proba;
  };

  /// `net` is truncated after activation `tap`; the forest must take that
  /// activation's flattened size.
  HybridModel(const Network& net, std::size_t tap, forest::Forest forest);

  std::size_t tap() const noexcept { return tap_; }
  const Shape& input_shape() const noexcept { return prefix_.input_shape(); }
  std::size_t num_classes() const noexcept { return forest_.num_classes(); }
  const forest::Forest& forest() const noexcept { return forest_; }

  /// Single example, no batch axis.
  Classification classify(const Tensor& x) const;
  /// [N, ...input] -> [N, J]
  Tensor classify_proba(const Tensor& batch) const;
  std::vector<int> classify_labels(const Tensor& batch, std::size_t chunk = 256) const;

  /// Whole-file container bytes (META, NETW, ACTI, FRST, HYBR).
  std::string serialize(nlohmann::json meta = nlohmann::json::object()) const;
  static HybridModel deserialize(std::string_view bytes, nlohmann::json* meta = nullptr);
  void save(const std::filesystem::path& path, nlohmann::json meta = nlohmann::json::object()) const;
  static HybridModel load(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

 private:
  Network prefix_;
  std::size_t tap_ = 0;
  forest::Forest forest_;
};

static_assert(!Differentiable<HybridModel>);

/// Activation `tap` of every image, flattened: [N, d].
Tensor tap_features(const Network& net, std::size_t tap, const Tensor& images, std::size_t chunk = 256);

/// Grows the forest on features already taken at `tap`.
HybridModel build_hybrid(const Network& net, std::size_t tap, const Tensor& features, std::span<const int> labels,
                         const forest::GrowthParams& params, std::size_t num_classes = 10);

/// Taps `net` at `tap` on every training image and grows the forest there.
HybridModel build_hybrid(const Network& net, std::size_t tap, const Dataset& train_set,
                         const forest::GrowthParams& params, std::size_t num_classes = 10,
                         std::size_t chunk = 256);

double accuracy(const HybridModel& model, const Dataset& data);

}  // namespace rfd::hybrid
