#pragma once

// Attack campaigns: a versioned JSON config names the DNN and hybrid model
// files, the test set, the subset rule and a list of attacks; the runner
// attacks both models on the same examples with the same seeds, persists
// the result stream and builds the report from it.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfd/attacks/blackbox.hpp"
#include "rfd/attacks/whitebox.hpp"
#include "rfd/eval/metrics.hpp"
#include "rfd/eval/records.hpp"
#include "rfd/eval/report.hpp"
#include "rfd/forest.hpp"

namespace rfd::eval {

inline constexpr int kCampaignSchema = 1;

enum class AttackKind { CwL2, Zoo, Boundary, Substitute };

enum class CorrectOn { Dnn, Hybrid, Both };

struct AttackSpec {
  AttackKind kind = AttackKind::CwL2;
  /// Leading subset examples this attack runs on; 0 means all of them.
  std::size_t examples = 0;
  TargetRule target_rule = TargetRule::All;

  attacks::CwConfig cw;
  bool transfer = true;  // also score the DNN's C&W examples on both models

  attacks::ZooConfig zoo_dnn;
  attacks::ZooConfig zoo_hybrid;

  attacks::BoundaryConfig boundary;

  attacks::SubstituteConfig substitute;
  double fgsm_epsilon = 0.4;
  std::size_t seeds_first = 9850;  // substitute seeds: test[first, first + count)
  std::size_t seeds_count = 150;
};

struct AblationSpec {
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::size_t train_limit = 0;  // 0: whole training set
  std::size_t eval_limit = 0;   // 0: whole test set
  forest::GrowthParams forest;

  std::size_t grid_tap = 6;
  std::vector<std::size_t> grid_trees;
  std::vector<std::size_t> grid_nodes;

  std::vector<std::size_t> taps;
};

struct CampaignConfig {
  nlohmann::json source;  // the parsed config, as written
  std::string digest;     // SHA-256 of source
  std::uint64_t seed = 1;
  std::filesystem::path dnn_model;
  std::filesystem::path hybrid_model;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::size_t subset_n = 100;
  CorrectOn correct_on = CorrectOn::Both;
  std::size_t workers = 0;
  /// Attacks not finished when this runs out stop early; 0 disables it.
  double max_seconds = 0.0;
  std::filesystem::path results;
  std::filesystem::path report_json;
  std::filesystem::path report_csv;
  std::vector<AttackSpec> attacks;
  std::optional<AblationSpec> ablations;
};

/// Relative paths resolve against `base_dir`. Throws io::ConfigError.
CampaignConfig parse_campaign(const nlohmann::json& j, const std::filesystem::path& base_dir);
CampaignConfig load_campaign(const std::filesystem::path& path);

/// Throws io::ConfigError naming the first missing input file.
void check_inputs(const CampaignConfig& cfg);

struct CampaignOutcome {
  Stream stream;
  Report report;
  /// The campaign time budget ran out and some runs were skipped.
  bool budget_exhausted = false;
};

using LogFn = std::function<void(const std::string&)>;

/// Runs every attack on both models, rewriting the result stream after each
/// attack so an interrupted campaign still leaves its finished part on disk,
/// then writes the JSON and CSV reports.
CampaignOutcome run_campaign(const CampaignConfig& cfg, const LogFn& log = {});

std::string to_string(AttackKind k);

}  // namespace rfd::eval
