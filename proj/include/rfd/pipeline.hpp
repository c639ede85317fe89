#pragma once

// The pipeline stages behind the command-line tool: each reads a versioned
// JSON config, validates it before touching any output, and writes its
// artifact atomically with the config digest and seed embedded.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "json.hpp"
#include "rfd/attacks/whitebox.hpp"
#include "rfd/eval/metrics.hpp"
#include "rfd/eval/records.hpp"
#include "rfd/forest.hpp"
#include "rfd/hybrid.hpp"
#include "rfd/network.hpp"
#include "rfd/train.hpp"

namespace rfd::pipeline {

inline constexpr int kConfigSchema = 1;

using LogFn = std::function<void(const std::string&)>;

struct DataPaths {
  std::filesystem::path images;
  std::filesystem::path labels;
};

struct TrainDnnConfig {
  nlohmann::json source;
  std::string digest;
  std::uint64_t seed = 1;  // weight init; the optimizer has its own seed
  DataPaths train;
  DataPaths test;
  std::size_t train_limit = 0;  // 0: whole training set
  TrainConfig optimizer;
  std::filesystem::path output;
};

TrainDnnConfig parse_train_dnn(const nlohmann::json& j, const std::filesystem::path& base_dir);

struct TrainDnnOutcome {
  Network network;
  double test_accuracy = 0.0;  // percent
  nlohmann::json meta;
};

/// Trains MNISTnet and saves it to cfg.output.
TrainDnnOutcome run_train_dnn(const TrainDnnConfig& cfg, const LogFn& log = {});

struct ProfileConfig {
  nlohmann::json source;
  std::string digest;
  std::uint64_t seed = 1;
  DataPaths test;
  std::size_t examples = 100;
  eval::TargetRule target_rule = eval::TargetRule::All;
  attacks::CwConfig cw;
  std::size_t workers = 0;
  std::filesystem::path output;                 // profile CSV
  std::optional<std::filesystem::path> results;  // optional C&W result stream
};

ProfileConfig parse_profile(const nlohmann::json& j, const std::filesystem::path& base_dir);

/// Profile over the successful runs of a result stream: each adversarial is
/// paired with its original.
hybrid::DistanceProfile profile_from_records(const Network& net, const eval::Stream& stream,
                                             const std::string& source);

struct ProfileOutcome {
  hybrid::DistanceProfile profile;
  hybrid::TapChoice choice;
  eval::Stream stream;
};

/// Runs C&W on the first correctly classified test examples, then writes
/// the distance profile of the successful runs.
ProfileOutcome run_profile(const std::filesystem::path& model, const ProfileConfig& cfg, const LogFn& log = {});

struct GrowConfig {
  nlohmann::json source;
  std::string digest;
  forest::GrowthParams forest;
  DataPaths train;
  std::optional<DataPaths> test;
  std::size_t train_limit = 0;
  std::filesystem::path output;
};

GrowConfig parse_grow(const nlohmann::json& j, const std::filesystem::path& base_dir);

struct GrowOutcome {
  std::optional<double> test_accuracy;  // percent
  nlohmann::json meta;
};

GrowOutcome run_grow(const std::filesystem::path& model, std::size_t tap, const GrowConfig& cfg,
                     const LogFn& log = {});

/// Writes a profile CSV with a leading comment carrying digest and seed.
void save_profile_csv(const std::filesystem::path& path, const hybrid::DistanceProfile& p, const std::string& digest,
                      std::uint64_t seed);

}  // namespace rfd::pipeline
