#pragma once

// JSON forms of the tunable configs. Readers start from the defaults, reject
// unknown keys and ill-typed values with ConfigError, and run validate().

#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "rfd/attacks/blackbox.hpp"
#include "rfd/attacks/whitebox.hpp"
#include "rfd/forest.hpp"
#include "rfd/train.hpp"

namespace rfd::io {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& where = "train");
nlohmann::json to_json(const TrainConfig& c);

forest::GrowthParams growth_params_from_json(const nlohmann::json& j, const std::string& where = "forest");
/// Leaves out `threads`, which never changes the grown forest.
nlohmann::json to_json(const forest::GrowthParams& p);

attacks::CwConfig cw_config_from_json(const nlohmann::json& j, const std::string& where = "cw_l2");
nlohmann::json to_json(const attacks::CwConfig& c);

attacks::ZooConfig zoo_config_from_json(const nlohmann::json& j, const std::string& where = "zoo");
nlohmann::json to_json(const attacks::ZooConfig& c);

attacks::BoundaryConfig boundary_config_from_json(const nlohmann::json& j, const std::string& where = "boundary");
nlohmann::json to_json(const attacks::BoundaryConfig& c);

attacks::SubstituteConfig substitute_config_from_json(const nlohmann::json& j,
                                                      const std::string& where = "substitute");
nlohmann::json to_json(const attacks::SubstituteConfig& c);

/// Parses a config file; ConfigError names the file on syntax errors.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// SHA-256 of the canonical (sorted-key, compact) dump.
std::string config_digest(const nlohmann::json& j);

/// Resolves `p` against `base` unless it is absolute.
std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p);

/// Strict field reader used by the config parsers.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string where);

  template <class T>
  void optional(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.push_back(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + "." + key + ": unexpected value " + j_.at(key).dump());
    }
  }

  template <class T>
  void required(const char* key, T& out) {
    if (!j_.contains(key)) throw ConfigError(where_ + ": missing key '" + key + "'");
    optional(key, out);
  }

  const nlohmann::json* sub(const char* key);
  bool has(const char* key) const { return j_.contains(key); }
  /// Throws on keys that were never read.
  void finish() const;

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

}  // namespace rfd::io
