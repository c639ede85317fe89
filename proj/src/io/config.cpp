#include "rfd/io/config.hpp"

#include <algorithm>

#include "rfd/io/encoding.hpp"
#include "rfd/io/files.hpp"

namespace rfd::io {

using nlohmann::json;

FieldReader::FieldReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
  if (!j_.is_object()) throw ConfigError(where_ + ": expected an object, got " + j_.dump());
}

const json* FieldReader::sub(const char* key) {
  if (!j_.contains(key)) return nullptr;
  seen_.push_back(key);
  return &j_.at(key);
}

void FieldReader::finish() const {
  for (const auto& [k, v] : j_.items()) {
    if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
      throw ConfigError(where_ + ": unknown key '" + k + "'");
  }
}

namespace {

template <class C>
void checked(const C& c, const std::string& where) {
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

TrainConfig train_config_from_json(const json& j, const std::string& where) {
  TrainConfig c;
  FieldReader r(j, where);
  r.optional("epochs", c.epochs);
  r.optional("batch_size", c.batch_size);
  r.optional("lr", c.lr);
  r.optional("momentum", c.momentum);
  r.optional("lr_decay", c.lr_decay);
  r.optional("seed", c.seed);
  r.finish();
  checked(c, where);
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},
          {"momentum", c.momentum}, {"lr_decay", c.lr_decay}, {"seed", c.seed}};
}

forest::GrowthParams growth_params_from_json(const json& j, const std::string& where) {
  forest::GrowthParams p;
  FieldReader r(j, where);
  r.optional("num_trees", p.num_trees);
  r.optional("max_nodes", p.max_nodes);
  r.optional("min_leaf", p.min_leaf);
  r.optional("features_per_split", p.features_per_split);
  r.optional("seed", p.seed);
  r.optional("bootstrap", p.bootstrap);
  r.optional("weighted_gini", p.weighted_gini);
  r.optional("threads", p.threads);
  r.finish();
  checked(p, where);
  return p;
}

json to_json(const forest::GrowthParams& p) {
  return {{"num_trees", p.num_trees}, {"max_nodes", p.max_nodes},
          {"min_leaf", p.min_leaf},   {"features_per_split", p.features_per_split},
          {"seed", p.seed},           {"bootstrap", p.bootstrap},
          {"weighted_gini", p.weighted_gini}};
}

attacks::CwConfig cw_config_from_json(const json& j, const std::string& where) {
  attacks::CwConfig c;
  FieldReader r(j, where);
  r.optional("kappa", c.kappa);
  r.optional("binary_search_steps", c.binary_search_steps);
  r.optional("initial_const", c.initial_const);
  r.optional("max_iterations", c.max_iterations);
  r.optional("learning_rate", c.learning_rate);
  r.optional("abort_early", c.abort_early);
  r.optional("max_seconds", c.max_seconds);
  r.finish();
  checked(c, where);
  return c;
}

json to_json(const attacks::CwConfig& c) {
  return {{"kappa", c.kappa},
          {"binary_search_steps", c.binary_search_steps},
          {"initial_const", c.initial_const},
          {"max_iterations", c.max_iterations},
          {"learning_rate", c.learning_rate},
          {"abort_early", c.abort_early},
          {"max_seconds", c.max_seconds}};
}

attacks::ZooConfig zoo_config_from_json(const json& j, const std::string& where) {
  attacks::ZooConfig c;
  FieldReader r(j, where);
  r.optional("kappa", c.kappa);
  r.optional("max_iterations", c.max_iterations);
  r.optional("batch_coordinates", c.batch_coordinates);
  r.optional("h", c.h);
  r.optional("learning_rate", c.learning_rate);
  r.optional("binary_search_steps", c.binary_search_steps);
  r.optional("initial_const", c.initial_const);
  r.optional("abort_early", c.abort_early);
  r.optional("max_queries", c.max_queries);
  r.optional("max_seconds", c.max_seconds);
  r.optional("seed", c.seed);
  r.finish();
  checked(c, where);
  return c;
}

json to_json(const attacks::ZooConfig& c) {
  return {{"kappa", c.kappa},
          {"max_iterations", c.max_iterations},
          {"batch_coordinates", c.batch_coordinates},
          {"h", c.h},
          {"learning_rate", c.learning_rate},
          {"binary_search_steps", c.binary_search_steps},
          {"initial_const", c.initial_const},
          {"abort_early", c.abort_early},
          {"max_queries", c.max_queries},
          {"max_seconds", c.max_seconds},
          {"seed", c.seed}};
}

attacks::BoundaryConfig boundary_config_from_json(const json& j, const std::string& where) {
  attacks::BoundaryConfig c;
  FieldReader r(j, where);
  r.optional("delta", c.delta);
  r.optional("epsilon", c.epsilon);
  r.optional("candidates", c.candidates);
  r.optional("max_steps", c.max_steps);
  r.optional("window", c.window);
  r.optional("max_queries", c.max_queries);
  r.optional("max_seconds", c.max_seconds);
  r.optional("seed", c.seed);
  r.finish();
  checked(c, where);
  return c;
}

json to_json(const attacks::BoundaryConfig& c) {
  return {{"delta", c.delta},         {"epsilon", c.epsilon},         {"candidates", c.candidates},
          {"max_steps", c.max_steps}, {"window", c.window},           {"max_queries", c.max_queries},
          {"max_seconds", c.max_seconds}, {"seed", c.seed}};
}

attacks::SubstituteConfig substitute_config_from_json(const json& j, const std::string& where) {
  attacks::SubstituteConfig c;
  FieldReader r(j, where);
  r.optional("augmentation_rounds", c.augmentation_rounds);
  r.optional("lambda", c.lambda);
  r.optional("hidden", c.hidden);
  if (const json* t = r.sub("train")) c.train = train_config_from_json(*t, where + ".train");
  r.optional("num_classes", c.num_classes);
  r.optional("max_queries", c.max_queries);
  r.finish();
  checked(c, where);
  return c;
}

json to_json(const attacks::SubstituteConfig& c) {
  return {{"augmentation_rounds", c.augmentation_rounds},
          {"lambda", c.lambda},
          {"hidden", c.hidden},
          {"train", to_json(c.train)},
          {"num_classes", c.num_classes},
          {"max_queries", c.max_queries}};
}

json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string config_digest(const json& j) { return sha256_hex(j.dump()); }

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path q(p);
  return q.is_absolute() ? q : base / q;
}

}  // namespace rfd::io
