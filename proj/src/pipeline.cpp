#include "rfd/pipeline.hpp"

#include <sstream>

#include "rfd/attacks/oracle.hpp"
#include "rfd/io/config.hpp"
#include "rfd/io/encoding.hpp"
#include "rfd/io/files.hpp"
#include "rfd/io/idx.hpp"
#include "rfd/io/model_file.hpp"

namespace rfd::pipeline {

using nlohmann::json;
using io::ConfigError;
using io::FieldReader;

namespace {

void say(const LogFn& log, const std::string& s) {
  if (log) log(s);
}

void check_schema(FieldReader& r, const std::string& where) {
  int schema = 0;
  r.required("schema_version", schema);
  if (schema != kConfigSchema) throw ConfigError(where + ": unsupported schema_version " + std::to_string(schema));
}

DataPaths data_paths(const json& j, const std::filesystem::path& base, const std::string& where) {
  FieldReader r(j, where);
  std::string images, labels;
  r.required("images", images);
  r.required("labels", labels);
  r.finish();
  return {io::resolve_path(base, images), io::resolve_path(base, labels)};
}

DataPaths required_paths(FieldReader& r, const char* key, const std::filesystem::path& base,
                         const std::string& where) {
  const json* j = r.sub(key);
  if (!j) throw ConfigError(where + ": missing key '" + key + "'");
  return data_paths(*j, base, where + "." + key);
}

std::filesystem::path output_path(FieldReader& r, const std::filesystem::path& base, const std::string& where) {
  std::string out;
  r.required("output", out);
  if (out.empty()) throw ConfigError(where + ".output must not be empty");
  return io::resolve_path(base, out);
}

void require_files(std::initializer_list<std::filesystem::path> paths) {
  for (const auto& p : paths)
    if (!std::filesystem::is_regular_file(p)) throw ConfigError("missing input file " + p.string());
}

void ensure_parent(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

Dataset load(const DataPaths& p, std::size_t limit = 0) {
  Dataset d = io::load_idx(p.images, p.labels);
  return limit ? d.head(std::min(limit, d.size())) : d;
}

}  // namespace

TrainDnnConfig parse_train_dnn(const json& j, const std::filesystem::path& base_dir) {
  TrainDnnConfig c;
  c.source = j;
  c.digest = io::config_digest(j);
  FieldReader r(j, "train-dnn");
  check_schema(r, "train-dnn");
  r.optional("seed", c.seed);
  c.train = required_paths(r, "train", base_dir, "train-dnn");
  c.test = required_paths(r, "test", base_dir, "train-dnn");
  r.optional("train_limit", c.train_limit);
  if (const json* o = r.sub("optimizer")) c.optimizer = io::train_config_from_json(*o, "train-dnn.optimizer");
  c.output = output_path(r, base_dir, "train-dnn");
  r.finish();
  return c;
}

TrainDnnOutcome run_train_dnn(const TrainDnnConfig& cfg, const LogFn& log) {
  require_files({cfg.train.images, cfg.train.labels, cfg.test.images, cfg.test.labels});
  const Dataset train_set = load(cfg.train, cfg.train_limit);
  const Dataset test_set = load(cfg.test);
  train_set.validate(10);
  test_set.validate(10);

  Network net = build_mnistnet(cfg.seed);
  say(log, "training on " + std::to_string(train_set.size()) + " images for " +
               std::to_string(cfg.optimizer.epochs) + " epochs");
  const auto report = train(net, train_set, cfg.optimizer, nullptr,
                            [&](std::size_t e, std::size_t b, std::size_t n, double loss) {
                              if (b % 100 == 0 || b == n) {
                                char buf[96];
                                std::snprintf(buf, sizeof buf, "epoch %zu batch %zu/%zu loss %.4f", e + 1, b, n, loss);
                                say(log, buf);
                              }
                            });
  const double acc = 100.0 * accuracy(net, test_set);

  json meta{{"config_digest", cfg.digest},
            {"seed", cfg.seed},
            {"config", cfg.source},
            {"train_examples", train_set.size()},
            {"epoch_loss", report.epoch_loss},
            {"test_accuracy", acc}};
  ensure_parent(cfg.output);
  io::save_network(cfg.output, net, meta);
  return {std::move(net), acc, std::move(meta)};
}

ProfileConfig parse_profile(const json& j, const std::filesystem::path& base_dir) {
  ProfileConfig c;
  c.source = j;
  c.digest = io::config_digest(j);
  FieldReader r(j, "profile");
  check_schema(r, "profile");
  r.optional("seed", c.seed);
  c.test = required_paths(r, "test", base_dir, "profile");
  r.optional("examples", c.examples);
  if (c.examples == 0) throw ConfigError("profile.examples must be >= 1");
  std::string rule = "all";
  r.optional("target_rule", rule);
  if (rule == "all") c.target_rule = eval::TargetRule::All;
  else if (rule == "next") c.target_rule = eval::TargetRule::Next;
  else throw ConfigError("profile.target_rule must be \"all\" or \"next\"");
  if (const json* cw = r.sub("cw")) c.cw = io::cw_config_from_json(*cw, "profile.cw");
  r.optional("workers", c.workers);
  c.output = output_path(r, base_dir, "profile");
  if (r.has("results")) {
    std::string p;
    r.optional("results", p);
    c.results = io::resolve_path(base_dir, p);
  }
  r.finish();
  return c;
}

hybrid::DistanceProfile profile_from_records(const Network& net, const eval::Stream& stream,
                                             const std::string& source) {
  std::vector<Tensor> clean, adv;
  for (const auto& r : stream.records) {
    if (!r.result.success) continue;
    clean.push_back(r.result.original);
    adv.push_back(r.result.adversarial);
  }
  if (clean.empty()) throw std::runtime_error("no successful adversarial examples to profile");
  return hybrid::distance_profile(net, stack(clean), stack(adv), source);
}

ProfileOutcome run_profile(const std::filesystem::path& model, const ProfileConfig& cfg, const LogFn& log) {
  require_files({model, cfg.test.images, cfg.test.labels});
  const auto file = io::load_network(model);
  const Network& net = file.network;
  const Dataset test_set = load(cfg.test);

  const auto pred = predict_labels(net, test_set.images);
  const auto subset = eval::select_subset(pred, test_set, cfg.examples);
  if (subset.short_of_target)
    say(log, "warning: only " + std::to_string(subset.indices.size()) + " correctly classified examples");
  say(log, "C&W on " + std::to_string(subset.indices.size()) + " examples");

  const attacks::LabelFn verify = [&net](const Tensor& x) {
    return static_cast<int>(argmax(net.forward_one(x).data()));
  };
  const eval::SweepAttack attack = [&](const Tensor& x, int label, std::span<const int> targets, std::uint64_t) {
    return attacks::cw_l2(net, x, label, targets, cfg.cw);
  };
  const eval::FailedResult failed = [&](const Tensor& x, int label, int target) {
    return attacks::make_result("cw_l2", x, x, label, target, verify, 1, 0.0);
  };
  const eval::SweepOptions opts{cfg.target_rule, 10, cfg.workers, cfg.seed, 0.0};
  auto sweep = eval::targeted_sweep(attack, subset.data, opts, failed);

  ProfileOutcome out;
  out.stream.header = {{"config_digest", cfg.digest}, {"seed", cfg.seed}, {"config", cfg.source},
                       {"models", {{"dnn", {{"path", model.string()}}}}}};
  for (std::size_t k = 0; k < sweep.results.size(); ++k) {
    out.stream.records.push_back(
        {"dnn", "dnn", subset.indices[sweep.example_of[k]], std::move(sweep.results[k]), sweep.errored[k], false});
  }
  out.profile = profile_from_records(net, out.stream, "cw_l2 on " + model.filename().string());
  out.choice = hybrid::select_tap(out.profile.d);

  ensure_parent(cfg.output);
  save_profile_csv(cfg.output, out.profile, cfg.digest, cfg.seed);
  if (cfg.results) {
    ensure_parent(*cfg.results);
    eval::write_stream(*cfg.results, out.stream);
  }
  return out;
}

void save_profile_csv(const std::filesystem::path& path, const hybrid::DistanceProfile& p, const std::string& digest,
                      std::uint64_t seed) {
  std::ostringstream s;
  s << "# config_digest=" << digest << " seed=" << seed << " pairs=" << p.sample_count << "\n";
  hybrid::write_profile_csv(s, p);
  io::write_file_atomic(path, s.str());
}

GrowConfig parse_grow(const json& j, const std::filesystem::path& base_dir) {
  GrowConfig c;
  c.source = j;
  c.digest = io::config_digest(j);
  FieldReader r(j, "grow");
  check_schema(r, "grow");
  if (const json* f = r.sub("forest")) c.forest = io::growth_params_from_json(*f, "grow.forest");
  c.train = required_paths(r, "train", base_dir, "grow");
  if (const json* t = r.sub("test")) c.test = data_paths(*t, base_dir, "grow.test");
  r.optional("train_limit", c.train_limit);
  c.output = output_path(r, base_dir, "grow");
  r.finish();
  return c;
}

GrowOutcome run_grow(const std::filesystem::path& model, std::size_t tap, const GrowConfig& cfg, const LogFn& log) {
  require_files({model, cfg.train.images, cfg.train.labels});
  if (cfg.test) require_files({cfg.test->images, cfg.test->labels});
  const auto file = io::load_network(model);
  if (tap == 0 || tap > file.network.num_activations()) {
    throw ConfigError("tap " + std::to_string(tap) + " is not an activation of " + model.string() + " (1.." +
                      std::to_string(file.network.num_activations()) + ")");
  }
  const Dataset train_set = load(cfg.train, cfg.train_limit);
  say(log, "growing " + std::to_string(cfg.forest.num_trees) + " trees on activation " + std::to_string(tap) +
               " of " + std::to_string(train_set.size()) + " images");
  const auto h = hybrid::build_hybrid(file.network, tap, train_set, cfg.forest);

  GrowOutcome out;
  if (cfg.test) out.test_accuracy = 100.0 * hybrid::accuracy(h, load(*cfg.test));
  out.meta = {{"config_digest", cfg.digest},
              {"seed", cfg.forest.seed},
              {"config", cfg.source},
              {"tap", tap},
              {"dnn_sha256", io::sha256_hex(io::read_file(model))},
              {"train_examples", train_set.size()},
              {"test_accuracy", out.test_accuracy ? json(*out.test_accuracy) : json(nullptr)}};
  ensure_parent(cfg.output);
  h.save(cfg.output, out.meta);
  return out;
}

}  // namespace rfd::pipeline
