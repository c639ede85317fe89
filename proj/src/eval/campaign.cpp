#include "rfd/eval/campaign.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "rfd/attacks/oracle.hpp"
#include "rfd/hybrid.hpp"
#include "rfd/io/config.hpp"
#include "rfd/io/encoding.hpp"
#include "rfd/io/files.hpp"
#include "rfd/io/idx.hpp"
#include "rfd/io/model_file.hpp"
#include "rfd/train.hpp"

namespace rfd::eval {

using nlohmann::json;
using io::ConfigError;
using io::FieldReader;

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::CwL2: return "cw_l2";
    case AttackKind::Zoo: return "zoo";
    case AttackKind::Boundary: return "boundary";
    case AttackKind::Substitute: return "substitute";
  }
  return "?";
}

namespace {

TargetRule parse_rule(const std::string& s, const std::string& where) {
  if (s == "all") return TargetRule::All;
  if (s == "next") return TargetRule::Next;
  throw ConfigError(where + ": target_rule must be \"all\" or \"next\", got \"" + s + "\"");
}

json merged(const json& base, const json* patch) {
  json out = base;
  if (patch) out.merge_patch(*patch);
  return out;
}

AttackSpec parse_attack(const json& j, std::size_t index, TargetRule default_rule) {
  const std::string where = "attacks[" + std::to_string(index) + "]";
  FieldReader r(j, where);
  std::string type;
  r.required("type", type);
  AttackSpec a;
  r.optional("examples", a.examples);
  a.target_rule = default_rule;
  if (r.has("target_rule")) {
    std::string rule;
    r.optional("target_rule", rule);
    a.target_rule = parse_rule(rule, where);
  }
  const json* config = r.sub("config");
  const json empty = json::object();
  const json& base = config ? *config : empty;

  if (type == "cw_l2") {
    a.kind = AttackKind::CwL2;
    a.cw = io::cw_config_from_json(base, where + ".config");
    r.optional("transfer", a.transfer);
  } else if (type == "zoo") {
    a.kind = AttackKind::Zoo;
    a.zoo_dnn = io::zoo_config_from_json(merged(base, r.sub("dnn")), where + ".dnn");
    a.zoo_hybrid = io::zoo_config_from_json(merged(base, r.sub("hybrid")), where + ".hybrid");
  } else if (type == "boundary") {
    a.kind = AttackKind::Boundary;
    a.boundary = io::boundary_config_from_json(base, where + ".config");
  } else if (type == "substitute") {
    a.kind = AttackKind::Substitute;
    a.substitute = io::substitute_config_from_json(base, where + ".config");
    r.optional("epsilon", a.fgsm_epsilon);
    if (!(a.fgsm_epsilon >= 0.0)) throw ConfigError(where + ".epsilon must be >= 0");
    if (const json* seeds = r.sub("seeds")) {
      FieldReader s(*seeds, where + ".seeds");
      s.optional("first", a.seeds_first);
      s.optional("count", a.seeds_count);
      s.finish();
      if (a.seeds_count == 0) throw ConfigError(where + ".seeds.count must be >= 1");
    }
  } else {
    throw ConfigError(where + ": unknown attack type \"" + type + "\"");
  }
  r.finish();
  return a;
}

AblationSpec parse_ablations(const json& j, const std::filesystem::path& base_dir) {
  AblationSpec s;
  FieldReader r(j, "ablations");
  const json* train = r.sub("train");
  if (!train) throw ConfigError("ablations: missing key 'train'");
  {
    FieldReader t(*train, "ablations.train");
    std::string images, labels;
    t.required("images", images);
    t.required("labels", labels);
    t.finish();
    s.train_images = io::resolve_path(base_dir, images);
    s.train_labels = io::resolve_path(base_dir, labels);
  }
  r.optional("train_limit", s.train_limit);
  r.optional("eval_limit", s.eval_limit);
  if (const json* f = r.sub("forest")) s.forest = io::growth_params_from_json(*f, "ablations.forest");
  if (const json* g = r.sub("trees_nodes")) {
    FieldReader gr(*g, "ablations.trees_nodes");
    gr.optional("tap", s.grid_tap);
    gr.required("trees", s.grid_trees);
    gr.required("nodes", s.grid_nodes);
    gr.finish();
    for (auto v : s.grid_trees)
      if (v == 0) throw ConfigError("ablations.trees_nodes.trees: entries must be >= 1");
    for (auto v : s.grid_nodes)
      if (v == 0) throw ConfigError("ablations.trees_nodes.nodes: entries must be >= 1");
  }
  if (const json* t = r.sub("taps")) {
    FieldReader tr(*t, "ablations.taps");
    tr.required("taps", s.taps);
    tr.finish();
    for (auto v : s.taps)
      if (v == 0) throw ConfigError("ablations.taps.taps: activation indices start at 1");
  }
  r.finish();
  return s;
}

}  // namespace

CampaignConfig parse_campaign(const json& j, const std::filesystem::path& base_dir) {
  CampaignConfig c;
  c.source = j;
  c.digest = io::config_digest(j);
  FieldReader r(j, "campaign");
  int schema = 0;
  r.required("schema_version", schema);
  if (schema != kCampaignSchema)
    throw ConfigError("campaign: unsupported schema_version " + std::to_string(schema));
  r.optional("seed", c.seed);

  auto paths = [&](const char* key, std::initializer_list<std::pair<const char*, std::filesystem::path*>> fields) {
    const json* sub = r.sub(key);
    if (!sub) throw ConfigError(std::string("campaign: missing key '") + key + "'");
    FieldReader f(*sub, std::string("campaign.") + key);
    for (const auto& [name, out] : fields) {
      std::string p;
      f.required(name, p);
      *out = io::resolve_path(base_dir, p);
    }
    f.finish();
  };
  paths("models", {{"dnn", &c.dnn_model}, {"hybrid", &c.hybrid_model}});
  paths("test", {{"images", &c.test_images}, {"labels", &c.test_labels}});
  paths("output", {{"results", &c.results}, {"report_json", &c.report_json}, {"report_csv", &c.report_csv}});

  if (const json* s = r.sub("subset")) {
    FieldReader f(*s, "campaign.subset");
    f.optional("n", c.subset_n);
    std::string on = "both";
    f.optional("correct_on", on);
    f.finish();
    if (on == "dnn") c.correct_on = CorrectOn::Dnn;
    else if (on == "hybrid") c.correct_on = CorrectOn::Hybrid;
    else if (on == "both") c.correct_on = CorrectOn::Both;
    else throw ConfigError("campaign.subset.correct_on must be dnn, hybrid or both");
    if (c.subset_n == 0) throw ConfigError("campaign.subset.n must be >= 1");
  }
  std::string rule = "all";
  r.optional("target_rule", rule);
  const TargetRule default_rule = parse_rule(rule, "campaign");
  r.optional("workers", c.workers);
  r.optional("max_seconds", c.max_seconds);
  if (c.max_seconds < 0.0) throw ConfigError("campaign.max_seconds must be >= 0");

  if (const json* list = r.sub("attacks")) {
    if (!list->is_array()) throw ConfigError("campaign.attacks must be an array");
    for (std::size_t i = 0; i < list->size(); ++i) c.attacks.push_back(parse_attack((*list)[i], i, default_rule));
  }
  if (const json* a = r.sub("ablations")) c.ablations = parse_ablations(*a, base_dir);
  r.finish();
  return c;
}

CampaignConfig load_campaign(const std::filesystem::path& path) {
  return parse_campaign(io::read_json_file(path), path.parent_path());
}

void check_inputs(const CampaignConfig& cfg) {
  std::vector<std::filesystem::path> inputs{cfg.dnn_model, cfg.hybrid_model, cfg.test_images, cfg.test_labels};
  if (cfg.ablations) {
    inputs.push_back(cfg.ablations->train_images);
    inputs.push_back(cfg.ablations->train_labels);
  }
  for (const auto& p : inputs) {
    if (!std::filesystem::is_regular_file(p)) throw ConfigError("missing input file " + p.string());
  }
}

namespace {

using attacks::AttackResult;

class Runner {
 public:
  Runner(const CampaignConfig& cfg, const LogFn& log)
      : cfg_(cfg),
        log_(log),
        test_(io::load_idx(cfg.test_images, cfg.test_labels)),
        dnn_(io::load_network(cfg.dnn_model).network),
        hybrid_(hybrid::HybridModel::load(cfg.hybrid_model)) {
    if (dnn_.input_shape() != test_.image_shape() || hybrid_.input_shape() != test_.image_shape()) {
      throw ConfigError("model input shapes " + rfd::to_string(dnn_.input_shape()) + " / " +
                        rfd::to_string(hybrid_.input_shape()) + " do not match test images " +
                        rfd::to_string(test_.image_shape()));
    }
    dnn_label_ = [this](const Tensor& x) { return static_cast<int>(argmax(dnn_.forward_one(x).data())); };
    hybrid_label_ = [this](const Tensor& x) { return hybrid_.classify(x).label; };
  }

  CampaignOutcome run() {
    say("classifying " + std::to_string(test_.size()) + " test images");
    dnn_pred_ = predict_labels(dnn_, test_.images);
    hybrid_pred_ = hybrid_.classify_labels(test_.images);
    select();
    write_header();

    for (std::size_t a = 0; a < cfg_.attacks.size(); ++a) {
      const auto& spec = cfg_.attacks[a];
      if (out_of_time()) {
        say("time budget spent; skipping " + to_string(spec.kind));
        exhausted_ = true;
        continue;
      }
      const Stopwatch watch;
      const std::uint64_t seed = cfg_.seed + a;
      switch (spec.kind) {
        case AttackKind::CwL2: run_cw(spec, seed); break;
        case AttackKind::Zoo: run_zoo(spec, seed); break;
        case AttackKind::Boundary: run_boundary(spec, seed); break;
        case AttackKind::Substitute: run_substitute(spec); break;
      }
      stream_.header["timing"]["attacks"][std::to_string(a) + ":" + to_string(spec.kind)] = watch.seconds();
      write_file(cfg_.results, [&] { write_stream(cfg_.results, stream_); });
    }
    if (cfg_.ablations) run_ablations(*cfg_.ablations);
    stream_.header["budget_exhausted"] = exhausted_;
    stream_.header["timing"]["campaign_seconds"] = clock_.seconds();
    write_file(cfg_.results, [&] { write_stream(cfg_.results, stream_); });

    CampaignOutcome out;
    out.report = build_report(stream_);
    write_file(cfg_.report_json, [&] { io::write_file_atomic(cfg_.report_json, report_json(out.report).dump(2) + "\n"); });
    write_file(cfg_.report_csv, [&] { io::write_file_atomic(cfg_.report_csv, report_csv(out.report)); });
    out.budget_exhausted = exhausted_;
    out.stream = std::move(stream_);
    return out;
  }

 private:
  using Stopwatch = attacks::Stopwatch;

  void say(const std::string& s) const {
    if (log_) log_(s);
  }

  template <class F>
  static void write_file(const std::filesystem::path& p, F&& f) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    f();
  }

  double remaining() const {
    if (cfg_.max_seconds <= 0.0) return 0.0;
    return std::max(1e-9, cfg_.max_seconds - clock_.seconds());
  }
  bool out_of_time() const { return cfg_.max_seconds > 0.0 && clock_.seconds() >= cfg_.max_seconds; }

  void select() {
    std::vector<int> joint(test_.size());
    for (std::size_t i = 0; i < test_.size(); ++i) {
      const int y = test_.labels[i];
      const bool ok_d = dnn_pred_[i] == y, ok_h = hybrid_pred_[i] == y;
      const bool ok = cfg_.correct_on == CorrectOn::Dnn      ? ok_d
                      : cfg_.correct_on == CorrectOn::Hybrid ? ok_h
                                                             : ok_d && ok_h;
      joint[i] = ok ? y : -1;
    }
    subset_ = select_subset(joint, test_, cfg_.subset_n);
    if (subset_.short_of_target) {
      say("warning: only " + std::to_string(subset_.indices.size()) + " of " + std::to_string(cfg_.subset_n) +
          " requested examples are classified correctly");
    }
  }

  static double percent_correct(const std::vector<int>& pred, const std::vector<int>& labels) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) ok += pred[i] == labels[i];
    return 100.0 * static_cast<double>(ok) / static_cast<double>(labels.size());
  }

  void write_header() {
    const char* on = cfg_.correct_on == CorrectOn::Dnn ? "dnn" : cfg_.correct_on == CorrectOn::Hybrid ? "hybrid" : "both";
    stream_.header = json{
        {"campaign_schema", kCampaignSchema},
        {"config_digest", cfg_.digest},
        {"seed", cfg_.seed},
        {"config", cfg_.source},
        {"models",
         {{"dnn",
           {{"path", cfg_.dnn_model.string()},
            {"sha256", io::sha256_hex(io::read_file(cfg_.dnn_model))},
            {"accuracy", percent_correct(dnn_pred_, test_.labels)}}},
          {"hybrid",
           {{"path", cfg_.hybrid_model.string()},
            {"sha256", io::sha256_hex(io::read_file(cfg_.hybrid_model))},
            {"accuracy", percent_correct(hybrid_pred_, test_.labels)},
            {"tap", hybrid_.tap()}}}}},
        {"test", {{"images", cfg_.test_images.string()}, {"labels", cfg_.test_labels.string()}, {"size", test_.size()}}},
        {"subset",
         {{"n", cfg_.subset_n},
          {"selected", subset_.indices.size()},
          {"consumed", subset_.consumed},
          {"short_of_target", subset_.short_of_target},
          {"correct_on", on}}},
        {"row_extra", json::object()},
        {"ablations", json::object()},
        {"timing", json::object()},
    };
  }

  // Leading subset examples for one attack.
  std::size_t count_for(const AttackSpec& spec) const {
    const std::size_t n = subset_.indices.size();
    return spec.examples == 0 ? n : std::min(spec.examples, n);
  }

  void add(const std::string& model, const std::string& source, std::size_t example, AttackResult r, bool error,
           bool structural) {
    stream_.records.push_back({model, source, example, std::move(r), error, structural});
  }

  void sweep(const std::string& model, const std::string& name, const AttackSpec& spec, std::uint64_t seed,
             const SweepAttack& attack, const attacks::LabelFn& verify) {
    const std::size_t n = count_for(spec);
    const Dataset sub = subset_.data.head(n);
    SweepOptions opts{spec.target_rule, hybrid_.num_classes(), cfg_.workers, seed, remaining()};
    const FailedResult failed = [&](const Tensor& x, int label, int target) {
      return attacks::make_result(name, x, x, label, target, verify, 1, 0.0);
    };
    say(name + " on " + model + ": " + std::to_string(n) + " examples");
    auto out = targeted_sweep(attack, sub, opts, failed);
    if (out.errors) say(name + " on " + model + ": " + std::to_string(out.errors) + " runs threw");
    if (out.skipped_examples) {
      say(name + " on " + model + ": time budget skipped " + std::to_string(out.skipped_examples) + " examples");
      exhausted_ = true;
    }
    for (std::size_t k = 0; k < out.results.size(); ++k)
      add(model, model, subset_.indices[out.example_of[k]], std::move(out.results[k]), out.errored[k], false);
  }

  void run_cw(const AttackSpec& spec, std::uint64_t seed) {
    const std::size_t first = stream_.records.size();
    sweep("dnn", "cw_l2", spec, seed,
          [&](const Tensor& x, int label, std::span<const int> targets, std::uint64_t) {
            return attacks::cw_l2(dnn_, x, label, targets, spec.cw);
          },
          dnn_label_);
    const std::size_t last = stream_.records.size();

    // The hybrid exposes no gradients, so the white-box attack cannot start:
    // each run returns its input unchanged and is scored by a fresh query.
    const std::size_t n = count_for(spec);
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor x = subset_.data.image(i);
      const int label = subset_.data.labels[i];
      for (int t : targets_for(label, hybrid_.num_classes(), spec.target_rule))
        add("hybrid", "hybrid", subset_.indices[i],
            attacks::make_result("cw_l2", x, x, label, t, hybrid_label_, 1, 0.0), false, true);
    }
    stream_.header["row_extra"]["hybrid/cw_l2"] = {{"note", "no gradient surface; runs return the input unchanged"}};

    if (!spec.transfer) return;
    for (const auto& [model, verify] : {std::pair{"dnn", dnn_label_}, std::pair{"hybrid", hybrid_label_}}) {
      for (std::size_t k = first; k < last; ++k) {
        const Record src = stream_.records[k];
        const auto& a = src.result;
        add(model, "dnn", src.example,
            attacks::make_result("cw_l2_transfer", a.original, a.adversarial, a.true_label, a.target, verify, 1, 0.0),
            src.error, false);
      }
    }
  }

  void run_zoo(const AttackSpec& spec, std::uint64_t seed) {
    const auto dnn_oracle = attacks::soft_oracle(dnn_);
    const auto hybrid_oracle = attacks::soft_oracle(hybrid_);
    auto make = [](const attacks::SoftOracle& oracle, const attacks::ZooConfig& base) -> SweepAttack {
      return [&oracle, base](const Tensor& x, int label, std::span<const int> targets, std::uint64_t s) {
        std::vector<AttackResult> out;
        for (int t : targets) {
          attacks::ZooConfig c = base;
          c.seed = job_seed(s, 0, t);
          out.push_back(attacks::zoo(oracle, x, label, t, c));
        }
        return out;
      };
    };
    sweep("dnn", "zoo", spec, seed, make(dnn_oracle, spec.zoo_dnn), dnn_label_);
    sweep("hybrid", "zoo", spec, seed, make(hybrid_oracle, spec.zoo_hybrid), hybrid_label_);
    stream_.header["row_extra"]["dnn/zoo"] = {{"max_iterations", spec.zoo_dnn.max_iterations}};
    stream_.header["row_extra"]["hybrid/zoo"] = {{"max_iterations", spec.zoo_hybrid.max_iterations}};
  }

  // First test image of class t that the model also assigns to t.
  std::map<int, std::size_t> target_seeds(const std::vector<int>& pred) const {
    std::map<int, std::size_t> seeds;
    for (std::size_t j = 0; j < test_.size(); ++j) {
      const int y = test_.labels[j];
      if (pred[j] == y && !seeds.contains(y)) seeds[y] = j;
    }
    return seeds;
  }

  void run_boundary(const AttackSpec& spec, std::uint64_t seed) {
    const auto dnn_oracle = attacks::label_oracle(dnn_);
    const auto hybrid_oracle = attacks::label_oracle(hybrid_);
    auto make = [&](const attacks::LabelOracle& oracle, const std::map<int, std::size_t>& seeds) -> SweepAttack {
      return [&, seeds](const Tensor& x, int label, std::span<const int> targets, std::uint64_t s) {
        std::vector<AttackResult> out;
        for (int t : targets) {
          attacks::BoundaryConfig c = spec.boundary;
          c.seed = job_seed(s, 0, t);
          auto it = seeds.find(t);
          // Without an image of class t the attack has no starting point; the
          // input itself stands in and the run fails.
          const Tensor start = it == seeds.end() ? x : test_.image(it->second);
          out.push_back(attacks::boundary_attack(oracle, x, label, t, start, c).result);
        }
        return out;
      };
    };
    const auto dnn_seeds = target_seeds(dnn_pred_);
    const auto hybrid_seeds = target_seeds(hybrid_pred_);
    sweep("dnn", "boundary", spec, seed, make(dnn_oracle, dnn_seeds), dnn_label_);
    sweep("hybrid", "boundary", spec, seed, make(hybrid_oracle, hybrid_seeds), hybrid_label_);
    auto seeds_json = [](const std::map<int, std::size_t>& m) {
      json j = json::object();
      for (const auto& [t, i] : m) j[std::to_string(t)] = i;
      return j;
    };
    stream_.header["row_extra"]["dnn/boundary"] = {{"target_seed_index", seeds_json(dnn_seeds)}};
    stream_.header["row_extra"]["hybrid/boundary"] = {{"target_seed_index", seeds_json(hybrid_seeds)}};
  }

  void run_substitute(const AttackSpec& spec) {
    if (spec.seeds_first + spec.seeds_count > test_.size())
      throw ConfigError("substitute seeds run past the end of the test set");
    std::vector<std::size_t> seed_idx(spec.seeds_count), held_out;
    for (std::size_t i = 0; i < spec.seeds_count; ++i) seed_idx[i] = spec.seeds_first + i;
    for (std::size_t i = 0; i < test_.size(); ++i)
      if (i < spec.seeds_first || i >= spec.seeds_first + spec.seeds_count) held_out.push_back(i);
    const Tensor seeds = test_.gather(seed_idx);
    const Dataset held = test_.subset(held_out);
    const std::size_t n = count_for(spec);
    const Dataset sub = subset_.data.head(n);

    for (const auto& [model, verify] : {std::pair{"dnn", dnn_label_}, std::pair{"hybrid", hybrid_label_}}) {
      const bool is_dnn = std::string(model) == "dnn";
      const Stopwatch watch;
      say(std::string("substitute for ") + model + ": training");
      const auto oracle = is_dnn ? attacks::label_oracle(dnn_) : attacks::label_oracle(hybrid_);
      const auto rep = attacks::train_substitute(oracle, seeds, spec.substitute);
      const double train_seconds = watch.seconds();
      const double sub_acc = 100.0 * accuracy(rep.model, held);

      const Stopwatch craft;
      const Tensor adv = attacks::fgsm(rep.model, sub.images, sub.labels, spec.fgsm_epsilon, false);
      const double per = n ? craft.seconds() / static_cast<double>(n) : 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        add(model, "substitute", subset_.indices[i],
            attacks::make_result("substitute", sub.image(i), adv.row(i), sub.labels[i], std::nullopt, verify, 1, per),
            false, false);
      }
      const std::string key = std::string(model) + "/substitute";
      stream_.header["row_extra"][key] = {
          {"substitute_accuracy", sub_acc},       {"substitute_eval_examples", held.size()},
          {"oracle_queries", rep.queries},        {"dataset_size", rep.dataset_size},
          {"rounds_completed", rep.rounds_completed}, {"epsilon", spec.fgsm_epsilon},
          {"budget_exhausted", rep.budget_exhausted}};
      stream_.header["timing"]["substitute_training"][model] = train_seconds;
    }
  }

  void run_ablations(const AblationSpec& spec) {
    Dataset train_set = io::load_idx(spec.train_images, spec.train_labels);
    if (spec.train_limit) train_set = train_set.head(std::min(spec.train_limit, train_set.size()));
    const Dataset eval = spec.eval_limit ? test_.head(std::min(spec.eval_limit, test_.size())) : test_;

    // The DNN's C&W examples, rescored on each ablated hybrid.
    std::vector<const AttackResult*> transfer;
    for (const auto& r : stream_.records)
      if (r.model == "dnn" && r.result.attack == "cw_l2") transfer.push_back(&r.result);

    auto score = [&](const hybrid::HybridModel& h) {
      json row;
      row["accuracy"] = 100.0 * hybrid::accuracy(h, eval);
      if (transfer.empty()) {
        row["transfer_asr"] = nullptr;
      } else {
        std::size_t hits = 0;
        for (const auto* r : transfer) {
          const int p = h.classify(r->adversarial).label;
          hits += attacks::is_success(p, r->true_label, r->target);
        }
        row["transfer_asr"] = 100.0 * static_cast<double>(hits) / static_cast<double>(transfer.size());
        row["transfer_runs"] = transfer.size();
      }
      return row;
    };

    json& out = stream_.header["ablations"];
    out["train_examples"] = train_set.size();
    out["eval_examples"] = eval.size();
    if (!spec.grid_trees.empty()) {
      json rows = json::array();
      if (spec.grid_tap == 0 || spec.grid_tap > dnn_.num_activations())
        throw ConfigError("ablations.trees_nodes.tap " + std::to_string(spec.grid_tap) + " is not an activation");
      const Tensor features = hybrid::tap_features(dnn_, spec.grid_tap, train_set.images);
      for (auto trees : spec.grid_trees) {
        for (auto nodes : spec.grid_nodes) {
          if (out_of_time()) {
            exhausted_ = true;
            break;
          }
          forest::GrowthParams p = spec.forest;
          p.num_trees = trees;
          p.max_nodes = nodes;
          p.seed = job_seed(spec.forest.seed, trees, static_cast<int>(nodes));
          say("ablation: " + std::to_string(trees) + " trees x " + std::to_string(nodes) + " nodes");
          const Stopwatch w;
          const auto h =
              hybrid::build_hybrid(dnn_, spec.grid_tap, features, train_set.labels, p, hybrid_.num_classes());
          json row = score(h);
          row["trees"] = trees;
          row["nodes"] = nodes;
          row["tap"] = spec.grid_tap;
          row["seed"] = p.seed;
          rows.push_back(row);
          stream_.header["timing"]["ablations"]["trees_nodes"].push_back(w.seconds());
        }
      }
      out["trees_nodes"] = rows;
    }
    if (!spec.taps.empty()) {
      json rows = json::array();
      for (auto tap : spec.taps) {
        if (out_of_time()) {
          exhausted_ = true;
          break;
        }
        if (tap > dnn_.num_activations())
          throw ConfigError("ablations.taps: the network has " + std::to_string(dnn_.num_activations()) +
                            " activations, asked for " + std::to_string(tap));
        forest::GrowthParams p = spec.forest;
        p.seed = job_seed(spec.forest.seed, tap, 0);
        say("ablation: tap " + std::to_string(tap));
        const Stopwatch w;
        const auto h = hybrid::build_hybrid(dnn_, tap, train_set, p, hybrid_.num_classes());
        json row = score(h);
        row["tap"] = tap;
        row["seed"] = p.seed;
        rows.push_back(row);
        stream_.header["timing"]["ablations"]["taps"].push_back(w.seconds());
      }
      out["taps"] = rows;
    }
  }

  const CampaignConfig& cfg_;
  const LogFn& log_;
  Stopwatch clock_;
  Dataset test_;
  Network dnn_;
  hybrid::HybridModel hybrid_;
  attacks::LabelFn dnn_label_, hybrid_label_;
  std::vector<int> dnn_pred_, hybrid_pred_;
  Subset subset_;
  Stream stream_;
  bool exhausted_ = false;
};

}  // namespace

CampaignOutcome run_campaign(const CampaignConfig& cfg, const LogFn& log) {
  check_inputs(cfg);
  Runner runner(cfg, log);
  return runner.run();
}

}  // namespace rfd::eval
