// rfd: train the DNN, profile it, pick the tap, grow the hybrid, run attack
// campaigns and re-verify their result streams.
//
// Exit status: 0 success, 1 runtime failure, 2 invalid input or failed
// re-verification, 3 time budget exhausted (partial results are on disk).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "rfd/eval/campaign.hpp"
#include "rfd/eval/records.hpp"
#include "rfd/eval/report.hpp"
#include "rfd/hybrid.hpp"
#include "rfd/io/config.hpp"
#include "rfd/io/files.hpp"
#include "rfd/io/idx.hpp"
#include "rfd/io/model_file.hpp"
#include "rfd/pipeline.hpp"

namespace {

using namespace rfd;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitBudget = 3;

void log_line(const std::string& s) { std::cerr << s << std::endl; }

std::filesystem::path config_dir(const std::filesystem::path& p) { return p.parent_path(); }

int cmd_train(const std::string& config, const std::string& output) {
  auto cfg = pipeline::parse_train_dnn(io::read_json_file(config), config_dir(config));
  if (!output.empty()) cfg.output = output;
  const auto out = pipeline::run_train_dnn(cfg, log_line);
  std::printf("model=%s test_accuracy=%.2f\n", cfg.output.string().c_str(), out.test_accuracy);
  return kExitOk;
}

int cmd_profile(const std::string& model, const std::string& config, const std::string& output) {
  auto cfg = pipeline::parse_profile(io::read_json_file(config), config_dir(config));
  if (!output.empty()) cfg.output = output;
  const auto out = pipeline::run_profile(model, cfg, log_line);
  std::ifstream in(cfg.output);
  std::cout << in.rdbuf();
  std::printf("k=%zu tap=%zu\n", out.choice.k, out.choice.tap);
  return kExitOk;
}

int cmd_select_tap(const std::string& csv, const std::string& rule) {
  std::ifstream in(csv);
  if (!in) throw io::ConfigError("cannot open " + csv);
  const auto profile = hybrid::read_profile_csv(in);
  const auto r = rule == "distance" ? hybrid::TapRule::LargestDistance : hybrid::TapRule::LargestGrowth;
  const auto choice = hybrid::select_tap(profile.d, r);
  std::printf("k=%zu tap=%zu\n", choice.k, choice.tap);
  return kExitOk;
}

int cmd_grow(const std::string& model, std::size_t tap, const std::string& config, const std::string& output) {
  auto cfg = pipeline::parse_grow(io::read_json_file(config), config_dir(config));
  if (!output.empty()) cfg.output = output;
  const auto out = pipeline::run_grow(model, tap, cfg, log_line);
  if (out.test_accuracy) std::printf("hybrid=%s tap=%zu test_accuracy=%.2f\n", cfg.output.string().c_str(), tap, *out.test_accuracy);
  else std::printf("hybrid=%s tap=%zu\n", cfg.output.string().c_str(), tap);
  return kExitOk;
}

int cmd_attack(const std::string& config) {
  const auto cfg = eval::load_campaign(config);
  const auto out = eval::run_campaign(cfg, log_line);
  std::cout << eval::report_csv(out.report);
  if (out.budget_exhausted) {
    log_line("time budget exhausted; partial results written to " + cfg.results.string());
    return kExitBudget;
  }
  return kExitOk;
}

struct ModelHolder {
  std::optional<Network> dnn;
  std::optional<hybrid::HybridModel> hybrid;
};

int cmd_report(const std::string& results, const std::string& dnn_path, const std::string& hybrid_path,
               const std::string& json_out, const std::string& csv_out, bool verify) {
  const auto stream = eval::read_stream(results);
  std::vector<bool> success;
  bool agree = true;
  if (verify && !stream.records.empty()) {
    const json models = stream.header.value("models", json::object());
    auto path_of = [&](const std::string& name, const std::string& override_path) -> std::string {
      if (!override_path.empty()) return override_path;
      if (models.contains(name) && models[name].contains("path")) return models[name]["path"].get<std::string>();
      return {};
    };
    ModelHolder held;
    std::map<std::string, attacks::LabelFn> fns;
    if (const auto p = path_of("dnn", dnn_path); !p.empty()) {
      held.dnn = io::load_network(p).network;
      fns["dnn"] = [&held](const Tensor& x) { return static_cast<int>(argmax(held.dnn->forward_one(x).data())); };
    }
    if (const auto p = path_of("hybrid", hybrid_path); !p.empty()) {
      held.hybrid = hybrid::HybridModel::load(p);
      fns["hybrid"] = [&held](const Tensor& x) { return held.hybrid->classify(x).label; };
    }
    const auto v = eval::reverify(stream, fns);
    log_line("re-verified " + std::to_string(v.checked) + " records, " + std::to_string(v.mismatches) +
             " mismatches");
    success = v.success;
    agree = v.ok();
  } else {
    for (const auto& r : stream.records) success.push_back(r.result.success);
  }
  const auto rep = eval::build_report(stream, success);
  json doc = eval::report_json(rep);
  doc["body"]["verification"] = {{"performed", verify && !stream.records.empty()}, {"agrees", agree}};
  if (!json_out.empty()) io::write_file_atomic(json_out, doc.dump(2) + "\n");
  if (!csv_out.empty()) io::write_file_atomic(csv_out, eval::report_csv(rep));
  std::cout << eval::report_csv(rep);
  if (!agree) {
    log_line("re-verification disagrees with the recorded results");
    return kExitInvalid;
  }
  return kExitOk;
}

int cmd_export_idx(const std::string& results, const std::string& prefix, const std::string& model,
                   const std::string& attack) {
  const auto stream = eval::read_stream(results);
  std::vector<Tensor> adv;
  std::vector<int> labels;
  for (const auto& r : stream.records) {
    if ((!model.empty() && r.model != model) || (!attack.empty() && r.result.attack != attack)) continue;
    adv.push_back(r.result.adversarial);
    labels.push_back(r.result.target.value_or(r.result.true_label));
  }
  if (adv.empty()) throw io::ConfigError("no records match the filter");
  io::write_idx_f64(prefix + "-images-f64.idx", stack(adv));
  io::write_idx_labels(prefix + "-labels.idx", labels);
  std::printf("exported %zu examples to %s-*.idx\n", adv.size(), prefix.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid DNN + random forest adversarial defense workbench"};
  app.require_subcommand(1);

  std::string config, model, output, csv, rule = "growth", results, dnn, hybrid_path, json_out, csv_out, prefix,
                                         filter_model, filter_attack;
  std::size_t tap = 0;
  bool no_verify = false;

  auto* train = app.add_subcommand("train-dnn", "Train MNISTnet from a config");
  train->add_option("config", config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--output", output, "Override the model path");

  auto* profile = app.add_subcommand("profile", "Run C&W and write the per-activation distance profile");
  profile->add_option("model", model, "DNN model file")->required()->check(CLI::ExistingFile);
  profile->add_option("config", config, "Profile config (JSON)")->required()->check(CLI::ExistingFile);
  profile->add_option("-o,--output", output, "Override the CSV path");

  auto* select = app.add_subcommand("select-tap", "Pick the tap activation from a profile CSV");
  select->add_option("profile", csv, "Profile CSV")->required()->check(CLI::ExistingFile);
  select->add_option("--rule", rule, "growth (default) or distance")->check(CLI::IsMember({"growth", "distance"}));

  auto* grow = app.add_subcommand("grow", "Grow the forest on a DNN activation and save the hybrid");
  grow->add_option("model", model, "DNN model file")->required()->check(CLI::ExistingFile);
  grow->add_option("tap", tap, "Activation index feeding the forest")->required();
  grow->add_option("config", config, "Forest config (JSON)")->required()->check(CLI::ExistingFile);
  grow->add_option("-o,--output", output, "Override the hybrid path");

  auto* attack = app.add_subcommand("attack", "Run an attack campaign");
  attack->add_option("config", config, "Campaign config (JSON)")->required()->check(CLI::ExistingFile);

  auto* report = app.add_subcommand("report", "Rebuild and re-verify a report from a result stream");
  report->add_option("results", results, "Result stream (JSON lines)")->required()->check(CLI::ExistingFile);
  report->add_option("--dnn", dnn, "DNN model (default: path in the stream header)");
  report->add_option("--hybrid", hybrid_path, "Hybrid model (default: path in the stream header)");
  report->add_option("--json", json_out, "Write the JSON report here");
  report->add_option("--csv", csv_out, "Write the CSV report here");
  report->add_flag("--no-verify", no_verify, "Trust the recorded success flags");

  auto* exp = app.add_subcommand("export-idx", "Dump adversarial examples as an f64 IDX batch");
  exp->add_option("results", results, "Result stream (JSON lines)")->required()->check(CLI::ExistingFile);
  exp->add_option("prefix", prefix, "Output path prefix")->required();
  exp->add_option("--model", filter_model, "Only records for this model");
  exp->add_option("--attack", filter_attack, "Only records of this attack");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*train) return cmd_train(config, output);
    if (*profile) return cmd_profile(model, config, output);
    if (*select) return cmd_select_tap(csv, rule);
    if (*grow) return cmd_grow(model, tap, config, output);
    if (*attack) return cmd_attack(config);
    if (*report) return cmd_report(results, dnn, hybrid_path, json_out, csv_out, !no_verify);
    if (*exp) return cmd_export_idx(results, prefix, filter_model, filter_attack);
  } catch (const io::ConfigError& e) {
    std::cerr << "invalid input: " << e.what() << std::endl;
    return kExitInvalid;
  } catch (const io::FormatError& e) {
    std::cerr << "invalid input: " << e.what() << std::endl;
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << std::endl;
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitFailure;
  }
  return kExitFailure;
}
