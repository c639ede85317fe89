#include "rfd/eval/report.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace rfd::eval {

using nlohmann::json;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string csv_num(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

Report build_report(const Stream& stream) {
  std::vector<bool> success;
  success.reserve(stream.records.size());
  for (const auto& r : stream.records) success.push_back(r.result.success);
  return build_report(stream, success);
}

Report build_report(const Stream& stream, const std::vector<bool>& success) {
  if (success.size() != stream.records.size()) throw std::invalid_argument("one success flag per record");
  Report rep;
  rep.meta = stream.header;

  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < stream.records.size(); ++i) {
    const auto& r = stream.records[i];
    auto key = std::make_pair(r.model, r.result.attack);
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) keys.push_back(key);
    it->second.push_back(i);
  }

  const json models = stream.header.value("models", json::object());
  const json extras = stream.header.value("row_extra", json::object());
  for (const auto& key : keys) {
    ReportRow row;
    row.model = key.first;
    row.attack = key.second;
    if (models.contains(row.model) && models[row.model].contains("accuracy"))
      row.accuracy = models[row.model]["accuracy"].get<double>();
    const std::string extra_key = row.model + "/" + row.attack;
    if (extras.contains(extra_key)) row.extra = extras[extra_key];

    std::vector<Outcome> outcomes;
    std::set<std::size_t> examples;
    for (std::size_t i : groups[key]) {
      const auto& r = stream.records[i];
      outcomes.push_back({success[i], r.result.l2, r.result.seconds});
      examples.insert(r.example);
      if (r.error || r.structural) ++row.n_excluded;
    }
    row.metrics = compute_metrics(outcomes);
    row.n_examples = examples.size();
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

const ReportRow* find_row(const Report& r, const std::string& model, const std::string& attack) {
  for (const auto& row : r.rows)
    if (row.model == model && row.attack == attack) return &row;
  return nullptr;
}

json report_json(const Report& r) {
  json meta = r.meta;
  json timing = json::object();
  if (meta.contains("timing")) {
    timing["campaign"] = meta["timing"];
    meta.erase("timing");
  }
  json ablations = meta.contains("ablations") ? meta["ablations"] : json::object();
  meta.erase("ablations");
  meta.erase("type");

  json rows = json::array();
  json row_times = json::array();
  for (const auto& row : r.rows) {
    const auto& m = row.metrics;
    rows.push_back({
        {"model", row.model},
        {"attack", row.attack},
        {"accuracy", opt(row.accuracy)},
        {"asr", opt(m.asr)},
        {"mean_l2", opt(m.mean_l2)},
        {"mean_l2_squared", opt(m.mean_l2_squared)},
        {"n_examples", row.n_examples},
        {"n_attempts", m.attempts},
        {"n_success", m.successes},
        {"n_excluded", row.n_excluded},
        {"extra", row.extra},
    });
    row_times.push_back({{"model", row.model}, {"attack", row.attack}, {"mean_seconds", opt(m.mean_seconds)}});
  }
  timing["rows"] = std::move(row_times);
  json body{{"meta", meta}, {"rows", rows}, {"empty", r.rows.empty()}, {"ablations", ablations}};
  return json{{"schema", kReportSchema}, {"body", std::move(body)}, {"timing", std::move(timing)}};
}

std::string report_csv(const Report& r) {
  std::string out;
  if (r.meta.contains("config_digest")) {
    out += "# config_digest=" + r.meta["config_digest"].get<std::string>() +
           " seed=" + r.meta.value("seed", json(nullptr)).dump() + "\n";
  }
  out +=
      "model,attack,accuracy,asr,mean_l2,mean_l2_squared,mean_seconds,n_examples,n_attempts,n_success,n_excluded\n";
  if (r.rows.empty()) return out + "# no rows\n";
  for (const auto& row : r.rows) {
    const auto& m = row.metrics;
    out += row.model + "," + row.attack + "," + csv_num(row.accuracy) + "," + csv_num(m.asr) + "," +
           csv_num(m.mean_l2) + "," + csv_num(m.mean_l2_squared) + "," + csv_num(m.mean_seconds) + "," +
           std::to_string(row.n_examples) + "," + std::to_string(m.attempts) + "," + std::to_string(m.successes) +
           "," + std::to_string(row.n_excluded) + "\n";
  }
  return out;
}

Verification reverify(const Stream& stream, const std::map<std::string, attacks::LabelFn>& models) {
  Verification v;
  for (std::size_t i = 0; i < stream.records.size(); ++i) {
    const auto& rec = stream.records[i];
    const auto& a = rec.result;
    ++v.checked;
    auto it = models.find(rec.model);
    bool fresh_success = false;
    bool agree = it != models.end();
    if (agree) {
      const int predicted = it->second(a.adversarial);
      fresh_success = attacks::is_success(predicted, a.true_label, a.target);
      const double sq = squared_l2_distance(a.original.data(), a.adversarial.data());
      agree = predicted == a.predicted && fresh_success == a.success && attacks::in_box(a.adversarial) &&
              sq == a.l2_squared && std::sqrt(sq) == a.l2;
    }
    v.success.push_back(fresh_success);
    if (!agree) {
      ++v.mismatches;
      v.mismatched.push_back(i);
    }
  }
  return v;
}

}  // namespace rfd::eval
