#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rfd/attacks/result.hpp"
#include "rfd/eval/metrics.hpp"
#include "rfd/eval/records.hpp"

namespace rfd::eval {

inline constexpr int kReportSchema = 1;

struct ReportRow {
  std::string model;
  std::string attack;
  std::optional<double> accuracy;  // percent, clean test accuracy of `model`
  Metrics metrics;
  std::size_t n_examples = 0;  // distinct examples attacked
  std::size_t n_excluded = 0;  // runs whose attack threw or could not run
  nlohmann::json extra = nlohmann::json::object();
};

struct Report {
  nlohmann::json meta = nlohmann::json::object();  // copied from the stream header
  std::vector<ReportRow> rows;
};

/// One row per (model, attack) in order of first appearance. Row accuracy
/// and extras come from header.models[model].accuracy and
/// header.row_extra["model/attack"].
Report build_report(const Stream& stream);
/// Same, with success flags replaced by `success` (one per record).
Report build_report(const Stream& stream, const std::vector<bool>& success);

const ReportRow* find_row(const Report& r, const std::string& model, const std::string& attack);

/// {"schema", "body": {meta, rows, ablations}, "timing": {...}}. The body
/// holds nothing time-dependent, so reruns with equal seeds reproduce it
/// byte for byte.
nlohmann::json report_json(const Report& r);
std::string report_csv(const Report& r);

struct Verification {
  std::size_t checked = 0;
  std::size_t mismatches = 0;
  std::vector<std::size_t> mismatched;  // record indices
  std::vector<bool> success;            // freshly recomputed flags
  bool ok() const { return mismatches == 0; }
};

/// Re-queries every adversarial example on the model named in its record
/// and checks label, success flag, box and distances against the record.
/// Records for models missing from `models` count as mismatches.
Verification reverify(const Stream& stream, const std::map<std::string, attacks::LabelFn>& models);

}  // namespace rfd::eval
