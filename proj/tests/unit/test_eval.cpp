#include <gtest/gtest.h>

#include <algorithm>
#include <mutex>
#include <random>

#include "rfd/eval/campaign.hpp"
#include "rfd/eval/metrics.hpp"
#include "rfd/eval/records.hpp"
#include "rfd/eval/report.hpp"
#include "rfd/io/config.hpp"
#include "rfd/io/files.hpp"

namespace {

using namespace rfd;
using namespace rfd::eval;
using nlohmann::json;

Dataset labelled(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Dataset d{Tensor({n, 2, 2, 1}), std::vector<int>(n)};
  for (double& v : d.images.data()) v = u(rng);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % 10);
  return d;
}

attacks::AttackResult result(bool success, double l2, double seconds = 0.0) {
  attacks::AttackResult r;
  r.success = success;
  r.l2 = l2;
  r.l2_squared = l2 * l2;
  r.seconds = seconds;
  return r;
}

TEST(SelectSubset, PerfectModelTakesFirstN) {
  const Dataset d = labelled(30, 1);
  const auto s = select_subset(d.labels, d, 12);
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}));
  EXPECT_EQ(s.data.images, d.images.slice_rows(0, 12));
  EXPECT_FALSE(s.short_of_target);
}

TEST(SelectSubset, WrongOnFirstExampleStartsAtOne) {
  const Dataset d = labelled(30, 1);
  std::vector<int> pred = d.labels;
  pred[0] = (pred[0] + 1) % 10;
  EXPECT_EQ(select_subset(pred, d, 5).indices.front(), 1u);
}

TEST(SelectSubset, ShortfallReturnsAllAvailable) {
  const Dataset d = labelled(10, 1);
  std::vector<int> pred = d.labels;
  pred[3] = pred[7] = -1;
  const auto s = select_subset(pred, d, 20);
  EXPECT_TRUE(s.short_of_target);
  EXPECT_EQ(s.indices.size(), 8u);
}

// A stub that is right with probability 0.98 needs about 1000 / 0.98 = 1020.4
// examples to collect 1000 correct ones; the mean over 200 simulated test
// sets has a standard error near 0.1.
TEST(SelectSubset, NinetyEightPercentModelConsumesAbout1020) {
  const Dataset d = labelled(2000, 2);
  std::mt19937_64 rng(3);
  std::bernoulli_distribution right(0.98);
  double total = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> pred(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) pred[i] = right(rng) ? d.labels[i] : -1;
    const BatchLabelFn classify = [&, offset = std::size_t{0}](const Tensor& batch) mutable {
      std::vector<int> out(pred.begin() + static_cast<std::ptrdiff_t>(offset),
                           pred.begin() + static_cast<std::ptrdiff_t>(offset + batch.dim(0)));
      offset += batch.dim(0);
      return out;
    };
    const auto s = select_subset(classify, d, 1000, 128);
    ASSERT_EQ(s.indices.size(), 1000u);
    total += static_cast<double>(s.consumed);
  }
  EXPECT_NEAR(total / 200, 1000 / 0.98, 1.5);
}

TEST(Targets, RulesFollowLabel) {
  EXPECT_EQ(targets_for(3, 10, TargetRule::All), (std::vector<int>{0, 1, 2, 4, 5, 6, 7, 8, 9}));
  EXPECT_EQ(targets_for(9, 10, TargetRule::Next), (std::vector<int>{0}));
}

SweepAttack stub_attack(bool succeed) {
  return [succeed](const Tensor& x, int label, std::span<const int> targets, std::uint64_t) {
    std::vector<attacks::AttackResult> out;
    for (int t : targets) {
      out.push_back(attacks::make_result("stub", x, x, label, t,
                                         [&](const Tensor&) { return succeed ? t : label; }, 1, 0.0));
    }
    return out;
  };
}

const FailedResult kFailed = [](const Tensor& x, int label, int target) {
  return attacks::make_result("stub", x, x, label, target, [label](const Tensor&) { return label; }, 0, 0.0);
};

TEST(TargetedSweep, HundredExamplesGiveNineHundredResults) {
  const auto out = targeted_sweep(stub_attack(true), labelled(100, 4), {TargetRule::All, 10, 3, 1, 0.0}, kFailed);
  ASSERT_EQ(out.results.size(), 900u);
  for (std::size_t k = 0; k < 900; ++k) EXPECT_EQ(out.example_of[k], k / 9);
  EXPECT_EQ(*compute_metrics(out.results).asr, 100.0);
}

TEST(TargetedSweep, AllFailureGivesZeroAsr) {
  const auto out = targeted_sweep(stub_attack(false), labelled(10, 4), {TargetRule::All, 10, 2, 1, 0.0}, kFailed);
  EXPECT_EQ(*compute_metrics(out.results).asr, 0.0);
}

TEST(TargetedSweep, OrderAndSeedsIgnoreWorkerCount) {
  std::vector<std::uint64_t> seen1, seen4;
  auto recorder = [](std::vector<std::uint64_t>& seen) {
    return [&seen](const Tensor& x, int label, std::span<const int> t, std::uint64_t seed) {
      static std::mutex m;
      std::lock_guard lock(m);
      seen.push_back(seed);
      std::vector<attacks::AttackResult> out;
      for (int target : t)
        out.push_back(attacks::make_result("stub", x, x, label, target, [](const Tensor&) { return -1; }, 1, 0.0));
      return out;
    };
  };
  const Dataset d = labelled(12, 5);
  const auto a = targeted_sweep(recorder(seen1), d, {TargetRule::Next, 10, 1, 9, 0.0}, kFailed);
  const auto b = targeted_sweep(recorder(seen4), d, {TargetRule::Next, 10, 4, 9, 0.0}, kFailed);
  std::sort(seen1.begin(), seen1.end());
  std::sort(seen4.begin(), seen4.end());
  EXPECT_EQ(seen1, seen4);
  for (std::size_t k = 0; k < a.results.size(); ++k) EXPECT_EQ(a.results[k].target, b.results[k].target);
}

TEST(Metrics, NineOfTen) {
  std::vector<attacks::AttackResult> rs(9, result(true, 1.0));
  rs.push_back(result(false, 5.0));
  const auto m = compute_metrics(rs);
  EXPECT_EQ(*m.asr, 90.0);
  EXPECT_EQ(*m.mean_l2, 1.0);
}

TEST(Metrics, SingleZeroDistortionSuccess) { EXPECT_EQ(*compute_metrics(std::vector{result(true, 0.0)}).mean_l2, 0.0); }

TEST(Metrics, MeanOfOneTwoThree) {
  const auto m = compute_metrics(std::vector{result(true, 1), result(true, 2), result(true, 3)});
  EXPECT_EQ(*m.mean_l2, 2.0);
  EXPECT_DOUBLE_EQ(*m.mean_l2_squared, 14.0 / 3.0);
}

TEST(Metrics, EmptyInputHasNoValues) {
  const auto m = compute_metrics(std::span<const attacks::AttackResult>{});
  EXPECT_FALSE(m.asr);
  EXPECT_FALSE(m.mean_l2);
}

TEST(Metrics, NoSuccessesHasNoDistortion) {
  const auto m = compute_metrics(std::vector{result(false, 1.0)});
  EXPECT_EQ(*m.asr, 0.0);
  EXPECT_FALSE(m.mean_l2);
}

TEST(Metrics, PermutationInvariant) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 3);
  std::vector<attacks::AttackResult> rs;
  for (int i = 0; i < 50; ++i) rs.push_back(result(i % 3 != 0, u(rng), u(rng)));
  const auto a = compute_metrics(rs);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(rs.begin(), rs.end(), rng);
    const auto b = compute_metrics(rs);
    EXPECT_EQ(*a.mean_l2, *b.mean_l2);
    EXPECT_EQ(*a.mean_l2_squared, *b.mean_l2_squared);
    EXPECT_EQ(*a.mean_seconds, *b.mean_seconds);
  }
}

Stream small_stream() {
  Stream s;
  s.header = {{"models", {{"dnn", {{"accuracy", 99.0}}}}}};
  const Tensor x({2, 2, 1}, 0.1);
  Tensor adv = x;
  adv[0] = 0.3;
  for (int t = 1; t <= 3; ++t) {
    auto r = attacks::make_result("zoo", x, adv, 0, t, [](const Tensor&) { return 2; }, 5, 0.5);
    s.records.push_back({"dnn", "dnn", 4, r, false, false});
    s.records.push_back({"hybrid", "hybrid", 4, r, t == 3, false});
  }
  return s;
}

TEST(Report, RowsPerModelAndAttack) {
  const auto rep = build_report(small_stream());
  ASSERT_EQ(rep.rows.size(), 2u);
  const auto* dnn = find_row(rep, "dnn", "zoo");
  ASSERT_TRUE(dnn);
  EXPECT_NEAR(*dnn->metrics.asr, 100.0 / 3.0, 1e-12);
  EXPECT_EQ(*dnn->accuracy, 99.0);
  EXPECT_EQ(dnn->n_examples, 1u);
  EXPECT_EQ(find_row(rep, "hybrid", "zoo")->n_excluded, 1u);
}

TEST(Report, EmptyStreamHasExplicitMarker) {
  const auto rep = build_report(decode_stream(""));
  EXPECT_TRUE(rep.rows.empty());
  EXPECT_NE(report_csv(rep).find("# no rows"), std::string::npos);
  EXPECT_TRUE(report_json(rep)["body"]["empty"].get<bool>());
}

TEST(Report, BodyExcludesTiming) {
  Stream s = small_stream();
  s.header["timing"] = {{"campaign_seconds", 12.5}};
  const json a = report_json(build_report(s));
  for (auto& r : s.records) r.result.seconds = 9.0;
  s.header["timing"] = {{"campaign_seconds", 99.0}};
  const json b = report_json(build_report(s));
  EXPECT_EQ(a["body"].dump(), b["body"].dump());
  EXPECT_NE(a["timing"].dump(), b["timing"].dump());
}

TEST(Reverify, AgreesWithHonestRecordsAndCatchesForgeries) {
  Stream s = small_stream();
  const std::map<std::string, attacks::LabelFn> models{{"dnn", [](const Tensor&) { return 2; }},
                                                       {"hybrid", [](const Tensor&) { return 2; }}};
  EXPECT_TRUE(reverify(s, models).ok());
  s.records[0].result.success = !s.records[0].result.success;
  s.records[2].result.l2 += 1e-12;
  const auto v = reverify(s, models);
  EXPECT_EQ(v.mismatched, (std::vector<std::size_t>{0, 2}));
  EXPECT_FALSE(reverify(small_stream(), {{"dnn", [](const Tensor&) { return 2; }}}).ok());
}

TEST(Records, MalformedLinesReportLineNumbers) {
  const std::string good = encode_stream(small_stream());
  try {
    decode_stream(good + "{\"model\": 3}\n");
    FAIL() << "malformed record accepted";
  } catch (const io::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 8"), std::string::npos) << e.what();
  }
  EXPECT_THROW(decode_stream("not json\n"), io::FormatError);
}

TEST(Records, HeaderCarriesSchema) {
  const auto s = decode_stream(encode_stream(small_stream()));
  EXPECT_EQ(s.records.size(), 6u);
  EXPECT_EQ(json::parse(encode_stream(small_stream()).substr(0, encode_stream(small_stream()).find('\n')))["schema"],
            kStreamSchema);
}

json minimal_campaign() {
  return json::parse(R"({
    "schema_version": 1, "seed": 3,
    "models": {"dnn": "dnn.rfd", "hybrid": "hybrid.rfd"},
    "test": {"images": "t-images", "labels": "t-labels"},
    "output": {"results": "out/r.jsonl", "report_json": "out/r.json", "report_csv": "out/r.csv"},
    "attacks": [
      {"type": "cw_l2", "examples": 5, "config": {"max_iterations": 10}},
      {"type": "zoo", "config": {"batch_coordinates": 16}, "hybrid": {"max_iterations": 100}},
      {"type": "boundary", "target_rule": "next"},
      {"type": "substitute", "epsilon": 0.3, "seeds": {"first": 10, "count": 20}}
    ]
  })");
}

TEST(CampaignConfig, ParsesAndResolvesPaths) {
  const auto c = parse_campaign(minimal_campaign(), "/base");
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.dnn_model, "/base/dnn.rfd");
  ASSERT_EQ(c.attacks.size(), 4u);
  EXPECT_EQ(c.attacks[0].cw.max_iterations, 10u);
  EXPECT_EQ(c.attacks[1].zoo_dnn.batch_coordinates, 16u);
  EXPECT_EQ(c.attacks[1].zoo_hybrid.batch_coordinates, 16u);
  EXPECT_EQ(c.attacks[1].zoo_hybrid.max_iterations, 100u);
  EXPECT_EQ(c.attacks[2].target_rule, TargetRule::Next);
  EXPECT_EQ(c.attacks[3].fgsm_epsilon, 0.3);
  EXPECT_EQ(c.digest.size(), 64u);
}

TEST(CampaignConfig, RejectsUnknownKeysBadTypesAndVersions) {
  json j = minimal_campaign();
  j["surprise"] = 1;
  EXPECT_THROW(parse_campaign(j, "/"), io::ConfigError);
  j = minimal_campaign();
  j["attacks"][0]["config"]["max_iterations"] = "many";
  EXPECT_THROW(parse_campaign(j, "/"), io::ConfigError);
  j = minimal_campaign();
  j["schema_version"] = 2;
  EXPECT_THROW(parse_campaign(j, "/"), io::ConfigError);
  j = minimal_campaign();
  j["attacks"][0]["type"] = "pgd";
  EXPECT_THROW(parse_campaign(j, "/"), io::ConfigError);
}

TEST(CampaignConfig, MissingInputsFailBeforeAnyAttack) {
  const auto c = parse_campaign(minimal_campaign(), std::filesystem::temp_directory_path() / "rfd-nowhere");
  EXPECT_THROW(check_inputs(c), io::ConfigError);
  EXPECT_THROW(run_campaign(c), io::ConfigError);
  EXPECT_FALSE(std::filesystem::exists(c.results));
}

TEST(Config, DigestIgnoresKeyOrder) {
  EXPECT_EQ(io::config_digest(json::parse(R"({"a":1,"b":2})")), io::config_digest(json::parse(R"({"b":2,"a":1})")));
}

TEST(Config, ForestParamsRoundTrip) {
  forest::GrowthParams p;
  p.num_trees = 7;
  p.weighted_gini = true;
  EXPECT_EQ(io::growth_params_from_json(io::to_json(p)), p);
  EXPECT_THROW(io::growth_params_from_json(json{{"num_trees", 0}}), io::ConfigError);
}

}  // namespace
