#include <algorithm>

#include "cotprobe/harness.hpp"
#include "cotprobe/simbots.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cotprobe;
using nlohmann::json;

namespace {

std::vector<PlanIssue> issues_of(const json& j) {
  try {
    parse_plan(j);
  } catch (const PlanError& e) {
    return e.issues();
  }
  return {};
}

bool has_issue(const std::vector<PlanIssue>& issues, const std::string& pointer) {
  return std::any_of(issues.begin(), issues.end(), [&](const PlanIssue& i) { return i.pointer == pointer; });
}

}  // namespace

TEST_CASE("minimal plan takes the defaults") {
  const auto plan = parse_plan({{"experiment", "decomposition"}, {"dataset", "d.jsonl"}});
  CHECK(plan.experiment == Experiment::decomposition);
  CHECK(plan.backend == "sim:copybot");
  CHECK(plan.item_limit == 500);
  CHECK(plan.seeds == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(plan.filters.tf_threshold == 0.80);
  CHECK(plan.delimiter == "####");
  CHECK(plan.bootstrap_resamples == 10000);
  CHECK(plan.effective_retention_mode() == stats::RetentionMode::nocot_anchored);
  CHECK(plan.effective_max_tokens() == 0);
}

TEST_CASE("experiment defaults") {
  CHECK(parse_plan({{"experiment", "bbh_retention"}, {"dataset", "d"}}).dataset_format == DatasetFormat::bbh_jsonl);
  CHECK(parse_plan({{"experiment", "bbh_retention"}, {"dataset", "d"}}).effective_retention_mode() ==
        stats::RetentionMode::chance_corrected);
  CHECK(parse_plan({{"experiment", "shuffle_hierarchy"}, {"dataset", "d"}}).effective_max_tokens() == 1024);
  CHECK(parse_plan({{"experiment", "mech_ablation"}, {"dataset", "d"}}).effective_max_tokens() == 1536);
  CHECK(parse_plan({{"experiment", "mech_ablation"}, {"dataset", "d"}, {"filters", {{"max_tokens", 99}}}})
            .effective_max_tokens() == 99);
  for (const auto* name : {"decomposition", "causal_ladder", "shuffle_hierarchy", "position_sweep", "distractor_suite",
                           "framing_suite", "delimiter_suite", "free_generation", "selfgen_shuffle", "bbh_retention",
                           "position_encoding_control", "mech_ablation", "patching_screen"})
    CHECK(to_string(*experiment_from_string(name)) == name);
}

TEST_CASE("validation errors carry JSON pointers") {
  const auto issues = issues_of({{"experiment", "decompose"},
                                 {"item_limit", 0},
                                 {"seeds", {0, "x", 0}},
                                 {"filters", {{"tf_threshold", 1.5}, {"colour", true}}},
                                 {"kinds", {"C1", "C9"}},
                                 {"confirmatory", {"C1.F1", "C1.F9"}},
                                 {"retention_mode", "loose"},
                                 {"mech", {{"ks", {1, 2}}, {"kind", "half"}}},
                                 {"surprise", 1}});
  CHECK(has_issue(issues, "/experiment"));
  CHECK(has_issue(issues, "/dataset"));
  CHECK(has_issue(issues, "/item_limit"));
  CHECK(has_issue(issues, "/seeds/1"));
  CHECK(has_issue(issues, "/seeds/2"));
  CHECK(has_issue(issues, "/filters/tf_threshold"));
  CHECK(has_issue(issues, "/filters/colour"));
  CHECK(has_issue(issues, "/kinds/1"));
  CHECK_FALSE(has_issue(issues, "/kinds/0"));
  CHECK(has_issue(issues, "/confirmatory/1"));
  CHECK(has_issue(issues, "/retention_mode"));
  CHECK(has_issue(issues, "/mech/ks/0"));
  CHECK(has_issue(issues, "/mech/kind"));
  CHECK(has_issue(issues, "/surprise"));
}

TEST_CASE("plan error message lists every pointer") {
  try {
    parse_plan({{"experiment", 3}, {"dataset", ""}});
    FAIL("expected a PlanError");
  } catch (const PlanError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("/experiment: expected a string") != std::string::npos);
    CHECK(msg.find("/dataset: must not be empty") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_plan(json::array()), PlanError);
}

TEST_CASE("stochastic experiments need seeds") {
  CHECK(has_issue(issues_of({{"experiment", "shuffle_hierarchy"}, {"dataset", "d"}, {"seeds", json::array()}}),
                  "/seeds"));
  CHECK(issues_of({{"experiment", "decomposition"}, {"dataset", "d"}, {"seeds", json::array()}}).empty());
}

TEST_CASE("load_plan resolves the dataset next to the plan") {
  testutil::TempDir dir("plan");
  testutil::write_text(dir.path() / "p.json", R"({"experiment":"decomposition","dataset":"data/x.jsonl"})");
  CHECK(load_plan(dir.path() / "p.json").dataset == (dir.path() / "data/x.jsonl").string());
  testutil::write_text(dir.path() / "bad.json", "{oops");
  try {
    load_plan(dir.path() / "bad.json");
    FAIL("expected a PlanError");
  } catch (const PlanError& e) {
    REQUIRE(e.issues().size() == 1);
    CHECK(e.issues()[0].pointer.empty());
  }
}

TEST_CASE("config identity") {
  auto a = parse_plan({{"experiment", "decomposition"}, {"dataset", "one.jsonl"}});
  auto b = parse_plan({{"experiment", "decomposition"}, {"dataset", "two.jsonl"}, {"parallelism", 16}});
  CHECK(run_id_for(run_config(a, "abc")) == run_id_for(run_config(b, "abc")));
  CHECK(run_id_for(run_config(a, "abc")) != run_id_for(run_config(a, "abd")));
  b.seeds = {0};
  CHECK(run_id_for(run_config(a, "abc")) != run_id_for(run_config(b, "abc")));
  CHECK(run_id_for(run_config(a, "abc")).size() == 12);
  // The canonical config survives a parse round trip.
  auto j = a.to_json();
  j.erase("dataset_format");
  j["dataset"] = "one.jsonl";
  CHECK(parse_plan(j).to_json() == a.to_json());
}

TEST_CASE("backend specs") {
  const auto problems = problems_of(testutil::arithmetic100());
  auto bot = make_backend("sim:computebot", problems, {{"depth_limit", 2}, {"copy_heads", {{1, 1}}}});
  auto* sim = dynamic_cast<SimBackend*>(bot.get());
  REQUIRE(sim != nullptr);
  CHECK(sim->kind() == SimbotKind::computebot);
  CHECK(sim->params().depth_limit == 2);
  CHECK(sim->params().copy_heads == std::vector<HeadId>{{1, 1}});
  CHECK(dynamic_cast<HttpBackend*>(make_backend("http://127.0.0.1:9", problems).get()) != nullptr);
  CHECK_THROWS_AS(make_backend("sim:oracle", problems), std::invalid_argument);
  CHECK_THROWS_AS(make_backend("grpc://x", problems), std::invalid_argument);
}
