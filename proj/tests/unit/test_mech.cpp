#include "doctest.h"

#include <set>

#include "cotprobe/mech.hpp"
#include "cotprobe/report.hpp"
#include "cotprobe/stats.hpp"
#include "test_util.hpp"

using namespace cotprobe;
using nlohmann::json;

namespace {

HeadScoreMatrix matrix(int layers, int heads, const std::vector<double>& scores) {
  HeadScoreMatrix m(layers, heads, ScoreKind::attention_mass);
  m.scores = scores;
  return m;
}

ModelInfo arch(int layers, int heads) {
  ModelInfo m;
  m.layers = layers;
  m.query_heads = heads;
  m.kv_heads = 2;
  m.head_dim = 16;
  return m;
}

json run_mech(Experiment experiment, const json& options, testutil::TempDir& dir) {
  auto plan = testutil::plan_for(dir.path(), problems_of(testutil::arithmetic100()), experiment, "sim:copybot");
  plan.backend_options = options;
  plan.mech.permutation_n = 200;
  const auto out = run_plan(plan, dir.path() / "runs");
  return out.artifacts.at("mech");
}

}  // namespace

TEST_CASE("head ranking orders by score then by position") {
  const auto r = rank_heads(matrix(2, 2, {0.5, 0.9, 0.5, 0.1}));
  REQUIRE(r.heads.size() == 4);
  CHECK(r.heads[0].first == HeadId{0, 1});
  CHECK(r.heads[1].first == HeadId{0, 0});
  CHECK(r.heads[2].first == HeadId{1, 0});
  CHECK(r.heads[3].first == HeadId{1, 1});
  CHECK(r.top(2) == std::vector<HeadId>{{0, 1}, {0, 0}});
  CHECK(r.top(10).size() == 4);
}

TEST_CASE("k50 is the first K at or below half the baseline") {
  CHECK(find_k50({{0, 0.9}, {1, 0.8}, {2, 0.45}, {3, 0.1}}, 0.9) == 2);
  CHECK(find_k50({{0, 0.9}, {1, 0.8}}, 0.9) == std::nullopt);
  CHECK(find_k50({{0, 0.5}, {5, 0.2}}, 0.4) == 5);
}

TEST_CASE("control sets avoid the excluded heads") {
  const auto info = arch(4, 8);
  const std::vector<HeadId> top{{0, 0}, {1, 3}, {2, 5}, {3, 1}, {0, 7}};
  for (bool stratified : {true, false}) {
    const auto sets = random_control_sets(info, top, stratified, 5, 20, 3);
    REQUIRE(sets.size() == 20);
    for (const auto& s : sets) {
      CHECK(s.size() == 5);
      CHECK(std::set<HeadId>(s.begin(), s.end()).size() == s.size());
      for (const auto& h : s) {
        CHECK(std::find(top.begin(), top.end(), h) == top.end());
        CHECK(h.layer < 4);
        CHECK(h.head < 8);
      }
      if (stratified) {
        // Five heads over four layers: every layer used, one layer twice.
        std::map<int, int> per_layer;
        for (const auto& h : s) ++per_layer[h.layer];
        CHECK(per_layer.size() == 4);
      }
    }
    CHECK(random_control_sets(info, top, stratified, 5, 20, 3) == sets);
  }
}

TEST_CASE("control permutation p counts the observed drop") {
  const std::vector<double> drops{0.0, 0.1, 0.2};
  CHECK(control_permutation_p(1.0, drops, 999, 0) == doctest::Approx(1.0 / 1000.0));
  CHECK(control_permutation_p(0.0, drops, 999, 0) == doctest::Approx(1.0));
  CHECK(control_permutation_p(0.15, drops, 999, 0) == control_permutation_p(0.15, drops, 999, 0));
}

TEST_CASE("overlap is symmetric with hypergeometric tails") {
  std::vector<double> a(32), b(32), c(32);
  for (int i = 0; i < 32; ++i) {
    a[i] = i;
    b[i] = 31 - i;
    c[i] = (i * 7) % 32;
  }
  const auto same = overlap_analysis(matrix(4, 8, a), matrix(4, 8, a), 5);
  CHECK(same.k == 5);
  CHECK(same.p == doctest::Approx(stats::hypergeom_tail(32, 5, 5, 5)));
  CHECK(same.spearman.estimate == doctest::Approx(1.0));

  const auto disjoint = overlap_analysis(matrix(4, 8, a), matrix(4, 8, b), 5);
  CHECK(disjoint.k == 0);
  CHECK(disjoint.p == 1.0);
  CHECK(disjoint.spearman.estimate == doctest::Approx(-1.0));

  const auto ac = overlap_analysis(matrix(4, 8, a), matrix(4, 8, c), 8);
  const auto ca = overlap_analysis(matrix(4, 8, c), matrix(4, 8, a), 8);
  CHECK(ac.k == ca.k);
  CHECK(ac.p == ca.p);
  CHECK(ac.spearman.estimate == ca.spearman.estimate);

  CHECK(overlap_analysis(matrix(4, 8, a), matrix(4, 8, a), 100).top_n == 32);
  CHECK_THROWS_AS(overlap_analysis(matrix(4, 8, a), matrix(8, 4, a), 5), std::invalid_argument);
}

TEST_CASE("jaccard edge cases") {
  const std::vector<HeadId> x{{0, 1}, {1, 2}};
  CHECK(jaccard(x, x) == 1.0);
  CHECK(jaccard(x, {{2, 2}}) == 0.0);
  CHECK(jaccard(x, {{0, 1}}) == doctest::Approx(0.5));
  CHECK(jaccard({}, {}) == 1.0);
}

TEST_CASE("screen stability") {
  PatchScreen s;
  s.layers = 2;
  s.heads = 2;
  for (int i = 0; i < 10; ++i) {
    s.items.push_back("q" + std::to_string(i));
    s.deltas.push_back({1.0, 0.0, 0.0, 0.0});
    s.all_heads.push_back(2.0);
  }
  SUBCASE("identical halves give jaccard one") {
    const auto r = screen_stability(s, 1, 0.3, 10, 100, 0);
    CHECK(r.splits == 10);
    CHECK(r.jaccard_mean == 1.0);
    CHECK(r.jaccard_min == 1.0);
    REQUIRE(r.gini.has_value());
    CHECK(*r.gini == doctest::Approx(0.75));
    CHECK_FALSE(r.gini_error.has_value());
  }
  SUBCASE("no recovery anywhere reports a gini error") {
    for (auto& row : s.deltas) row.assign(4, 0.0);
    const auto r = screen_stability(s, 1, 0.3, 10, 100, 0);
    CHECK_FALSE(r.gini.has_value());
    REQUIRE(r.gini_error.has_value());
    CHECK_FALSE(r.gini_p.has_value());
  }
  SUBCASE("ranking uses only the chosen rows") {
    s.deltas[0] = {0.0, 0.0, 0.0, 5.0};
    const auto first = screen_ranking(s, {0}, 0.3);
    REQUIRE(first.heads.size() == 1);
    CHECK(first.heads[0].first == HeadId{1, 1});
    CHECK(first.heads[0].second == doctest::Approx(2.5));
    const auto rest = screen_ranking(s, {1, 2, 3}, 0.3);
    REQUIRE(rest.heads.size() == 1);
    CHECK(rest.heads[0].first == HeadId{0, 0});
    CHECK(first.split_id != rest.split_id);
  }
}

TEST_CASE("ablation sweep on copybot halves at the disable threshold") {
  testutil::TempDir dir("mech");
  const json opts{{"copy_heads", {{0, 0}, {1, 3}, {2, 5}}}, {"copy_disable_threshold", 2}};
  const auto m = run_mech(Experiment::mech_ablation, opts, dir);
  CHECK(m.at("sweep").at("k50") == 2);
  CHECK(m.at("baseline") == "1");
  const auto& heads = m.at("ranking").at("heads");
  std::set<std::pair<int, int>> top3;
  for (int i = 0; i < 3; ++i) top3.insert({heads[i][0].get<int>(), heads[i][1].get<int>()});
  CHECK(top3 == std::set<std::pair<int, int>>{{0, 0}, {1, 3}, {2, 5}});
  CHECK(m.at("topk").at("drop") == "1");
  for (const auto& set : m.at("controls").at("sets"))
    for (const auto& h : set) CHECK(top3.count({h[0].get<int>(), h[1].get<int>()}) == 0);
  for (const auto& d : m.at("controls").at("drops")) CHECK(d == "0");
  CHECK(m.at("n_rank").get<int>() + m.at("n_eval").get<int>() == 100);
  CHECK(m.at("rank_split") != m.at("eval_split"));
}

TEST_CASE("patching screen finds a single copy head") {
  testutil::TempDir dir("patch");
  const json opts{{"copy_heads", {{2, 5}}}, {"copy_disable_threshold", 1}};
  const auto m = run_mech(Experiment::patching_screen, opts, dir);
  CHECK(m.at("n_screen") == 34);
  CHECK(m.at("n_validation") == 66);
  REQUIRE(m.at("heads_passing").get<int>() >= 1);
  const auto& top = m.at("ranking").at("heads")[0];
  CHECK(top[0] == 2);
  CHECK(top[1] == 5);
}
