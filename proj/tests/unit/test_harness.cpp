#include "doctest.h"

#include <algorithm>
#include <map>
#include <memory>

#include "cotprobe/fixtures.hpp"
#include "cotprobe/harness.hpp"
#include "cotprobe/report.hpp"
#include "cotprobe/simbots.hpp"
#include "test_util.hpp"

using namespace cotprobe;
using testutil::TempDir;

namespace {

// Plan, backend, store and session wired together in one temp directory.
struct Rig {
  TempDir dir{"harness"};
  std::vector<Problem> problems;
  ExperimentPlan plan;
  std::unique_ptr<ModelBackend> backend;
  std::unique_ptr<RunStore> store;
  std::unique_ptr<Session> session;

  Rig(std::vector<Problem> ps, Experiment experiment, const std::string& bot,
      const std::function<void(ExperimentPlan&)>& tweak = {})
      : problems(std::move(ps)) {
    plan = testutil::plan_for(dir.path(), problems, experiment, bot);
    if (tweak) tweak(plan);
    backend = make_backend(plan.backend, problems, plan.backend_options);
    const auto config = run_config(plan, "test-dataset");
    store = std::make_unique<RunStore>(RunStore::open_or_create(dir.path() / "runs", run_id_for(config), config));
    session = std::make_unique<Session>(plan, problems, *backend, *store);
  }
};

std::vector<Problem> arithmetic() { return problems_of(testutil::arithmetic100()); }

// Splits a prefix body on blank lines.
std::vector<std::string> paragraphs(std::string_view body) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    const auto next = body.find("\n\n", pos);
    const auto piece = body.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
    if (!piece.empty()) out.emplace_back(piece);
    if (next == std::string_view::npos) break;
    pos = next + 2;
  }
  return out;
}

// Reference readout for fixture prefixes: copybot should be right exactly
// when the last paragraph holding an "=" ends its last "=" clause in gold.
bool copy_oracle(const GenerationRecord& rec) {
  const auto paras = paragraphs(prefix_body(rec.prefix));
  for (auto it = paras.rbegin(); it != paras.rend(); ++it) {
    const auto eq = it->rfind('=');
    if (eq == std::string::npos) continue;
    std::size_t i = eq + 1;
    while (i < it->size() && ((*it)[i] == ' ' || (*it)[i] == '$')) ++i;
    std::size_t j = i;
    while (j < it->size() && (std::isdigit(static_cast<unsigned char>((*it)[j])) != 0 || (*it)[j] == '.')) ++j;
    while (j > i && (*it)[j - 1] == '.') --j;
    return it->substr(i, j - i) == rec.gold;
  }
  return false;
}

const RetentionRow& row(const ShuffleResult& r, const std::string& condition) {
  for (const auto& x : r.rows)
    if (x.condition == condition) return x;
  FAIL("missing row " << condition);
  throw std::logic_error("unreachable");
}

GenerationRecord record(const std::string& item, const std::string& condition, bool correct) {
  GenerationRecord r;
  r.item_id = item;
  r.condition = condition;
  r.gold = "1";
  r.is_correct = correct;
  return r;
}

}  // namespace

TEST_CASE("copybot decomposition isolates the copy channel") {
  Rig rig(arithmetic(), Experiment::decomposition, "sim:copybot");
  const auto r = run_decomposition(*rig.session);
  CHECK(r.n_baseline == 100);
  CHECK(r.p_c.estimate == 1.0);
  CHECK(r.p_b.estimate == 1.0);
  CHECK(r.p_a.estimate == 0.0);
  CHECK(r.delta_copy.estimate == 1.0);
  CHECK(r.delta_offcopy.estimate == 0.0);
  CHECK(r.p_residual.estimate == 0.0);
  // Items whose corruption happens to land on gold drop out of A only.
  CHECK(r.common_items.size() + r.excluded.at("A:gold_preserved") == 100);
  REQUIRE(r.mcnemar_b_vs_a.p_value.has_value());
  CHECK(*r.mcnemar_b_vs_a.p_value < 1e-20);

  const RecordView view(rig.store->records());
  std::vector<std::string> ids;
  for (const auto& item : rig.session->items()) ids.push_back(item.problem.id);
  const auto fid = compute_tf_fidelity(view, ids, Experiment::decomposition);
  CHECK(fid.condition == "C");
  CHECK(fid.metric == 1.0);
  CHECK(fid.pass);
}

TEST_CASE("copybot ladder: replacing the trailing number collapses accuracy") {
  Rig rig(arithmetic(), Experiment::causal_ladder, "sim:copybot");
  const auto r = run_causal_ladder(*rig.session);
  CHECK(r.accuracy.at("C").estimate == 1.0);
  CHECK(r.accuracy.at("B").estimate == 1.0);
  CHECK(r.accuracy.at("D_rep").estimate == 0.0);
  CHECK(r.accuracy.at("no_cot").estimate == 0.0);
  CHECK(r.p_distractor_drep.estimate == 1.0);
  CHECK(r.copy_override_gap.estimate == r.accuracy.at("D_trunc").estimate - r.accuracy.at("D_rep").estimate);
  CHECK(r.retained_context.estimate == r.accuracy.at("D_trunc").estimate - r.accuracy.at("no_cot").estimate);
  CHECK(r.contrasts.size() >= 1);
  for (const auto& c : r.contrasts) {
    CHECK(c.holm_p >= *c.mcnemar.p_value);
    CHECK(c.holm_p <= 1.0);
  }
}

TEST_CASE("computebot ladder: D_trunc accuracy is the one-op reachable share") {
  const auto& fx = testutil::arithmetic100();
  Rig rig(arithmetic(), Experiment::causal_ladder, "sim:computebot");
  const auto r = run_causal_ladder(*rig.session);
  std::map<std::string, bool> truth;
  for (const auto& item : fx) truth[item.problem.id] = item.one_op_reachable;
  REQUIRE(r.common_items.size() > 80);
  const auto common_one_op = std::count_if(r.common_items.begin(), r.common_items.end(),
                                           [&](const std::string& id) { return truth.at(id); });
  CHECK(r.accuracy.at("D_trunc").estimate ==
        static_cast<double>(common_one_op) / static_cast<double>(r.common_items.size()));
  const auto one_op = std::count_if(fx.begin(), fx.end(), [](const FixtureItem& i) { return i.one_op_reachable; });
  CHECK(r.retained_context.estimate > 0.0);
  CHECK(r.p_distractor_drep.estimate == 0.0);

  std::vector<const GenerationRecord*> trunc;
  const RecordView view(rig.store->records());
  for (const auto& item : fx) trunc.push_back(view.get(item.problem.id, "D_trunc"));
  const auto dp = depth_partition(trunc, &view);
  for (const auto& item : fx) {
    INFO(item.problem.id);
    CHECK(dp.one_op.at(item.problem.id) == item.one_op_reachable);
  }
  CHECK(dp.n_one_op == static_cast<std::size_t>(one_op));
  REQUIRE(dp.one_op_accuracy.has_value());
  CHECK(dp.one_op_accuracy->estimate == 1.0);
  if (dp.multi_step_accuracy) CHECK(dp.multi_step_accuracy->estimate == 0.0);
}

TEST_CASE("shuffle hierarchy keeps ordered and step-level retention at one") {
  Rig rig(arithmetic(), Experiment::shuffle_hierarchy, "sim:copybot", [](ExperimentPlan& p) { p.seeds = {0, 1}; });
  const auto r = run_shuffle_hierarchy(*rig.session);
  CHECK(r.items.size() == 100);
  const auto& ordered = row(r, "ordered");
  CHECK(ordered.accuracy == 1.0);
  REQUIRE(ordered.retention.has_value());
  CHECK(ordered.retention->estimate == 1.0);
  CHECK(row(r, "no_cot").accuracy == 0.0);

  // Every shuffled record agrees with the reference readout.
  for (const auto& rec : rig.store->records()) {
    if (rec.excluded) continue;
    INFO(rec.item_id << " " << rec.condition);
    if (rec.condition == "no_cot" || rec.condition.rfind("token_shuffle", 0) == 0 ||
        rec.condition.rfind("word_shuffle", 0) == 0 || rec.condition.rfind("within_step", 0) == 0)
      continue;
    CHECK(rec.is_correct == copy_oracle(rec));
  }
  // Step-level conditions keep every step intact.
  for (const auto& rec : rig.store->records())
    if (rec.condition.rfind("step_shuffle", 0) == 0 && !rec.excluded) CHECK(rec.prefix.find(rec.gold) != std::string::npos);
}

TEST_CASE("position sweep matches the paragraph readout oracle") {
  Rig rig(arithmetic(), Experiment::position_sweep, "sim:copybot", [](ExperimentPlan& p) { p.seeds = {0, 1}; });
  const auto r = run_position_sweep(*rig.session);
  REQUIRE(r.sweep.size() == 5);
  CHECK(r.sweep.back().first == 1.0);
  CHECK(r.sweep.back().second.estimate == 1.0);
  REQUIRE(r.mcnemar_ordered_vs_keep_end.has_value());
  CHECK(*r.mcnemar_ordered_vs_keep_end->p_value == 1.0);
  CHECK(r.discrete.at("keep_end").estimate == 1.0);

  std::size_t checked = 0;
  for (const auto& rec : rig.store->records()) {
    if (rec.excluded || rec.condition == "ordered") continue;
    INFO(rec.item_id << " " << rec.condition);
    CHECK(rec.is_correct == copy_oracle(rec));
    ++checked;
  }
  CHECK(checked > 500);
  REQUIRE(r.spearman.has_value());
  CHECK(r.spearman->estimate > 0.0);
}

TEST_CASE("distractor suite: copybot follows framing, gatebot rejects novel values") {
  SUBCASE("copybot") {
    Rig rig(arithmetic(), Experiment::distractor_suite, "sim:copybot",
            [](ExperimentPlan& p) { p.framings = {"F1", "F2", "F3", "F4"}; });
    const auto r = run_distractor_suite(*rig.session);
    for (const std::string kind : {"C1", "C2"}) {
      for (const std::string f : {"F1", "F4"}) {
        const auto* c = r.find(kind + "." + f);
        REQUIRE(c != nullptr);
        CHECK(c->p_distractor->estimate == 1.0);
        CHECK(c->p_gold->estimate == 0.0);
      }
      for (const std::string f : {"F2", "F3"}) {
        const auto* c = r.find(kind + "." + f);
        REQUIRE(c != nullptr);
        CHECK(c->p_distractor->estimate == 0.0);
        CHECK(c->p_gold->estimate == 1.0);
      }
    }
    for (const auto& c : r.cells)
      if (c.p_distractor && c.p_gold) CHECK(c.p_distractor->estimate + c.p_gold->estimate <= 1.0);
  }
  SUBCASE("gatebot") {
    Rig rig(arithmetic(), Experiment::distractor_suite, "sim:gatebot");
    const auto r = run_distractor_suite(*rig.session);
    for (const std::string cell : {"C1.F1", "C2.F1"}) {
      const auto* c = r.find(cell);
      REQUIRE(c != nullptr);
      REQUIRE(c->n_novel > 0);
      CHECK(c->p_distractor_novel->estimate == 0.0);
      CHECK(c->p_gold_novel->estimate == 1.0);
    }
    const auto* inter = r.find("intermediate.F1");
    REQUIRE(inter != nullptr);
    CHECK(inter->p_distractor->estimate == 1.0);
  }
}

TEST_CASE("fidelity threshold is inclusive") {
  std::vector<GenerationRecord> recs;
  std::vector<std::string> ids;
  for (int i = 0; i < 5; ++i) {
    ids.push_back("q" + std::to_string(i));
    recs.push_back(record(ids.back(), "C", i < 4));
  }
  const RecordView view(recs);
  const auto at = compute_tf_fidelity(view, ids, Experiment::decomposition, 0.80);
  CHECK(at.metric == doctest::Approx(0.8));
  CHECK(at.pass);
  CHECK_FALSE(compute_tf_fidelity(view, ids, Experiment::decomposition, 0.81).pass);
  CHECK_THROWS_AS(compute_tf_fidelity(view, ids, Experiment::free_generation), std::invalid_argument);
  CHECK_THROWS_AS(compute_tf_fidelity(view, ids, Experiment::shuffle_hierarchy), std::runtime_error);
}

TEST_CASE("free generation buckets") {
  std::vector<Problem> ps(3);
  ps[0] = {"g0", "What is 8 times 9?", Decimal::parse("72").value(), "8 x 9 = 72.", AnswerKind::numeric};
  ps[1] = {"g1", "What is 8 times 9, really?", Decimal::parse("72").value(), "8 x 9 = 72. So 72 - 2 = 70.",
           AnswerKind::numeric};
  ps[2] = {"g2", "What is 3 plus 4?", Decimal::parse("7").value(), "3 + 4 = 7.", AnswerKind::numeric};
  Rig rig(ps, Experiment::free_generation, "sim:copybot");
  const auto m = run_free_generation(*rig.session);
  CHECK(m.n == 3);
  CHECK(m.unparseable == 0);
  CHECK(m.accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(m.answer_is_last == 1.0);
  CHECK(m.gold_is_last == doctest::Approx(2.0 / 3.0));
  CHECK(m.acc_given_gold_last == 1.0);
  CHECK(m.acc_given_gold_not_last == 0.0);
  CHECK(m.answer_is_last_given_incorrect == 1.0);

  const auto empty = analyze_free_generation({});
  CHECK(empty.n == 0);
  CHECK_FALSE(empty.accuracy.has_value());
  CHECK_FALSE(empty.acc_given_gold_not_last.has_value());
}

TEST_CASE("a second run is served from the store") {
  TempDir dir("cache");
  auto plan = testutil::plan_for(dir.path(), arithmetic(), Experiment::decomposition, "sim:copybot");
  const auto first = run_plan(plan, dir.path() / "runs");
  CHECK(first.model_calls > 0);
  const auto bytes = read_file(first.dir / "records.jsonl");
  const auto second = run_plan(plan, dir.path() / "runs");
  CHECK(second.run_id == first.run_id);
  CHECK(second.model_calls == 0);
  CHECK(read_file(first.dir / "records.jsonl") == bytes);
  CHECK(RunStore::canonical(second.artifacts.at("decomposition")) ==
        RunStore::canonical(first.artifacts.at("decomposition")));

  plan.analysis_seed = 7;
  const auto third = run_plan(plan, dir.path() / "runs");
  CHECK(third.run_id != first.run_id);
}

TEST_CASE("run identity ignores parallelism") {
  ExperimentPlan a;
  a.dataset = "x.jsonl";
  ExperimentPlan b = a;
  b.parallelism = 16;
  CHECK(run_id_for(run_config(a, "d")) == run_id_for(run_config(b, "d")));
  b.seeds = {0};
  CHECK(run_id_for(run_config(a, "d")) != run_id_for(run_config(b, "d")));
  CHECK(run_id_for(run_config(a, "d")) != run_id_for(run_config(a, "e")));
}
