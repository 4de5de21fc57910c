#include "cotprobe/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include "cotprobe/format.hpp"
#include "cotprobe/seeding.hpp"

namespace cotprobe {

using nlohmann::json;

namespace {

constexpr std::array kTables{TableName::decomposition, TableName::ladder,   TableName::distractor,
                             TableName::framing,       TableName::hierarchy, TableName::position,
                             TableName::fidelity,      TableName::mech,     TableName::freegen};

const char* kAbsent = "-";

std::string num(const json& v, int digits = 3) {
  if (v.is_null()) return kAbsent;
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  return fixed(real_from_string(v.get<std::string>()), digits);
}

std::string pval(const json& v) {
  if (v.is_null()) return kAbsent;
  const double p = real_from_string(v.get<std::string>());
  if (p >= 0.001 || p == 0.0) return fixed(p, 3);
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, p, std::chars_format::scientific, 1);
  return std::string(buf, res.ptr);
}

std::string ci(const json& stat) {
  if (stat.is_null() || stat.at("ci").is_null()) return kAbsent;
  return "[" + num(stat.at("ci").at(0)) + ", " + num(stat.at("ci").at(1)) + "]";
}

std::string est(const json& stat) { return stat.is_null() ? kAbsent : num(stat.at("estimate")); }
std::string stat_p(const json& stat) { return stat.is_null() ? kAbsent : pval(stat.at("p")); }
std::string stat_n(const json& stat) { return stat.is_null() ? kAbsent : std::to_string(stat.at("n").get<std::int64_t>()); }

struct Grid {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> notes;

  void row(std::vector<std::string> r) {
    r.resize(columns.size(), kAbsent);
    rows.push_back(std::move(r));
  }

  [[nodiscard]] std::string text() const {
    std::vector<std::size_t> width(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) width[c] = columns[c].size();
    for (const auto& r : rows)
      for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    auto line = [&](const std::vector<std::string>& cells) {
      std::string out;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto pad = std::string(width[c] - cells[c].size(), ' ');
        if (c > 0) out += "  ";
        out += c == 0 ? cells[c] + pad : pad + cells[c];
      }
      while (!out.empty() && out.back() == ' ') out.pop_back();
      return out + "\n";
    };
    std::string out = title + "\n";
    out += line(columns);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    for (const auto& r : rows) out += line(r);
    for (const auto& n : notes) out += n + "\n";
    return out;
  }

  [[nodiscard]] json value() const { return {{"title", title}, {"columns", columns}, {"rows", rows}, {"notes", notes}}; }
};

const json* artifact(const Artifacts& a, const std::string& name) {
  auto it = a.find(name);
  return it == a.end() ? nullptr : &it->second;
}

std::string error_of(const json& j) { return j.is_object() && j.contains("error") ? j.at("error").get<std::string>() : ""; }

// ---- per-table layouts -------------------------------------------------------------

Grid decomposition_grid(const json* a) {
  Grid g{"Decomposition (paired, baseline-correct)", {"Quantity", "Estimate", "95% CI", "p", "n"}, {}, {}};
  const std::vector<std::pair<const char*, const char*>> rows{
      {"P_A (all corrupted)", "P_A"}, {"P_B (gold kept)", "P_B"},     {"P_C (clean)", "P_C"},
      {"Delta_copy = P_B - P_A", "delta_copy"}, {"Delta_off-copy = P_C - P_B", "delta_offcopy"},
      {"P_residual = P_A", "P_residual"},       {"Ceiling-normalised Delta_copy", "ceiling_norm"},
      {"McNemar B vs A", "mcnemar_B_vs_A"}};
  for (const auto& [label, key] : rows) {
    if (a == nullptr) {
      g.row({label});
      continue;
    }
    const json& s = a->at(key);
    g.row({label, std::string(key) == "mcnemar_B_vs_A" ? kAbsent : est(s), ci(s), stat_p(s), stat_n(s)});
  }
  if (a != nullptr)
    g.notes.push_back("baseline n=" + std::to_string(a->at("n_baseline").get<std::size_t>()) +
                      "  common n=" + std::to_string(a->at("n_common").get<std::size_t>()) +
                      "  index " + a->at("index_hash").get<std::string>());
  return g;
}

Grid ladder_grid(const json* a, const json* depth) {
  Grid g{"Causal ladder (common index)", {"Row", "Estimate", "95% CI", "p", "Holm p", "n"}, {}, {}};
  for (const auto& c : ladder_conditions()) {
    if (a == nullptr) {
      g.row({c});
      continue;
    }
    const json& s = a->at("accuracy").at(c);
    g.row({c, est(s), ci(s), kAbsent, kAbsent, stat_n(s)});
  }
  const std::vector<std::pair<const char*, const char*>> derived{{"copy-override gap (D_trunc - D_rep)", "copy_override_gap"},
                                                                 {"retained context (D_trunc - no_cot)", "retained_context"},
                                                                 {"P(distractor) in D_rep", "p_distractor_D_rep"}};
  for (const auto& [label, key] : derived) {
    if (a == nullptr) {
      g.row({label});
      continue;
    }
    const json& s = a->at(key);
    g.row({label, est(s), ci(s), kAbsent, kAbsent, stat_n(s)});
  }
  if (a != nullptr) {
    for (const auto& c : a->at("contrasts"))
      g.row({"McNemar " + c.at("name").get<std::string>(), est(c.at("difference")), ci(c.at("difference")),
             stat_p(c.at("mcnemar")), pval(c.at("holm_p")), stat_n(c.at("mcnemar"))});
    g.notes.push_back("common n=" + std::to_string(a->at("n_common").get<std::size_t>()) + "  index " +
                      a->at("index_hash").get<std::string>());
  }
  if (depth != nullptr) {
    g.row({"D_trunc one-op items", est(depth->at("one_op_accuracy")), ci(depth->at("one_op_accuracy")), kAbsent,
           kAbsent, std::to_string(depth->at("n_one_op").get<std::size_t>())});
    g.row({"D_trunc multi-step items", est(depth->at("multi_step_accuracy")), ci(depth->at("multi_step_accuracy")),
           kAbsent, kAbsent, std::to_string(depth->at("n_multi_step").get<std::size_t>())});
    g.row({"no_cot floor, one-op", est(depth->at("one_op_floor")), ci(depth->at("one_op_floor")), kAbsent, kAbsent,
           stat_n(depth->at("one_op_floor"))});
    g.row({"no_cot floor, multi-step", est(depth->at("multi_step_floor")), ci(depth->at("multi_step_floor")), kAbsent,
           kAbsent, stat_n(depth->at("multi_step_floor"))});
  }
  return g;
}

Grid distractor_grid(const json* a, const std::string& title) {
  Grid g{title,
         {"Cell", "Delimiter", "n", "P(distractor)", "95% CI", "P(gold)", "95% CI", "n novel", "P(distr | novel)",
          "p (>= .70)", "Holm p"},
         {},
         {}};
  if (a == nullptr) {
    g.row({kAbsent});
    return g;
  }
  for (const auto& c : a->at("cells")) {
    std::string name = c.at("cell").get<std::string>();
    if (c.at("confirmatory").get<bool>()) name += " *";
    g.row({name, c.at("delimiter").get<std::string>(), std::to_string(c.at("n").get<std::size_t>()),
           est(c.at("p_distractor")), ci(c.at("p_distractor")), est(c.at("p_gold")), ci(c.at("p_gold")),
           std::to_string(c.at("n_novel").get<std::size_t>()), est(c.at("p_distractor_novel")),
           stat_p(c.at("threshold_test")), pval(c.at("holm_p"))});
  }
  g.notes.push_back("* confirmatory cell, one-sided exact binomial against .70 with Holm correction");
  return g;
}

Grid hierarchy_grid(const json* a) {
  Grid g{"Shuffle hierarchy", {"Condition", "Accuracy", "Retention", "95% CI", "n", "Note"}, {}, {}};
  if (a == nullptr) {
    for (const auto& c : shuffle_conditions()) g.row({c});
    return g;
  }
  g.title += " (" + a->at("source").get<std::string>() + ", " + a->at("mode").get<std::string>() + " retention)";
  for (const auto& r : a->at("rows")) {
    const auto& reason = r.at("undefined_reason");
    g.row({r.at("condition").get<std::string>(), num(r.at("accuracy")), est(r.at("retention")), ci(r.at("retention")),
           std::to_string(r.at("n").get<std::size_t>()), reason.is_null() ? "" : reason.get<std::string>()});
  }
  std::string excl;
  for (const auto& [k, v] : a->at("excluded").items()) excl += "  " + k + "=" + std::to_string(v.get<std::size_t>());
  g.notes.push_back("items n=" + std::to_string(a->at("n_items").get<std::size_t>()) + "  index " +
                    a->at("index_hash").get<std::string>());
  if (!excl.empty()) g.notes.push_back("excluded:" + excl);
  return g;
}

Grid position_grid(const json* a) {
  Grid g{"Answer-step position sweep", {"Position", "Accuracy", "95% CI", "p", "n"}, {}, {}};
  if (a == nullptr) {
    for (const char* p : {"0", "0.25", "0.5", "0.75", "1", "keep_end", "move_front", "full_shuffle"}) g.row({p});
    return g;
  }
  for (const auto& s : a->at("sweep"))
    g.row({"pos " + s.at("fraction").get<std::string>(), est(s.at("accuracy")), ci(s.at("accuracy")), kAbsent,
           stat_n(s.at("accuracy"))});
  for (const auto& [name, s] : a->at("discrete").items()) g.row({name, est(s), ci(s), kAbsent, stat_n(s)});
  g.row({"Spearman (5 positions)", est(a->at("spearman")), kAbsent, stat_p(a->at("spearman")), stat_n(a->at("spearman"))});
  g.row({"McNemar ordered vs keep_end", kAbsent, kAbsent, stat_p(a->at("mcnemar_ordered_vs_keep_end")),
         stat_n(a->at("mcnemar_ordered_vs_keep_end"))});
  g.notes.push_back("sweep items=" + std::to_string(a->at("sweep_items").get<std::size_t>()) +
                    "  discrete items=" + std::to_string(a->at("discrete_items").get<std::size_t>()));
  return g;
}

Grid fidelity_grid(const json* a) {
  Grid g{"Teacher-forcing fidelity", {"Experiment", "Condition", "Metric", "Threshold", "n", "Status"}, {}, {}};
  if (a == nullptr) {
    g.row({kAbsent});
    return g;
  }
  if (a->contains("error")) {
    g.row({a->at("experiment").get<std::string>(), kAbsent, kAbsent, kAbsent, kAbsent,
           "absent: " + a->at("error").get<std::string>()});
    return g;
  }
  const bool pass = a->at("pass").get<bool>();
  g.row({a->at("experiment").get<std::string>(), a->at("condition").get<std::string>(), num(a->at("metric")),
         num(a->at("threshold"), 2), std::to_string(a->at("n").get<std::size_t>()),
         pass ? "pass" : "FAIL (excluded from confirmatory reporting)"});
  return g;
}

Grid mech_grid(const json* a) {
  Grid g{"Head-level sensitivity", {"Quantity", "Value", "Detail"}, {}, {}};
  if (a == nullptr) {
    g.row({kAbsent});
    return g;
  }
  if (a->contains("topk")) {
    g.row({"baseline accuracy (eval split)", num(a->at("baseline")), "n=" + std::to_string(a->at("n_eval").get<std::size_t>())});
    const auto& t = a->at("topk");
    g.row({"top-" + std::to_string(t.at("k").get<int>()) + " ablated", num(t.at("accuracy")),
           "drop " + num(t.at("drop"))});
    for (const auto& [k, v] : t.at("failures").items()) g.row({"  failures: " + k, std::to_string(v.get<std::size_t>())});
    for (const auto& r : a->at("sweep").at("rows"))
      g.row({"cumulative K=" + std::to_string(r.at("k").get<int>()), num(r.at("accuracy"))});
    const auto& k50 = a->at("sweep").at("k50");
    g.row({"K50", k50.is_null() ? kAbsent : std::to_string(k50.get<int>())});
    if (a->contains("controls")) {
      const auto& c = a->at("controls");
      g.row({"random control mean drop", c.contains("mean_drop") ? num(c.at("mean_drop")) : kAbsent,
             std::to_string(c.at("sets").size()) + " sets"});
      g.row({"permutation p (top-K vs controls)", c.contains("permutation_p") ? pval(c.at("permutation_p")) : kAbsent,
             "n=" + std::to_string(c.at("permutation_n").get<int>())});
    }
    if (a->contains("induction_overlap")) {
      const auto& o = a->at("induction_overlap");
      g.row({"induction overlap k", std::to_string(o.at("k").get<int>()),
             "top " + std::to_string(o.at("top_n").get<int>()) + " of " + std::to_string(o.at("population").get<std::int64_t>())});
      g.row({"hypergeometric p", pval(o.at("p"))});
      g.row({"full-rank Spearman", est(o.at("spearman")), "p " + stat_p(o.at("spearman"))});
    }
    g.notes.push_back("rank split " + a->at("rank_split").get<std::string>() + "  eval split " +
                      a->at("eval_split").get<std::string>());
  } else {
    g.row({"screen items", std::to_string(a->at("n_screen").get<std::size_t>())});
    g.row({"heads passing |dLD| threshold", std::to_string(a->at("heads_passing").get<std::size_t>()),
           "threshold " + num(a->at("threshold"), 2)});
    const auto& v = a->at("validation");
    g.row({"validation ordered accuracy", num(v.at("ordered")), "n=" + std::to_string(a->at("n_validation").get<std::size_t>())});
    g.row({"validation shuffled accuracy", num(v.at("shuffled"))});
    g.row({"group-patched accuracy", num(v.at("patched"))});
    g.row({"gap recovery", num(v.at("gap_recovery"))});
    const auto& s = a->at("stability");
    g.row({"split-half Jaccard (mean)", num(s.at("jaccard_mean")), std::to_string(s.at("splits").get<int>()) + " splits"});
    g.row({"split-half Jaccard (min)", num(s.at("jaccard_min"))});
    g.row({"Gini", num(s.at("gini")), s.at("gini_error").is_null() ? "" : "undefined: " + s.at("gini_error").get<std::string>()});
    g.row({"Gini permutation p", pval(s.at("gini_p"))});
  }
  return g;
}

Grid freegen_grid(const json* a) {
  Grid g{"Free generation", {"Metric", "Value"}, {}, {}};
  const std::vector<std::pair<const char*, const char*>> rows{
      {"Final answer = last CoT number", "answer_is_last"},
      {"Gold is last CoT number", "gold_is_last"},
      {"Accuracy | gold is last", "acc_given_gold_last"},
      {"Accuracy | gold not last", "acc_given_gold_not_last"},
      {"Answer = last | incorrect", "answer_is_last_given_incorrect"},
      {"Accuracy", "accuracy"}};
  for (const auto& [label, key] : rows) g.row({label, a == nullptr ? kAbsent : num(a->at(key))});
  if (a != nullptr) {
    g.row({"n", std::to_string(a->at("n").get<std::size_t>())});
    g.row({"unparseable (no delimiter)", std::to_string(a->at("unparseable").get<std::size_t>())});
  }
  return g;
}

}  // namespace

std::string_view to_string(TableName t) {
  switch (t) {
    case TableName::decomposition: return "decomposition";
    case TableName::ladder: return "ladder";
    case TableName::distractor: return "distractor";
    case TableName::framing: return "framing";
    case TableName::hierarchy: return "hierarchy";
    case TableName::position: return "position";
    case TableName::fidelity: return "fidelity";
    case TableName::mech: return "mech";
    case TableName::freegen: return "freegen";
  }
  return "decomposition";
}

std::optional<TableName> table_from_string(std::string_view s) {
  for (auto t : kTables)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

std::vector<TableName> all_tables() { return {kTables.begin(), kTables.end()}; }

RenderedTable render_table(const Artifacts& artifacts, TableName table) {
  RenderedTable out;
  out.name = table;
  const std::string name(to_string(table));
  const json* a = artifact(artifacts, name);
  std::string reason;
  if (a == nullptr) {
    reason = "artifact '" + name + "' not computed in this run";
  } else if (auto e = error_of(*a); !e.empty() && table != TableName::fidelity) {
    reason = e;
    a = nullptr;
  }
  Grid g;
  switch (table) {
    case TableName::decomposition: g = decomposition_grid(a); break;
    case TableName::ladder: g = ladder_grid(a, a == nullptr ? nullptr : artifact(artifacts, "depth_partition")); break;
    case TableName::distractor: g = distractor_grid(a, "Distractor suite"); break;
    case TableName::framing: g = distractor_grid(a, "Framing suite"); break;
    case TableName::hierarchy: g = hierarchy_grid(a); break;
    case TableName::position: g = position_grid(a); break;
    case TableName::fidelity: g = fidelity_grid(a); break;
    case TableName::mech: g = mech_grid(a); break;
    case TableName::freegen: g = freegen_grid(a); break;
  }
  out.complete = a != nullptr;
  if (!out.complete) g.notes.push_back("absent: " + reason);
  out.text = g.text();
  out.value = g.value();
  out.value["table"] = name;
  out.value["complete"] = out.complete;
  out.value["source"] = a == nullptr ? json(nullptr) : *a;
  if (!out.complete) out.value["absent_reason"] = reason;
  return out;
}

RenderedTable render_table(const RunStore& store, TableName table) {
  Artifacts artifacts;
  for (const auto& name : store.artifact_names())
    if (auto a = store.artifact(name)) artifacts[name] = *a;
  return render_table(artifacts, table);
}

std::vector<TableName> publish_tables(RunStore& store, const Artifacts& artifacts) {
  std::vector<TableName> out;
  for (auto t : kTables) {
    auto r = render_table(artifacts, t);
    if (!r.complete) continue;
    store.put_table(std::string(to_string(t)), r.text, r.value);
    out.push_back(t);
  }
  return out;
}

// ---- verification ---------------------------------------------------------------------

namespace {

std::string describe(const GenerationRecord& r) {
  return r.item_id + " / " + r.condition + " / " + r.intervention;
}

}  // namespace

VerifyReport verify_run(const RunStore& store) {
  VerifyReport rep;
  rep.records = store.records().size();
  for (const auto& rec : store.records()) {
    if (rec.config_hash != store.config_hash())
      rep.problems.push_back("record " + describe(rec) + " carries a foreign config hash");
    if (rec.excluded && !rec.output_text.empty())
      rep.problems.push_back("excluded record " + describe(rec) + " has generation text");
    GenerationRecord again = rec;
    score_record(again, rec.condition == kFreeCondition);
    if (record_to_json(again) != record_to_json(rec))
      rep.problems.push_back("record " + describe(rec) + " does not re-score to its stored fields");
    if (rec.is_correct && rec.matches_distractor.value_or(false) && rec.distractor_value != rec.gold)
      rep.problems.push_back("record " + describe(rec) + " matches both gold and distractor");
  }

  AnalysisInput in;
  Artifacts recomputed;
  try {
    in = analysis_input(store);
    recomputed = analyze(in);
  } catch (const std::exception& e) {
    rep.problems.push_back(std::string("analysis failed: ") + e.what());
    return rep;
  }

  for (const auto& name : store.artifact_names()) {
    ++rep.artifacts_checked;
    const auto stored = store.artifact(name);
    auto it = recomputed.find(name);
    if (it == recomputed.end()) {
      rep.problems.push_back("artifact " + name + " is not produced by this run's analysis");
      continue;
    }
    if (RunStore::canonical(*stored) != RunStore::canonical(it->second))
      rep.problems.push_back("artifact " + name + " differs from its recomputation");
  }
  for (const auto& [name, _] : recomputed)
    if (!store.artifact(name)) rep.problems.push_back("artifact " + name + " is missing from the store");

  for (auto t : kTables) {
    const std::string name(to_string(t));
    const auto stored = store.table_text(name);
    if (!stored) continue;
    ++rep.tables_checked;
    const auto fresh = render_table(recomputed, t);
    if (*stored != fresh.text) rep.problems.push_back("table " + name + " differs from its recomputation");
    const auto json_path = store.dir() / "tables" / (name + ".json");
    if (std::filesystem::exists(json_path) && read_file(json_path) != RunStore::canonical(fresh.value))
      rep.problems.push_back("table " + name + ".json differs from its recomputation");
  }
  return rep;
}

// ---- ad-hoc contrasts ---------------------------------------------------------------------

json contrast(const std::vector<GenerationRecord>& records, const std::string& condition_a,
              const std::string& condition_b, const std::string& intervention, int resamples, std::uint64_t seed) {
  const RecordView view(records);
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.item_id);
  std::vector<std::string> common;
  std::vector<double> a, b;
  stats::PairedOutcomes pairs;
  for (const auto& id : ids) {
    const auto* ra = view.usable(id, condition_a, intervention);
    const auto* rb = view.usable(id, condition_b, intervention);
    if (ra == nullptr || rb == nullptr) continue;
    common.push_back(id);
    a.push_back(ra->is_correct ? 1.0 : 0.0);
    b.push_back(rb->is_correct ? 1.0 : 0.0);
    pairs.item_ids.push_back(id);
    pairs.a.push_back(ra->is_correct);
    pairs.b.push_back(rb->is_correct);
  }
  if (common.empty()) throw std::runtime_error("no item has usable records for both conditions");
  const auto n = static_cast<std::int64_t>(common.size());
  auto k_of = [](const std::vector<double>& v) {
    return static_cast<std::int64_t>(std::count(v.begin(), v.end(), 1.0));
  };
  json out;
  out["a"] = condition_a;
  out["b"] = condition_b;
  out["intervention"] = intervention;
  out["n"] = n;
  out["index_hash"] = index_hash(common);
  out["accuracy_a"] = stat_to_json(stats::wilson_ci(k_of(a), n));
  out["accuracy_b"] = stat_to_json(stats::wilson_ci(k_of(b), n));
  if (n >= 2) out["difference"] = stat_to_json(stats::paired_bootstrap_diff(a, b, resamples, 0.95, seed));
  out["mcnemar"] = stat_to_json(stats::mcnemar_exact(pairs));
  return out;
}

RunOutcome run_plan(const ExperimentPlan& plan, const std::filesystem::path& out_dir, ModelBackend* backend) {
  RunOutcome out;
  auto dataset = load_dataset(plan.dataset, plan.dataset_format);
  out.problems = dataset.problems.size();
  out.dataset_errors = dataset.errors;
  if (dataset.problems.empty()) throw std::runtime_error("dataset " + plan.dataset + " holds no usable problems");
  const auto config = run_config(plan, sha256_hex(read_file(plan.dataset)));
  out.run_id = run_id_for(config);
  auto store = RunStore::open_or_create(out_dir, out.run_id, config);
  out.dir = store.dir();
  std::unique_ptr<ModelBackend> owned;
  if (backend == nullptr) {
    owned = make_backend(plan.backend, dataset.problems, plan.backend_options);
    backend = owned.get();
  }
  const auto calls_before = backend->total_calls();
  Session session(plan, std::move(dataset.problems), *backend, store);
  out.artifacts = run_experiment(session);
  out.tables = publish_tables(store, out.artifacts);
  out.model_calls = backend->total_calls() - calls_before;
  return out;
}

std::vector<GenerationRecord> load_records_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<GenerationRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw IntegrityError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace cotprobe
