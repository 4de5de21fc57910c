#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>

#include "cotprobe/format.hpp"
#include "cotprobe/harness.hpp"
#include "cotprobe/mech.hpp"
#include "cotprobe/seeding.hpp"
#include "cotprobe/simbots.hpp"

namespace cotprobe {

using nlohmann::json;
using stats::StatResult;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::array<double, 5> kFractions{0.0, 0.25, 0.5, 0.75, 1.0};

json opt_stat(const std::optional<StatResult>& r) { return r ? stat_to_json(*r) : json(nullptr); }
json opt_real(const std::optional<double>& v) { return v ? json(real_to_string(*v)) : json(nullptr); }

// Bootstrap stream per named statistic, so adding a statistic never shifts
// the draws of another.
std::uint64_t stat_seed(const ExperimentPlan& plan, std::string_view name) {
  return digest_u64(md5(std::string(name) + "|" + std::to_string(plan.analysis_seed)));
}

StatResult proportion(std::int64_t k, std::int64_t n) { return stats::wilson_ci(k, n); }

std::optional<StatResult> maybe_proportion(std::int64_t k, std::int64_t n) {
  if (n <= 0) return std::nullopt;
  return proportion(k, n);
}

double share(std::span<const double> xs) {
  long double s = 0;
  for (double x : xs) s += x;
  return static_cast<double>(s / static_cast<long double>(xs.size()));
}

std::int64_t count_true(std::span<const double> xs) {
  std::int64_t k = 0;
  for (double x : xs) k += x != 0.0 ? 1 : 0;
  return k;
}

// mean(a) - mean(b) on paired 0/1 vectors. The estimate is the difference of
// the two reported accuracies (k/n each), bit for bit.
StatResult paired_difference(const ExperimentPlan& plan, std::string_view name, const std::vector<double>& a,
                             const std::vector<double>& b) {
  const auto n = static_cast<std::int64_t>(a.size());
  const double est = static_cast<double>(count_true(a)) / static_cast<double>(n) -
                     static_cast<double>(count_true(b)) / static_cast<double>(n);
  StatResult r;
  if (a.size() >= 2) {
    r = stats::paired_bootstrap_diff(a, b, plan.bootstrap_resamples, 0.95, stat_seed(plan, name));
  } else {
    r.method = "paired_bootstrap";
    r.n = n;
  }
  r.estimate = est;
  if (r.ci) {
    r.ci->low = std::min(r.ci->low, est);
    r.ci->high = std::max(r.ci->high, est);
  }
  return r;
}

StatResult paired_mcnemar(const std::vector<std::string>& ids, const std::vector<double>& a,
                          const std::vector<double>& b) {
  stats::PairedOutcomes p;
  p.item_ids = ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    p.a.push_back(a[i] != 0.0);
    p.b.push_back(b[i] != 0.0);
  }
  return stats::mcnemar_exact(p);
}

double correct(const GenerationRecord* r) { return r != nullptr && r->is_correct ? 1.0 : 0.0; }

std::string exclusion_key(const std::string& condition, const std::string& reason) {
  return condition + ":" + reason.substr(0, reason.find(':'));
}

// Baseline-correct items for a baseline condition, in dataset order.
std::vector<std::string> baseline_items(const AnalysisInput& in, const std::vector<std::string>& ids,
                                        const std::string& condition, const std::string& intervention = "none") {
  std::vector<std::string> out;
  for (const auto& id : ids) {
    const auto* r = in.records.usable(id, condition, intervention);
    if (r == nullptr) continue;
    if (in.plan.filters.baseline_correct && !r->is_correct) continue;
    out.push_back(id);
  }
  return out;
}

void tally_exclusions(const AnalysisInput& in, const std::vector<std::string>& ids, const std::string& condition,
                      std::map<std::string, std::size_t>& into, const std::string& intervention = "none") {
  for (const auto& id : ids)
    if (const auto* r = in.records.get(id, condition, intervention); r != nullptr && r->excluded)
      ++into[exclusion_key(condition, *r->excluded)];
}

json counts_json(const std::map<std::string, std::size_t>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

std::string first_seed_suffix(const ExperimentPlan& plan) {
  return "@s" + std::to_string(plan.seeds.empty() ? 0 : plan.seeds.front());
}

}  // namespace

std::string index_hash(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  std::string joined;
  for (const auto& id : ids) {
    joined += id;
    joined += '\n';
  }
  return sha256_hex(joined).substr(0, 16);
}

std::string cell_name(DistractorKind kind, Framing framing) { return distractor_tag(kind, framing); }

// ---- decomposition ---------------------------------------------------------------

json DecompositionResult::to_json() const {
  json j;
  j["P_A"] = stat_to_json(p_a);
  j["P_B"] = stat_to_json(p_b);
  j["P_C"] = stat_to_json(p_c);
  j["delta_copy"] = stat_to_json(delta_copy);
  j["delta_offcopy"] = stat_to_json(delta_offcopy);
  j["P_residual"] = stat_to_json(p_residual);
  j["ceiling_norm"] = opt_stat(ceiling_norm);
  j["mcnemar_B_vs_A"] = stat_to_json(mcnemar_b_vs_a);
  j["n_baseline"] = n_baseline;
  j["n"] = counts_json(n_per_condition);
  j["excluded"] = counts_json(excluded);
  j["n_common"] = common_items.size();
  j["index_hash"] = index_hash(common_items);
  return j;
}

DecompositionResult analyze_decomposition(const AnalysisInput& in) {
  DecompositionResult r;
  const auto base = baseline_items(in, in.item_ids, "C");
  if (base.empty()) throw std::runtime_error("decomposition: no baseline-correct items");
  r.n_baseline = base.size();
  tally_exclusions(in, base, "A", r.excluded);
  tally_exclusions(in, base, "B", r.excluded);

  std::vector<double> a, b, c;
  for (const auto& id : base) {
    const auto* ra = in.records.usable(id, "A");
    const auto* rb = in.records.usable(id, "B");
    if (ra != nullptr) ++r.n_per_condition["A"];
    if (rb != nullptr) ++r.n_per_condition["B"];
    if (ra == nullptr || rb == nullptr) continue;
    r.common_items.push_back(id);
    a.push_back(correct(ra));
    b.push_back(correct(rb));
    c.push_back(correct(in.records.usable(id, "C")));
  }
  r.n_per_condition["C"] = base.size();
  if (r.common_items.empty()) throw std::runtime_error("decomposition: no item has both A and B records");

  const auto n = static_cast<std::int64_t>(a.size());
  r.p_a = proportion(count_true(a), n);
  r.p_b = proportion(count_true(b), n);
  r.p_c = proportion(count_true(c), n);
  r.delta_copy = paired_difference(in.plan, "delta_copy", b, a);
  r.delta_offcopy = paired_difference(in.plan, "delta_offcopy", c, b);
  r.p_residual = r.p_a;
  if (r.p_c.estimate > 0.0) {
    StatResult cn;
    if (a.size() >= 2) {
      cn = stats::paired_bootstrap(
          a.size(),
          [&](std::span<const std::size_t> idx) {
            long double sa = 0, sb = 0, sc = 0;
            for (auto i : idx) {
              sa += a[i];
              sb += b[i];
              sc += c[i];
            }
            return sc == 0 ? kNaN : static_cast<double>((sb - sa) / sc);
          },
          in.plan.bootstrap_resamples, 0.95, stat_seed(in.plan, "ceiling_norm"));
    }
    cn.method = "paired_bootstrap_ratio";
    cn.n = n;
    cn.estimate = r.delta_copy.estimate / r.p_c.estimate;
    if (cn.ci) {
      cn.ci->low = std::min(cn.ci->low, cn.estimate);
      cn.ci->high = std::max(cn.ci->high, cn.estimate);
    }
    r.ceiling_norm = cn;
  }
  r.mcnemar_b_vs_a = paired_mcnemar(r.common_items, b, a);
  return r;
}

// ---- causal ladder ---------------------------------------------------------------

json LadderResult::to_json() const {
  json j;
  json acc = json::object();
  for (const auto& [k, v] : accuracy) acc[k] = stat_to_json(v);
  j["accuracy"] = acc;
  j["copy_override_gap"] = stat_to_json(copy_override_gap);
  j["retained_context"] = stat_to_json(retained_context);
  j["p_distractor_D_rep"] = stat_to_json(p_distractor_drep);
  json cs = json::array();
  for (const auto& c : contrasts)
    cs.push_back({{"name", c.name},
                  {"difference", stat_to_json(c.difference)},
                  {"mcnemar", stat_to_json(c.mcnemar)},
                  {"holm_p", real_to_string(c.holm_p)}});
  j["contrasts"] = cs;
  j["excluded"] = counts_json(excluded);
  j["n_common"] = common_items.size();
  j["index_hash"] = index_hash(common_items);
  return j;
}

LadderResult analyze_causal_ladder(const AnalysisInput& in) {
  LadderResult r;
  const auto base = baseline_items(in, in.item_ids, "C");
  if (base.empty()) throw std::runtime_error("causal ladder: no baseline-correct items");
  const auto conds = ladder_conditions();
  for (const auto& c : conds) tally_exclusions(in, base, c, r.excluded);

  std::map<std::string, std::vector<double>> outcome;
  std::vector<double> distractor_hits;
  for (const auto& id : base) {
    bool all = true;
    for (const auto& c : conds) all = all && in.records.usable(id, c) != nullptr;
    if (!all) continue;
    r.common_items.push_back(id);
    for (const auto& c : conds) outcome[c].push_back(correct(in.records.usable(id, c)));
    const auto* rep = in.records.usable(id, "D_rep");
    distractor_hits.push_back(rep->matches_distractor.value_or(false) ? 1.0 : 0.0);
  }
  if (r.common_items.empty()) throw std::runtime_error("causal ladder: no item has records in every condition");

  const auto n = static_cast<std::int64_t>(r.common_items.size());
  for (const auto& c : conds) r.accuracy[c] = proportion(count_true(outcome[c]), n);
  r.copy_override_gap = paired_difference(in.plan, "copy_override_gap", outcome["D_trunc"], outcome["D_rep"]);
  r.retained_context = paired_difference(in.plan, "retained_context", outcome["D_trunc"], outcome["no_cot"]);
  r.p_distractor_drep = proportion(count_true(distractor_hits), n);

  const std::array<std::pair<const char*, const char*>, 3> pairs{
      {{"D_rep", "A"}, {"D_trunc", "no_cot"}, {"D_blank", "D_trunc"}}};
  std::vector<double> ps;
  for (const auto& [x, y] : pairs) {
    LadderContrast c;
    c.name = std::string(x) + " vs " + y;
    c.difference = paired_difference(in.plan, c.name, outcome[x], outcome[y]);
    c.mcnemar = paired_mcnemar(r.common_items, outcome[x], outcome[y]);
    ps.push_back(c.mcnemar.p_value.value_or(1.0));
    r.contrasts.push_back(std::move(c));
  }
  const auto holm = stats::holm_bonferroni(ps);
  for (std::size_t i = 0; i < r.contrasts.size(); ++i) r.contrasts[i].holm_p = holm[i];
  return r;
}

// ---- depth partition -------------------------------------------------------------

json DepthPartition::to_json() const {
  json j;
  json items = json::object();
  for (const auto& [id, one] : one_op) items[id] = one ? "one_op" : "multi_step";
  j["items"] = items;
  j["n_one_op"] = n_one_op;
  j["n_multi_step"] = n_multi_step;
  j["one_op_accuracy"] = opt_stat(one_op_accuracy);
  j["multi_step_accuracy"] = opt_stat(multi_step_accuracy);
  j["one_op_floor"] = opt_stat(one_op_floor);
  j["multi_step_floor"] = opt_stat(multi_step_floor);
  return j;
}

DepthPartition depth_partition(const std::vector<const GenerationRecord*>& trunc_records,
                               const RecordView* floor_records) {
  DepthPartition out;
  std::int64_t k_one = 0, k_multi = 0;
  std::int64_t f_one = 0, f_multi = 0, fn_one = 0, fn_multi = 0;
  for (const auto* rec : trunc_records) {
    if (rec == nullptr || rec->excluded) continue;
    const auto gold = Decimal::parse(rec->gold);
    if (!gold) continue;
    // The retained body is everything before the delimiter line.
    const std::string_view body = prefix_body(rec->prefix);
    const bool one = reachable(retained_operands(body), *gold, 1);
    out.one_op[rec->item_id] = one;
    (one ? out.n_one_op : out.n_multi_step) += 1;
    (one ? k_one : k_multi) += rec->is_correct ? 1 : 0;
    if (floor_records != nullptr) {
      if (const auto* f = floor_records->usable(rec->item_id, "no_cot")) {
        (one ? fn_one : fn_multi) += 1;
        (one ? f_one : f_multi) += f->is_correct ? 1 : 0;
      }
    }
  }
  out.one_op_accuracy = maybe_proportion(k_one, static_cast<std::int64_t>(out.n_one_op));
  out.multi_step_accuracy = maybe_proportion(k_multi, static_cast<std::int64_t>(out.n_multi_step));
  if (floor_records != nullptr) {
    out.one_op_floor = maybe_proportion(f_one, fn_one);
    out.multi_step_floor = maybe_proportion(f_multi, fn_multi);
  }
  return out;
}

// ---- shuffles -----------------------------------------------------------------------

json ShuffleResult::to_json() const {
  json j;
  j["mode"] = mode;
  j["source"] = source;
  json rows_j = json::array();
  for (const auto& row : rows)
    rows_j.push_back({{"condition", row.condition},
                      {"accuracy", real_to_string(row.accuracy)},
                      {"retention", opt_stat(row.retention)},
                      {"undefined_reason", row.undefined_reason ? json(*row.undefined_reason) : json(nullptr)},
                      {"n", row.n}});
  j["rows"] = rows_j;
  j["excluded"] = counts_json(excluded);
  j["n_items"] = items.size();
  j["index_hash"] = index_hash(items);
  json per = json::object();
  for (const auto& [cond, m] : per_item) {
    json pm = json::object();
    for (const auto& [id, v] : m) pm[id] = real_to_string(v);
    per[cond] = pm;
  }
  j["per_item"] = per;
  return j;
}

namespace {

// Condition tags recorded for one shuffle condition name.
std::vector<std::string> expand_shuffle(const std::string& prefix, const std::string& name,
                                        const std::vector<int>& seeds) {
  const auto kind = *shuffle_kind_from_string(name);
  if (kind == ShuffleKind::ordered || kind == ShuffleKind::reverse_order || kind == ShuffleKind::no_cot)
    return {prefix + shuffle_tag(kind, 0)};
  std::vector<std::string> out;
  for (int s : seeds) out.push_back(prefix + shuffle_tag(kind, s));
  return out;
}

// Mean correctness over the usable tags of one item, or nullopt.
std::optional<double> item_mean(const RecordView& view, const std::string& id, const std::vector<std::string>& tags,
                                const std::string& intervention = "none") {
  std::size_t n = 0, k = 0;
  for (const auto& t : tags)
    if (const auto* r = view.usable(id, t, intervention)) {
      ++n;
      k += r->is_correct ? 1 : 0;
    }
  if (n == 0) return std::nullopt;
  return static_cast<double>(k) / static_cast<double>(n);
}

}  // namespace

ShuffleResult analyze_shuffle(const AnalysisInput& in) {
  ShuffleResult r;
  const bool self = in.plan.experiment == Experiment::selfgen_shuffle;
  const std::string prefix = self ? std::string(kSelfPrefix) : "";
  const auto mode = in.plan.effective_retention_mode();
  r.mode = stats::to_string(mode);
  r.source = self ? "self_generated" : "gold_cot";

  // Universe: token-budget survivors, or items the model itself solved.
  std::vector<std::string> pool;
  if (self) {
    for (const auto& id : in.item_ids) {
      const auto* f = in.records.get(id, std::string(kFreeCondition));
      if (f == nullptr) continue;
      if (f->excluded || !f->is_correct) {
        ++r.excluded[f->excluded ? exclusion_key("free", *f->excluded) : "free:incorrect"];
        continue;
      }
      pool.push_back(id);
    }
  } else {
    const int budget = in.plan.effective_max_tokens();
    const auto lengths_it = in.measurements.find("token_lengths");
    for (const auto& id : in.item_ids) {
      if (budget > 0 && lengths_it != in.measurements.end() && lengths_it->second.contains(id) &&
          lengths_it->second.at(id).get<std::size_t>() > static_cast<std::size_t>(budget)) {
        ++r.excluded["over_length"];
        continue;
      }
      pool.push_back(id);
    }
  }
  const std::string ordered = prefix + "ordered";
  tally_exclusions(in, pool, ordered, r.excluded);
  if (in.plan.filters.baseline_correct)
    for (const auto& id : pool)
      if (const auto* o = in.records.usable(id, ordered); o != nullptr && !o->is_correct) ++r.excluded["baseline_incorrect"];
  r.items = baseline_items(in, pool, ordered);

  std::vector<std::string> names;
  for (const auto& name : shuffle_conditions())
    if (in.plan.conditions.empty() || name == "ordered" ||
        std::find(in.plan.conditions.begin(), in.plan.conditions.end(), name) != in.plan.conditions.end())
      names.push_back(name);

  for (const auto& name : names) {
    auto& per = r.per_item[name];
    for (const auto& id : r.items)
      if (auto m = item_mean(in.records, id, expand_shuffle(prefix, name, in.plan.seeds))) per[id] = *m;
  }
  const auto& ord = r.per_item["ordered"];
  const bool have_floor = r.per_item.count("no_cot") > 0 && !r.per_item["no_cot"].empty();

  for (const auto& name : names) {
    RetentionRow row;
    row.condition = name;
    std::vector<double> xs, os, fs;
    for (const auto& [id, v] : r.per_item[name]) {
      auto o = ord.find(id);
      if (o == ord.end()) continue;
      double floor = stats::kChanceFloor3Way;
      if (mode == stats::RetentionMode::nocot_anchored) {
        const auto& fl = r.per_item["no_cot"];
        auto f = fl.find(id);
        if (f == fl.end()) continue;
        floor = f->second;
      }
      xs.push_back(v);
      os.push_back(o->second);
      fs.push_back(floor);
    }
    row.n = xs.size();
    if (xs.empty()) {
      row.undefined_reason = mode == stats::RetentionMode::nocot_anchored && !have_floor ? "no_cot floor not collected"
                                                                                          : "no items";
      r.rows.push_back(std::move(row));
      continue;
    }
    row.accuracy = share(xs);
    auto ret_of = [&](std::span<const std::size_t> idx) -> double {
      long double sx = 0, so = 0, sf = 0;
      for (auto i : idx) {
        sx += xs[i];
        so += os[i];
        sf += fs[i];
      }
      const auto m = static_cast<long double>(idx.size());
      const auto v = stats::retention(static_cast<double>(sx / m), static_cast<double>(so / m),
                                      static_cast<double>(sf / m), mode);
      return v ? *v : kNaN;
    };
    std::vector<std::size_t> all(xs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const double point = ret_of(all);
    if (!std::isfinite(point)) {
      row.undefined_reason = "denominator is zero";
      r.rows.push_back(std::move(row));
      continue;
    }
    StatResult st;
    if (xs.size() >= 2) {
      st = stats::paired_bootstrap(xs.size(), ret_of, in.plan.bootstrap_resamples, 0.95,
                                   stat_seed(in.plan, "retention|" + name));
    }
    st.method = "bootstrap_retention";
    st.n = static_cast<std::int64_t>(xs.size());
    st.estimate = point;
    if (st.ci) {
      st.ci->low = std::min(st.ci->low, point);
      st.ci->high = std::max(st.ci->high, point);
    }
    row.retention = st;
    r.rows.push_back(std::move(row));
  }
  return r;
}

// ---- position sweep ---------------------------------------------------------------

json PositionResult::to_json() const {
  json j;
  json sw = json::array();
  for (const auto& [f, s] : sweep) sw.push_back({{"fraction", real_to_string(f)}, {"accuracy", stat_to_json(s)}});
  j["sweep"] = sw;
  j["spearman"] = opt_stat(spearman);
  json d = json::object();
  for (const auto& [k, v] : discrete) d[k] = stat_to_json(v);
  j["discrete"] = d;
  j["mcnemar_ordered_vs_keep_end"] = opt_stat(mcnemar_ordered_vs_keep_end);
  j["sweep_items"] = sweep_items;
  j["discrete_items"] = discrete_items;
  j["excluded"] = counts_json(excluded);
  return j;
}

PositionResult analyze_position_sweep(const AnalysisInput& in) {
  PositionResult r;
  const auto base = baseline_items(in, in.item_ids, "ordered");

  std::set<std::string> sweep_ids, discrete_ids;
  std::vector<double> means;
  for (double f : kFractions) {
    std::int64_t k = 0, n = 0;
    for (const auto& id : base)
      for (int s : in.plan.seeds) {
        const auto tag = position_tag(SweepPosition::at(f), s);
        const auto* rec = in.records.get(id, tag);
        if (rec == nullptr) continue;
        if (rec->excluded) {
          ++r.excluded[exclusion_key(tag.substr(0, tag.rfind('@')), *rec->excluded)];
          continue;
        }
        ++n;
        k += rec->is_correct ? 1 : 0;
        sweep_ids.insert(id);
      }
    if (n == 0) continue;
    r.sweep.emplace_back(f, proportion(k, n));
    means.push_back(static_cast<double>(k) / static_cast<double>(n));
  }
  r.sweep_items = sweep_ids.size();
  if (means.size() == kFractions.size()) {
    std::vector<double> xs(kFractions.begin(), kFractions.end());
    r.spearman = stats::spearman_exact(xs, means);
  }

  const std::array<std::pair<const char*, SweepPosition>, 3> discrete{
      {{"keep_end", SweepPosition::keep_end()},
       {"move_front", SweepPosition::move_front()},
       {"full_shuffle", SweepPosition::full_shuffle()}}};
  for (const auto& [name, pos] : discrete) {
    std::int64_t k = 0, n = 0;
    for (const auto& id : base)
      for (int s : in.plan.seeds) {
        const auto tag = position_tag(pos, s);
        const auto* rec = in.records.get(id, tag);
        if (rec == nullptr) continue;
        if (rec->excluded) {
          ++r.excluded[exclusion_key(name, *rec->excluded)];
          continue;
        }
        ++n;
        k += rec->is_correct ? 1 : 0;
        discrete_ids.insert(id);
      }
    if (n > 0) r.discrete[name] = proportion(k, n);
  }
  r.discrete_items = discrete_ids.size();

  std::vector<std::string> ids;
  std::vector<double> o, ke;
  const std::string keep_tag = "keep_end" + first_seed_suffix(in.plan);
  for (const auto& id : base) {
    const auto* a = in.records.usable(id, "ordered");
    const auto* b = in.records.usable(id, keep_tag);
    if (a == nullptr || b == nullptr) continue;
    ids.push_back(id);
    o.push_back(correct(a));
    ke.push_back(correct(b));
  }
  if (!ids.empty()) r.mcnemar_ordered_vs_keep_end = paired_mcnemar(ids, o, ke);
  return r;
}

// ---- distractors ------------------------------------------------------------------

json DistractorResult::to_json() const {
  json j;
  json cs = json::array();
  for (const auto& c : cells)
    cs.push_back({{"cell", c.cell},
                  {"delimiter", c.delimiter},
                  {"n", c.n},
                  {"p_distractor", opt_stat(c.p_distractor)},
                  {"p_gold", opt_stat(c.p_gold)},
                  {"n_novel", c.n_novel},
                  {"p_distractor_novel", opt_stat(c.p_distractor_novel)},
                  {"p_gold_novel", opt_stat(c.p_gold_novel)},
                  {"threshold_test", opt_stat(c.threshold_test)},
                  {"holm_p", opt_real(c.holm_p)},
                  {"confirmatory", c.confirmatory},
                  {"excluded", c.excluded}});
  j["cells"] = cs;
  j["baseline_n"] = counts_json(baseline_n);
  return j;
}

const DistractorCell* DistractorResult::find(const std::string& cell, const std::string& delimiter) const {
  for (const auto& c : cells)
    if (c.cell == cell && c.delimiter == delimiter) return &c;
  return nullptr;
}

DistractorResult analyze_distractor(const AnalysisInput& in) {
  DistractorResult r;
  const auto cells = distractor_cells(in.plan);
  std::vector<std::string> confirm = in.plan.confirmatory;
  if (confirm.empty()) confirm = {"C1.F1", "C2.F1"};

  std::vector<std::size_t> confirm_idx;
  for (const auto& d : distractor_delimiters(in.plan)) {
    const auto base = baseline_items(in, in.item_ids, distractor_tag(DistractorKind::C0, Framing::F1_template, d));
    r.baseline_n[d] = base.size();
    for (const auto& [kind, framing] : cells) {
      DistractorCell cell;
      cell.cell = cell_name(kind, framing);
      cell.delimiter = d;
      const auto tag = distractor_tag(kind, framing, d);
      // C3 repeats gold, so only gold-rate is meaningful there.
      const bool has_value = kind != DistractorKind::C0 && kind != DistractorKind::C0b_filler &&
                             kind != DistractorKind::C3_gold_dup;
      std::int64_t k_gold = 0, k_dist = 0, kn_gold = 0, kn_dist = 0;
      for (const auto& id : base) {
        const auto* rec = in.records.get(id, tag);
        if (rec == nullptr) continue;
        if (rec->excluded) {
          ++cell.excluded;
          continue;
        }
        ++cell.n;
        const bool dist = rec->matches_distractor.value_or(false) && !rec->is_correct;
        k_gold += rec->is_correct ? 1 : 0;
        k_dist += dist ? 1 : 0;
        auto nv = rec->meta.find("distractor_novel");
        if (nv != rec->meta.end() && nv->second == "true") {
          ++cell.n_novel;
          kn_gold += rec->is_correct ? 1 : 0;
          kn_dist += dist ? 1 : 0;
        }
      }
      const auto n = static_cast<std::int64_t>(cell.n);
      const auto nn = static_cast<std::int64_t>(cell.n_novel);
      cell.p_gold = maybe_proportion(k_gold, n);
      cell.p_gold_novel = maybe_proportion(kn_gold, nn);
      if (has_value) {
        cell.p_distractor = maybe_proportion(k_dist, n);
        cell.p_distractor_novel = maybe_proportion(kn_dist, nn);
      }
      cell.confirmatory = has_value && std::find(confirm.begin(), confirm.end(), cell.cell) != confirm.end();
      if (cell.confirmatory && n > 0) {
        cell.threshold_test = stats::binom_one_sided(k_dist, n, 0.70);
        confirm_idx.push_back(r.cells.size());
      }
      r.cells.push_back(std::move(cell));
    }
  }
  std::vector<double> ps;
  for (auto i : confirm_idx) ps.push_back(r.cells[i].threshold_test->p_value.value_or(1.0));
  const auto holm = stats::holm_bonferroni(ps);
  for (std::size_t i = 0; i < confirm_idx.size(); ++i) r.cells[confirm_idx[i]].holm_p = holm[i];
  return r;
}

// ---- fidelity ------------------------------------------------------------------------

json FidelityReport::to_json() const {
  return {{"experiment", experiment}, {"condition", condition}, {"metric", opt_real(metric)},
          {"n", n},                   {"threshold", real_to_string(threshold)}, {"pass", pass}};
}

FidelityReport compute_tf_fidelity(const RecordView& records, const std::vector<std::string>& items,
                                   Experiment experiment, double threshold, const std::vector<int>& seeds) {
  FidelityReport f;
  f.experiment = std::string(to_string(experiment));
  f.threshold = threshold;
  std::vector<std::string> tags;
  std::string intervention = "none";
  switch (experiment) {
    case Experiment::decomposition:
    case Experiment::causal_ladder:
    case Experiment::mech_ablation: tags = {"C"}; break;
    case Experiment::shuffle_hierarchy:
    case Experiment::bbh_retention:
    case Experiment::patching_screen: tags = {"ordered"}; break;
    case Experiment::selfgen_shuffle: tags = {std::string(kSelfPrefix) + "ordered"}; break;
    case Experiment::position_sweep:
      for (int s : seeds) tags.push_back(position_tag(SweepPosition::at(1.0), s));
      break;
    case Experiment::distractor_suite:
    case Experiment::framing_suite:
    case Experiment::delimiter_suite: tags = {"C0"}; break;
    case Experiment::position_encoding_control:
      tags = {"ordered"};
      intervention = "pos:identity";
      break;
    case Experiment::free_generation:
      throw std::invalid_argument("free_generation has no designated fidelity condition");
  }
  f.condition = tags.size() == 1 ? tags.front() : "pos@1";
  std::size_t k = 0;
  for (const auto& id : items)
    for (const auto& t : tags)
      if (const auto* r = records.usable(id, t, intervention)) {
        ++f.n;
        k += r->is_correct ? 1 : 0;
      }
  if (f.n == 0) throw std::runtime_error("fidelity: no records for designated condition '" + f.condition + "'");
  f.metric = static_cast<double>(k) / static_cast<double>(f.n);
  f.pass = *f.metric >= threshold;
  return f;
}

// ---- free generation ---------------------------------------------------------------

json FreeGenerationMetrics::to_json() const {
  return {{"n", n},
          {"unparseable", unparseable},
          {"answer_is_last", opt_real(answer_is_last)},
          {"gold_is_last", opt_real(gold_is_last)},
          {"acc_given_gold_last", opt_real(acc_given_gold_last)},
          {"acc_given_gold_not_last", opt_real(acc_given_gold_not_last)},
          {"answer_is_last_given_incorrect", opt_real(answer_is_last_given_incorrect)},
          {"accuracy", opt_real(accuracy)}};
}

FreeGenerationMetrics analyze_free_generation(const std::vector<const GenerationRecord*>& records) {
  FreeGenerationMetrics m;
  std::size_t parsed = 0, correct_all = 0, ans_last = 0, gold_last = 0, acc_gl = 0, acc_gnl = 0, incorrect = 0,
              ans_last_incorrect = 0;
  auto ratio = [](std::size_t k, std::size_t n) -> std::optional<double> {
    if (n == 0) return std::nullopt;
    return static_cast<double>(k) / static_cast<double>(n);
  };
  for (const auto* r : records) {
    if (r == nullptr || r->excluded) continue;
    ++m.n;
    correct_all += r->is_correct ? 1 : 0;
    const auto delim = trim_delimiter(r->delimiter);
    if (r->output_text.find(delim) == std::string::npos) {
      ++m.unparseable;
      continue;
    }
    ++parsed;
    const auto last = last_cot_number(r->output_text, delim);
    const auto gold = Decimal::parse(r->gold);
    const auto* answer = r->extracted_answer ? std::get_if<Decimal>(&*r->extracted_answer) : nullptr;
    const bool a_last = last && answer != nullptr && *answer == *last;
    const bool g_last = last && gold && *gold == *last;
    ans_last += a_last ? 1 : 0;
    if (g_last) {
      ++gold_last;
      acc_gl += r->is_correct ? 1 : 0;
    } else {
      acc_gnl += r->is_correct ? 1 : 0;
    }
    if (!r->is_correct) {
      ++incorrect;
      ans_last_incorrect += a_last ? 1 : 0;
    }
  }
  m.answer_is_last = ratio(ans_last, parsed);
  m.gold_is_last = ratio(gold_last, parsed);
  m.acc_given_gold_last = ratio(acc_gl, gold_last);
  m.acc_given_gold_not_last = ratio(acc_gnl, parsed - gold_last);
  m.answer_is_last_given_incorrect = ratio(ans_last_incorrect, incorrect);
  m.accuracy = ratio(correct_all, m.n);
  return m;
}

// ---- position encoding ----------------------------------------------------------------

json PositionEncodingResult::to_json() const {
  json j;
  j["skipped"] = skipped ? json(*skipped) : json(nullptr);
  json cs = json::object();
  for (const auto& [k, v] : cells) cs[k] = stat_to_json(v);
  j["cells"] = cs;
  json se = json::object();
  for (const auto& [k, v] : shuffle_effect) se[k] = real_to_string(v);
  j["shuffle_effect"] = se;
  j["stretch"] = opt_stat(stretch);
  return j;
}

PositionEncodingResult analyze_position_encoding(const AnalysisInput& in) {
  PositionEncodingResult r;
  if (auto it = in.measurements.find("model_info"); it != in.measurements.end()) {
    if (!it->second.value("supports_position_ids", false)) {
      r.skipped = "backend does not support position_id_map";
      return r;
    }
  } else {
    r.skipped = "model_info not recorded";
    return r;
  }
  const auto base = baseline_items(in, in.item_ids, "ordered", "pos:identity");
  for (auto m : {PositionIdMap::identity, PositionIdMap::random_gaps_1to5}) {
    const std::string label = "pos:" + std::string(to_string(m));
    std::int64_t ko = 0, no = 0, ks = 0, ns = 0;
    for (const auto& id : base) {
      if (const auto* o = in.records.usable(id, "ordered", label)) {
        ++no;
        ko += o->is_correct ? 1 : 0;
      }
      for (int s : in.plan.seeds)
        if (const auto* x = in.records.usable(id, shuffle_tag(ShuffleKind::step_shuffle, s), label)) {
          ++ns;
          ks += x->is_correct ? 1 : 0;
        }
    }
    const std::string name(to_string(m));
    if (no > 0) r.cells["ordered|" + name] = proportion(ko, no);
    if (ns > 0) r.cells["step_shuffle|" + name] = proportion(ks, ns);
    if (no > 0 && ns > 0)
      r.shuffle_effect[name] = static_cast<double>(ks) / static_cast<double>(ns) -
                               static_cast<double>(ko) / static_cast<double>(no);
  }
  std::int64_t k = 0, n = 0;
  const std::string stretch = "pos:" + std::string(to_string(PositionIdMap::stretch_2p5x));
  for (const auto& id : base)
    if (const auto* o = in.records.usable(id, "ordered", stretch)) {
      ++n;
      k += o->is_correct ? 1 : 0;
    }
  r.stretch = maybe_proportion(k, n);
  return r;
}

// ---- dispatch ---------------------------------------------------------------------------

namespace {

json fidelity_json(const AnalysisInput& in) {
  try {
    return compute_tf_fidelity(in.records, in.item_ids, in.plan.experiment, in.plan.filters.tf_threshold, in.plan.seeds)
        .to_json();
  } catch (const std::exception& e) {
    return {{"experiment", std::string(to_string(in.plan.experiment))}, {"error", e.what()}};
  }
}

template <class F>
json guarded(F&& f) {
  try {
    return f();
  } catch (const std::runtime_error& e) {
    return {{"error", e.what()}};
  }
}

}  // namespace

Artifacts analyze(const AnalysisInput& in) {
  Artifacts out;
  switch (in.plan.experiment) {
    case Experiment::decomposition:
      out["decomposition"] = guarded([&] { return analyze_decomposition(in).to_json(); });
      break;
    case Experiment::causal_ladder: {
      out["ladder"] = guarded([&] { return analyze_causal_ladder(in).to_json(); });
      std::vector<const GenerationRecord*> trunc;
      for (const auto& id : baseline_items(in, in.item_ids, "C"))
        if (const auto* r = in.records.get(id, "D_trunc")) trunc.push_back(r);
      out["depth_partition"] = depth_partition(trunc, &in.records).to_json();
      break;
    }
    case Experiment::shuffle_hierarchy:
    case Experiment::selfgen_shuffle:
    case Experiment::bbh_retention: out["hierarchy"] = analyze_shuffle(in).to_json(); break;
    case Experiment::position_sweep: out["position"] = analyze_position_sweep(in).to_json(); break;
    case Experiment::distractor_suite:
    case Experiment::delimiter_suite: out["distractor"] = analyze_distractor(in).to_json(); break;
    case Experiment::framing_suite: out["framing"] = analyze_distractor(in).to_json(); break;
    case Experiment::free_generation:
      out["freegen"] = analyze_free_generation(in.records.with_condition(std::string(kFreeCondition))).to_json();
      return out;
    case Experiment::position_encoding_control:
      out["position_encoding"] = analyze_position_encoding(in).to_json();
      break;
    case Experiment::mech_ablation:
    case Experiment::patching_screen:
      for (auto& [k, v] : mech_artifacts(in)) out[k] = std::move(v);
      break;
  }
  out["fidelity"] = fidelity_json(in);
  return out;
}

}  // namespace cotprobe
