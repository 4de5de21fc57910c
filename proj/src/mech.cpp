#include "cotprobe/mech.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <stdexcept>

#include "cotprobe/format.hpp"
#include "cotprobe/perturb.hpp"
#include "cotprobe/seeding.hpp"

namespace cotprobe {

using nlohmann::json;

// ---- rankings ---------------------------------------------------------------------

std::vector<HeadId> HeadRanking::top(std::size_t k) const {
  std::vector<HeadId> out;
  for (std::size_t i = 0; i < k && i < heads.size(); ++i) out.push_back(heads[i].first);
  return out;
}

json HeadRanking::to_json() const {
  json hs = json::array();
  for (const auto& [h, s] : heads) hs.push_back({h.layer, h.head, real_to_string(s)});
  return {{"score_kind", score_kind}, {"split_id", split_id}, {"heads", hs}};
}

HeadRanking rank_heads(const HeadScoreMatrix& scores, std::string split_id) {
  HeadRanking r;
  r.score_kind = std::string(to_string(scores.kind));
  r.split_id = std::move(split_id);
  for (std::size_t i = 0; i < scores.size(); ++i) r.heads.emplace_back(scores.head_at(i), scores.scores[i]);
  std::stable_sort(r.heads.begin(), r.heads.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return r;
}

json matrix_to_json(const HeadScoreMatrix& m) {
  return {{"layers", m.layers}, {"heads", m.heads}, {"kind", std::string(to_string(m.kind))}, {"scores", wire::to_json(m)}};
}

HeadScoreMatrix matrix_from_json(const json& j) {
  ScoreKind kind = ScoreKind::attention_mass;
  const auto name = j.at("kind").get<std::string>();
  for (auto k : {ScoreKind::attention_mass, ScoreKind::prefix_match, ScoreKind::copy_score, ScoreKind::logit_recovery})
    if (to_string(k) == name) kind = k;
  return wire::score_matrix_from_json(j.at("scores"), j.at("layers").get<int>(), j.at("heads").get<int>(), kind);
}

// ---- ablation bookkeeping ------------------------------------------------------------

std::string_view to_string(FailureKind k) {
  switch (k) {
    case FailureKind::verbatim_copy: return "verbatim_copy";
    case FailureKind::multiple_of_gold: return "multiple_of_gold";
    case FailureKind::other: return "other";
  }
  return "other";
}

FailureKind classify_failure(const GenerationRecord& rec) {
  const auto gold = Decimal::parse(rec.gold);
  const auto* answer = rec.extracted_answer ? std::get_if<Decimal>(&*rec.extracted_answer) : nullptr;
  if (gold == std::nullopt || answer == nullptr) return FailureKind::other;
  for (int m : {2, 3})
    if (const auto v = checked_mul(*gold, Decimal::from_int(m)); v && *v == *answer) return FailureKind::multiple_of_gold;
  if (contains_value(rec.prefix, *answer)) return FailureKind::verbatim_copy;
  return FailureKind::other;
}

json AblationSweepResult::to_json() const {
  json rows = json::array();
  for (const auto& [k, a] : accuracy) rows.push_back({{"k", k}, {"accuracy", real_to_string(a)}});
  return {{"kind", kind}, {"baseline", real_to_string(baseline)}, {"rows", rows},
          {"k50", k50 ? json(*k50) : json(nullptr)}};
}

std::optional<int> find_k50(const std::vector<std::pair<int, double>>& accuracy, double baseline) {
  for (const auto& [k, a] : accuracy)
    if (a <= 0.5 * baseline) return k;
  return std::nullopt;
}

std::vector<std::vector<HeadId>> random_control_sets(const ModelInfo& arch, const std::vector<HeadId>& excluded,
                                                     bool layer_stratified, int size, int count, std::uint64_t seed) {
  const std::set<HeadId> banned(excluded.begin(), excluded.end());
  std::vector<HeadId> pool;
  for (int l = 0; l < arch.layers; ++l)
    for (int h = 0; h < arch.query_heads; ++h)
      if (banned.count({l, h}) == 0) pool.push_back({l, h});
  if (static_cast<int>(pool.size()) < size) throw std::invalid_argument("not enough heads outside the excluded set");

  std::vector<std::vector<HeadId>> out;
  const std::string tag = "control@s" + std::to_string(seed);
  for (int c = 0; c < count; ++c) {
    auto ctx = derive_seed(c, tag);
    std::set<HeadId> chosen;
    if (!layer_stratified) {
      auto avail = pool;
      for (int i = 0; i < size; ++i) {
        const auto j = ctx.next_below("head", avail.size());
        chosen.insert(avail[j]);
        avail.erase(avail.begin() + static_cast<std::ptrdiff_t>(j));
      }
    } else {
      std::vector<int> layers;
      for (int l = 0; l < arch.layers; ++l) layers.push_back(l);
      for (std::size_t i = layers.size(); i > 1; --i)
        std::swap(layers[i - 1], layers[ctx.next_below("layer", i)]);
      for (std::size_t i = 0; static_cast<int>(chosen.size()) < size; ++i) {
        if (i >= layers.size() * static_cast<std::size_t>(arch.query_heads) + layers.size())
          throw std::invalid_argument("cannot fill a layer-stratified control set");
        const int layer = layers[i % layers.size()];
        std::vector<HeadId> avail;
        for (const auto& h : pool)
          if (h.layer == layer && chosen.count(h) == 0) avail.push_back(h);
        if (avail.empty()) continue;
        chosen.insert(avail[ctx.next_below("head", avail.size())]);
      }
    }
    out.emplace_back(chosen.begin(), chosen.end());
  }
  return out;
}

double control_permutation_p(double top_drop, const std::vector<double>& control_drops, int n, std::uint64_t seed) {
  if (control_drops.empty()) throw std::invalid_argument("no control drops");
  std::mt19937_64 eng(seed);
  std::vector<double> null(static_cast<std::size_t>(n));
  for (auto& v : null) v = control_drops[stats::bounded(eng, control_drops.size())];
  return stats::permutation_p(top_drop, null, stats::Sided::right);
}

// ---- overlap -------------------------------------------------------------------------

json OverlapResult::to_json() const {
  return {{"top_n", top_n}, {"population", population}, {"k", k}, {"p", real_to_string(p)},
          {"spearman", stat_to_json(spearman)}};
}

double jaccard(const std::vector<HeadId>& a, const std::vector<HeadId>& b) {
  const std::set<HeadId> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (const auto& h : sa) inter += sb.count(h);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

OverlapResult overlap_analysis(const HeadScoreMatrix& a, const HeadScoreMatrix& b, int top_n) {
  if (a.layers != b.layers || a.heads != b.heads || a.size() != b.size())
    throw std::invalid_argument("rankings cover different head populations");
  OverlapResult r;
  r.population = static_cast<std::int64_t>(a.size());
  r.top_n = static_cast<int>(std::min<std::int64_t>(top_n, r.population));
  const auto ta = rank_heads(a).top(static_cast<std::size_t>(r.top_n));
  const auto tb = rank_heads(b).top(static_cast<std::size_t>(r.top_n));
  const std::set<HeadId> sb(tb.begin(), tb.end());
  for (const auto& h : ta) r.k += static_cast<int>(sb.count(h));
  r.p = stats::hypergeom_tail(r.population, r.top_n, r.top_n, r.k);
  r.spearman = stats::spearman_normal(a.scores, b.scores);
  return r;
}

// ---- patching screen ---------------------------------------------------------------------

HeadRanking screen_ranking(const PatchScreen& screen, const std::vector<std::size_t>& rows, double threshold) {
  HeadRanking r;
  r.score_kind = std::string(to_string(ScoreKind::logit_recovery));
  std::vector<std::string> ids;
  for (auto i : rows) ids.push_back(screen.items[i]);
  r.split_id = index_hash(ids);
  if (rows.empty()) return r;
  long double all = 0;
  for (auto i : rows) all += screen.all_heads[i];
  const auto n = static_cast<long double>(rows.size());
  const auto mean_all = all / n;
  const std::size_t heads = static_cast<std::size_t>(screen.layers * screen.heads);
  HeadScoreMatrix m(screen.layers, screen.heads, ScoreKind::logit_recovery);
  for (std::size_t h = 0; h < heads; ++h) {
    long double s = 0;
    for (auto i : rows) s += screen.deltas[i][h];
    const auto mean = s / n;
    if (std::fabs(static_cast<double>(mean)) <= threshold || mean_all == 0) continue;
    r.heads.emplace_back(m.head_at(h), static_cast<double>(mean / mean_all));
  }
  std::stable_sort(r.heads.begin(), r.heads.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return r;
}

json StabilityResult::to_json() const {
  return {{"jaccard_mean", real_to_string(jaccard_mean)},
          {"jaccard_min", real_to_string(jaccard_min)},
          {"splits", splits},
          {"gini", gini ? json(real_to_string(*gini)) : json(nullptr)},
          {"gini_p", gini_p ? json(real_to_string(*gini_p)) : json(nullptr)},
          {"gini_error", gini_error ? json(*gini_error) : json(nullptr)}};
}

namespace {

std::vector<double> clamped_means(const std::vector<std::vector<double>>& rows, std::size_t heads) {
  std::vector<double> out(heads, 0.0);
  if (rows.empty()) return out;
  for (std::size_t h = 0; h < heads; ++h) {
    long double s = 0;
    for (const auto& row : rows) s += row[h];
    out[h] = std::max(0.0, static_cast<double>(s / static_cast<long double>(rows.size())));
  }
  return out;
}

}  // namespace

StabilityResult screen_stability(const PatchScreen& screen, int top_n, double threshold, int splits, int permutations,
                                 std::uint64_t seed) {
  StabilityResult out;
  out.splits = splits;
  const std::size_t n = screen.items.size();
  std::vector<double> js;
  const std::string tag = "jaccard@s" + std::to_string(seed);
  for (int s = 0; s < splits; ++s) {
    auto ctx = derive_seed(s, tag);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[ctx.next_below("split", i)]);
    const std::vector<std::size_t> h1(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n / 2));
    const std::vector<std::size_t> h2(order.begin() + static_cast<std::ptrdiff_t>(n / 2), order.end());
    js.push_back(jaccard(screen_ranking(screen, h1, threshold).top(static_cast<std::size_t>(top_n)),
                         screen_ranking(screen, h2, threshold).top(static_cast<std::size_t>(top_n))));
  }
  if (!js.empty()) {
    out.jaccard_mean = stats::mean(js);
    out.jaccard_min = *std::min_element(js.begin(), js.end());
  }

  const auto heads = static_cast<std::size_t>(screen.layers * screen.heads);
  try {
    out.gini = stats::gini(clamped_means(screen.deltas, heads));
  } catch (const std::invalid_argument& e) {
    out.gini_error = e.what();
    return out;
  }
  // Null: each item's deltas are reassigned to heads at random.
  std::mt19937_64 eng(digest_u64(md5("gini|" + std::to_string(seed))));
  std::vector<double> null;
  for (int p = 0; p < permutations; ++p) {
    auto rows = screen.deltas;
    for (auto& row : rows)
      for (std::size_t i = row.size(); i > 1; --i) std::swap(row[i - 1], row[stats::bounded(eng, i)]);
    try {
      null.push_back(stats::gini(clamped_means(rows, heads)));
    } catch (const std::invalid_argument&) {
      null.push_back(0.0);
    }
  }
  out.gini_p = stats::permutation_p(*out.gini, null, stats::Sided::right);
  return out;
}

std::string ablation_label(const std::string& kind, const std::string& set) { return kind + "@" + set; }

// ---- collection ----------------------------------------------------------------------------

namespace {

std::string probe_prompt(const std::string& question, const std::string& prefix) { return question + "\n" + prefix; }

InterventionKind ablation_kind(const std::string& kind) {
  return kind == "mean" ? InterventionKind::mean_ablate : InterventionKind::zero_ablate;
}

Job clean_job(Session& s, const PreparedItem& item, const std::string& intervention = "none",
              std::optional<InterventionSpec> spec = std::nullopt) {
  const std::string d = s.plan().delimiter;
  return {&item, "C", intervention,
          [&item, d] {
            const auto* g = item.problem.numeric_gold();
            if (g == nullptr) {
              PerturbedPrefix p;
              p.item_id = item.problem.id;
              p.condition = "C";
              p.delimiter = d;
              p.meta.excluded = "non_numeric_gold";
              return p;
            }
            return gen_corruption(item.problem.id, item.trace, *g, CorruptionCondition::C_clean,
                                  Session::seed_for(item, "C"), d);
          },
          std::move(spec), std::nullopt, false};
}

Job shuffle_job(Session& s, const PreparedItem& item, ShuffleKind kind, int seed) {
  const std::string d = s.plan().delimiter;
  const std::string tag = shuffle_tag(kind, seed);
  return {&item, tag, "none",
          [&item, kind, seed, tag, d] {
            return gen_shuffle(item.problem.id, item.trace, kind, Session::seed_for(item, tag), seed, {}, d);
          },
          std::nullopt, std::nullopt, false};
}

std::vector<const PreparedItem*> budget_items(Session& s) {
  const int budget = s.plan().effective_max_tokens();
  std::vector<const PreparedItem*> out;
  const auto* lengths = budget > 0 ? &s.token_lengths() : nullptr;
  for (const auto& item : s.items())
    if (lengths == nullptr || lengths->at(item.problem.id) <= static_cast<std::size_t>(budget)) out.push_back(&item);
  return out;
}

// Items passing the length budget and the baseline condition, dataset order.
std::vector<std::string> mech_pool(const AnalysisInput& in, const std::string& baseline) {
  const int budget = in.plan.effective_max_tokens();
  const auto lengths = in.measurements.find("token_lengths");
  std::vector<std::string> out;
  for (const auto& id : in.item_ids) {
    if (budget > 0 && lengths != in.measurements.end() && lengths->second.contains(id) &&
        lengths->second.at(id).get<std::size_t>() > static_cast<std::size_t>(budget))
      continue;
    const auto* r = in.records.usable(id, baseline);
    if (r == nullptr || (in.plan.filters.baseline_correct && !r->is_correct)) continue;
    out.push_back(id);
  }
  return out;
}

struct AblationSplit {
  std::vector<std::string> rank;
  std::vector<std::string> eval;
};

// First half ranks heads, second half evaluates.
AblationSplit ablation_split(const AnalysisInput& in) {
  const auto pool = mech_pool(in, "C");
  const auto half = static_cast<std::ptrdiff_t>(pool.size() / 2);
  return {{pool.begin(), pool.begin() + half}, {pool.begin() + half, pool.end()}};
}

struct PatchSplit {
  std::vector<std::string> screen;
  std::vector<std::string> validation;
  std::string shuffled;
};

PatchSplit patch_split(const AnalysisInput& in) {
  PatchSplit p;
  p.shuffled = shuffle_tag(ShuffleKind::step_shuffle, in.plan.seeds.empty() ? 0 : in.plan.seeds.front());
  for (const auto& id : mech_pool(in, "ordered")) {
    if (in.records.usable(id, p.shuffled) == nullptr) continue;
    if (p.screen.size() < in.plan.mech.screen_items)
      p.screen.push_back(id);
    else if (p.validation.size() < in.plan.mech.validation_items)
      p.validation.push_back(id);
  }
  return p;
}

std::vector<int> sweep_ks(const ExperimentPlan& plan, int total_heads) {
  std::vector<int> ks;
  for (int k : plan.mech.ks)
    if (k <= total_heads) ks.push_back(k);
  return ks;
}

std::optional<std::string> mean_reference(const ExperimentPlan& plan, const std::vector<std::string>& rank_ids) {
  if (plan.mech.kind != "mean") return std::nullopt;
  return "ref-" + index_hash(rank_ids);
}

void require_disjoint(const std::vector<std::string>& a, const std::vector<std::string>& b, const char* what) {
  const std::set<std::string> sa(a.begin(), a.end());
  for (const auto& id : b)
    if (sa.count(id) != 0) throw std::logic_error(std::string(what) + ": splits overlap on item " + id);
}

}  // namespace

void collect_mech_ablation(Session& s) {
  const auto& plan = s.plan();
  const auto candidates = budget_items(s);
  std::map<std::string, const PreparedItem*> by_id;
  std::vector<Job> base;
  for (const auto* item : candidates) {
    by_id[item->problem.id] = item;
    base.push_back(clean_job(s, *item));
  }
  s.evaluate(base);

  const auto split = ablation_split(analysis_input(plan, s.store()));
  require_disjoint(split.rank, split.eval, "mech ablation");
  const auto info = s.model_info();

  const json mass = s.measured("attention_mass", [&] {
    std::vector<AttentionItem> items;
    for (const auto& id : split.rank) {
      const auto* rec = s.store().find(id + "\x1f" "C" "\x1f" "none");
      const auto gold = Decimal::parse(rec->gold);
      AttentionItem a;
      a.prompt = probe_prompt(by_id.at(id)->problem.question, rec->prefix);
      for (const auto& span : find_numeric_spans(a.prompt))
        if (gold && span.value == *gold) a.spans.push_back(span.range);
      items.push_back(std::move(a));
    }
    const auto result = s.backend().attention_mass(items);
    return json{{"matrix", matrix_to_json(result.scores)},
                {"items_used", result.items_used},
                {"items_skipped", result.items_skipped}};
  });
  const auto ranking = rank_heads(matrix_from_json(mass.at("matrix")), index_hash(split.rank));

  const auto ref = mean_reference(plan, split.rank);
  auto spec_for = [&](const std::vector<HeadId>& heads) {
    return InterventionSpec{ablation_kind(plan.mech.kind), heads, ref};
  };
  std::vector<Job> jobs;
  std::vector<int> ks = sweep_ks(plan, info.total_heads());
  if (plan.mech.top_k <= info.total_heads()) ks.push_back(plan.mech.top_k);
  for (int k : ks) {
    if (k == 0) continue;
    for (const auto& id : split.eval)
      jobs.push_back(clean_job(s, *by_id.at(id), ablation_label(plan.mech.kind, "top" + std::to_string(k)),
                               spec_for(ranking.top(static_cast<std::size_t>(k)))));
  }

  const json sets = s.measured("control_sets", [&] {
    json out = json::array();
    for (const auto& set :
         random_control_sets(info, ranking.top(static_cast<std::size_t>(plan.mech.top_k)), plan.mech.layer_stratified,
                             plan.mech.control_size, plan.mech.control_sets, plan.analysis_seed))
      out.push_back(wire::heads_to_json(set));
    return out;
  });
  for (std::size_t c = 0; c < sets.size(); ++c) {
    const auto heads = wire::heads_from_json(sets[c]);
    for (const auto& id : split.eval)
      jobs.push_back(clean_job(s, *by_id.at(id), ablation_label(plan.mech.kind, "ctrl" + std::to_string(c)), spec_for(heads)));
  }
  s.evaluate(jobs);

  s.measured("induction_scores", [&] {
    const auto ind = s.backend().induction_scores(plan.mech.induction_k, plan.mech.induction_n, plan.mech.induction_seed);
    return json{{"prefix_match", matrix_to_json(ind.prefix_match)}, {"copy", matrix_to_json(ind.copy)}};
  });
}

void collect_patching_screen(Session& s) {
  const auto& plan = s.plan();
  const auto candidates = budget_items(s);
  std::map<std::string, const PreparedItem*> by_id;
  std::vector<Job> base;
  for (const auto* item : candidates) {
    by_id[item->problem.id] = item;
    base.push_back(shuffle_job(s, *item, ShuffleKind::ordered, 0));
  }
  const auto base_records = s.evaluate(base);

  const int seed0 = plan.seeds.empty() ? 0 : plan.seeds.front();
  std::vector<Job> shuffled;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& r = base_records[i];
    if (r.excluded || (plan.filters.baseline_correct && !r.is_correct)) continue;
    shuffled.push_back(shuffle_job(s, *candidates[i], ShuffleKind::step_shuffle, seed0));
  }
  s.evaluate(shuffled);

  const auto split = patch_split(analysis_input(plan, s.store()));
  require_disjoint(split.screen, split.validation, "patching screen");
  const auto info = s.model_info();

  auto prompts = [&](const std::string& id) {
    const auto* o = s.store().find(id + "\x1f" "ordered" "\x1f" "none");
    const auto* x = s.store().find(id + "\x1f" + split.shuffled + "\x1f" "none");
    const auto& q = by_id.at(id)->problem.question;
    return std::tuple{probe_prompt(q, o->prefix), probe_prompt(q, x->prefix), o->gold};
  };

  std::vector<HeadId> all_heads;
  for (int l = 0; l < info.layers; ++l)
    for (int h = 0; h < info.query_heads; ++h) all_heads.push_back({l, h});

  const json screen = s.measured("patch_screen", [&] {
    json items = json::array();
    for (const auto& id : split.screen) {
      const auto [ordered, shuffled_p, gold] = prompts(id);
      json deltas = json::array();
      for (const auto& h : all_heads)
        deltas.push_back(real_to_string(s.backend().patch_and_score(ordered, shuffled_p, {h}, gold).logit_delta));
      const double all = s.backend().patch_and_score(ordered, shuffled_p, all_heads, gold).logit_delta;
      items.push_back({{"id", id}, {"all", real_to_string(all)}, {"deltas", deltas}});
    }
    return json{{"layers", info.layers}, {"heads", info.query_heads}, {"items", items}};
  });

  PatchScreen ps;
  ps.layers = screen.at("layers").get<int>();
  ps.heads = screen.at("heads").get<int>();
  for (const auto& it : screen.at("items")) {
    ps.items.push_back(it.at("id").get<std::string>());
    ps.all_heads.push_back(real_from_string(it.at("all").get<std::string>()));
    std::vector<double> row;
    for (const auto& d : it.at("deltas")) row.push_back(real_from_string(d.get<std::string>()));
    ps.deltas.push_back(std::move(row));
  }
  std::vector<std::size_t> rows(ps.items.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto top = screen_ranking(ps, rows, plan.mech.ldelta_threshold).top(static_cast<std::size_t>(plan.mech.top_n));

  s.measured("patch_validation", [&] {
    json out = json::object();
    out["heads"] = wire::heads_to_json(top);
    json items = json::array();
    if (!top.empty())
      for (const auto& id : split.validation) {
        const auto [ordered, shuffled_p, gold] = prompts(id);
        const auto res = s.backend().patch_and_score(ordered, shuffled_p, top, gold);
        items.push_back({{"id", id}, {"delta", real_to_string(res.logit_delta)}, {"text", res.text}});
      }
    out["items"] = items;
    return out;
  });
}

// ---- analysis ------------------------------------------------------------------------------

namespace {

double accuracy_on(const AnalysisInput& in, const std::vector<std::string>& ids, const std::string& condition,
                   const std::string& intervention, std::size_t* n_out = nullptr) {
  std::size_t n = 0, k = 0;
  for (const auto& id : ids)
    if (const auto* r = in.records.usable(id, condition, intervention)) {
      ++n;
      k += r->is_correct ? 1 : 0;
    }
  if (n_out != nullptr) *n_out = n;
  return n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n);
}

const json* find_measurement(const AnalysisInput& in, const std::string& name) {
  auto it = in.measurements.find(name);
  return it == in.measurements.end() ? nullptr : &it->second;
}

Artifacts ablation_artifacts(const AnalysisInput& in) {
  Artifacts out;
  const auto& plan = in.plan;
  const auto split = ablation_split(in);
  require_disjoint(split.rank, split.eval, "mech ablation");
  const auto* mass = find_measurement(in, "attention_mass");
  if (mass == nullptr) {
    out["mech"] = {{"error", "attention_mass not recorded"}};
    return out;
  }
  const auto matrix = matrix_from_json(mass->at("matrix"));
  const auto ranking = rank_heads(matrix, index_hash(split.rank));
  const int total = matrix.layers * matrix.heads;
  const std::string eval_id = index_hash(split.eval);

  json mech;
  mech["ranking"] = ranking.to_json();
  mech["ranking"]["items_used"] = mass->at("items_used");
  mech["rank_split"] = ranking.split_id;
  mech["eval_split"] = eval_id;
  mech["n_rank"] = split.rank.size();
  mech["n_eval"] = split.eval.size();

  std::size_t n_eval = 0;
  const double baseline = accuracy_on(in, split.eval, "C", "none", &n_eval);
  mech["baseline"] = real_to_string(baseline);

  // Top-K ablation and its failure taxonomy.
  const std::string top_label = ablation_label(plan.mech.kind, "top" + std::to_string(plan.mech.top_k));
  std::size_t n_top = 0;
  const double top_acc = accuracy_on(in, split.eval, "C", top_label, &n_top);
  std::map<std::string, std::size_t> failures{{"verbatim_copy", 0}, {"multiple_of_gold", 0}, {"other", 0}};
  for (const auto& id : split.eval)
    if (const auto* r = in.records.usable(id, "C", top_label); r != nullptr && !r->is_correct)
      ++failures[std::string(to_string(classify_failure(*r)))];
  json topk;
  topk["k"] = plan.mech.top_k;
  topk["heads"] = wire::heads_to_json(ranking.top(static_cast<std::size_t>(plan.mech.top_k)));
  topk["n"] = n_top;
  topk["accuracy"] = real_to_string(top_acc);
  topk["drop"] = real_to_string(baseline - top_acc);
  topk["failures"] = failures;
  mech["topk"] = topk;

  AblationSweepResult sweep;
  sweep.kind = plan.mech.kind;
  sweep.baseline = baseline;
  for (int k : sweep_ks(plan, total)) {
    const std::string label = k == 0 ? "none" : ablation_label(plan.mech.kind, "top" + std::to_string(k));
    sweep.accuracy.emplace_back(k, accuracy_on(in, split.eval, "C", label));
  }
  sweep.k50 = find_k50(sweep.accuracy, baseline);
  mech["sweep"] = sweep.to_json();

  if (const auto* sets = find_measurement(in, "control_sets")) {
    std::vector<double> drops;
    json drops_j = json::array();
    for (std::size_t c = 0; c < sets->size(); ++c) {
      const double acc = accuracy_on(in, split.eval, "C", ablation_label(plan.mech.kind, "ctrl" + std::to_string(c)));
      drops.push_back(baseline - acc);
      drops_j.push_back(real_to_string(baseline - acc));
    }
    json ctrl{{"sets", *sets}, {"drops", drops_j}, {"permutation_n", plan.mech.permutation_n}};
    if (!drops.empty()) {
      ctrl["mean_drop"] = real_to_string(stats::mean(drops));
      ctrl["permutation_p"] = real_to_string(control_permutation_p(
          baseline - top_acc, drops, plan.mech.permutation_n,
          digest_u64(md5("control-null|" + std::to_string(plan.analysis_seed)))));
    }
    mech["controls"] = ctrl;
  }

  if (const auto* ind = find_measurement(in, "induction_scores")) {
    const auto induction = matrix_from_json(ind->at("prefix_match"));
    mech["induction_overlap"] = overlap_analysis(matrix, induction, plan.mech.top_n).to_json();
  }
  out["mech"] = mech;
  return out;
}

Artifacts patching_artifacts(const AnalysisInput& in) {
  Artifacts out;
  const auto& plan = in.plan;
  const auto split = patch_split(in);
  require_disjoint(split.screen, split.validation, "patching screen");
  const auto* screen = find_measurement(in, "patch_screen");
  if (screen == nullptr) {
    out["mech"] = {{"error", "patch_screen not recorded"}};
    return out;
  }
  PatchScreen ps;
  ps.layers = screen->at("layers").get<int>();
  ps.heads = screen->at("heads").get<int>();
  for (const auto& it : screen->at("items")) {
    ps.items.push_back(it.at("id").get<std::string>());
    ps.all_heads.push_back(real_from_string(it.at("all").get<std::string>()));
    std::vector<double> row;
    for (const auto& d : it.at("deltas")) row.push_back(real_from_string(d.get<std::string>()));
    ps.deltas.push_back(std::move(row));
  }
  std::vector<std::size_t> rows(ps.items.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto ranking = screen_ranking(ps, rows, plan.mech.ldelta_threshold);

  json j;
  j["screen_split"] = index_hash(split.screen);
  j["validation_split"] = index_hash(split.validation);
  j["n_screen"] = split.screen.size();
  j["n_validation"] = split.validation.size();
  j["threshold"] = real_to_string(plan.mech.ldelta_threshold);
  j["heads_passing"] = ranking.heads.size();
  j["ranking"] = ranking.to_json();
  j["stability"] = screen_stability(ps, plan.mech.top_n, plan.mech.ldelta_threshold, plan.mech.jaccard_splits,
                                    plan.mech.permutation_n, plan.analysis_seed)
                       .to_json();

  json v;
  const double ordered = accuracy_on(in, split.validation, "ordered", "none");
  const double shuffled = accuracy_on(in, split.validation, split.shuffled, "none");
  v["ordered"] = real_to_string(ordered);
  v["shuffled"] = real_to_string(shuffled);
  if (const auto* val = find_measurement(in, "patch_validation"); val != nullptr && !val->at("items").empty()) {
    std::size_t k = 0, n = 0;
    for (const auto& it : val->at("items")) {
      const auto* rec = in.records.get(it.at("id").get<std::string>(), "ordered");
      if (rec == nullptr) continue;
      ++n;
      const auto got = extract_final_answer(it.at("text").get<std::string>(), "", AnswerKind::numeric);
      const auto gold = parse_answer(rec->gold, AnswerKind::numeric);
      k += got && gold && *got == *gold ? 1 : 0;
    }
    const double patched = n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n);
    v["heads"] = val->at("heads");
    v["patched"] = real_to_string(patched);
    v["gap_recovery"] = ordered != shuffled ? json(real_to_string((patched - shuffled) / (ordered - shuffled))) : json(nullptr);
  } else {
    v["patched"] = nullptr;
    v["gap_recovery"] = nullptr;
  }
  j["validation"] = v;
  out["mech"] = j;
  return out;
}

}  // namespace

Artifacts mech_artifacts(const AnalysisInput& in) {
  if (in.plan.experiment == Experiment::patching_screen) return patching_artifacts(in);
  return ablation_artifacts(in);
}

}  // namespace cotprobe
