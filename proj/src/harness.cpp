#include "cotprobe/harness.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "cotprobe/format.hpp"
#include "cotprobe/mech.hpp"
#include "cotprobe/seeding.hpp"

namespace cotprobe {

using nlohmann::json;

namespace {

PerturbedPrefix excluded_prefix(const PreparedItem& item, const std::string& condition, const std::string& delimiter,
                                const std::string& reason) {
  PerturbedPrefix p;
  p.item_id = item.problem.id;
  p.condition = condition;
  p.delimiter = delimiter;
  p.meta.excluded = reason;
  return p;
}

std::map<std::string, std::string> meta_map(const PrefixMeta& m) {
  std::map<std::string, std::string> out;
  if (!m.seed_used.empty()) out["seed"] = m.seed_used;
  if (m.distractor_novel) out["distractor_novel"] = *m.distractor_novel ? "true" : "false";
  if (m.truncation_fraction) out["truncation_fraction"] = real_to_string(*m.truncation_fraction);
  if (m.answer_position) out["answer_position"] = std::to_string(*m.answer_position);
  return out;
}

}  // namespace

// ---- items -----------------------------------------------------------------------

std::vector<PreparedItem> prepare_items(const std::vector<Problem>& problems, std::size_t limit) {
  std::vector<PreparedItem> out;
  const std::size_t n = std::min(problems.size(), limit);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({i, problems[i], parse_trace(problems[i].reference_cot, problems[i].gold)});
  return out;
}

// ---- session ---------------------------------------------------------------------

Session::Session(ExperimentPlan plan, std::vector<Problem> problems, ModelBackend& backend, RunStore& store)
    : plan_(std::move(plan)), items_(prepare_items(problems, plan_.item_limit)), backend_(backend), store_(store) {
  json ids = json::array();
  for (const auto& item : items_) ids.push_back(item.problem.id);
  store_.put_measurement("items", ids);
}

SeedContext Session::seed_for(const PreparedItem& item, std::string_view tag) {
  return derive_seed(static_cast<std::int64_t>(item.index), tag);
}

json Session::measured(const std::string& name, const std::function<json()>& fn) {
  if (auto m = store_.measurement(name)) return *m;
  json value = fn();
  store_.put_measurement(name, value);
  return value;
}

const std::map<std::string, std::size_t>& Session::token_lengths() {
  if (!token_lengths_) {
    const json m = measured("token_lengths", [&] {
      json out = json::object();
      for (const auto& item : items_)
        out[item.problem.id] = backend_.tokenize(item.problem.question + "\n" + item.problem.reference_cot).size();
      return out;
    });
    token_lengths_ = m.get<std::map<std::string, std::size_t>>();
  }
  return *token_lengths_;
}

ModelInfo Session::model_info() {
  return wire::model_info_from_json(measured("model_info", [&] { return wire::to_json(backend_.model_info()); }));
}

GenerationRecord Session::make_record(const Job& job, const PerturbedPrefix& prefix) const {
  const auto& problem = job.item->problem;
  if (prefix.condition != job.condition)
    throw std::logic_error("prefix condition '" + prefix.condition + "' does not match job '" + job.condition + "'");
  GenerationRecord rec;
  rec.item_id = problem.id;
  rec.condition = job.condition;
  rec.intervention = job.intervention;
  rec.answer_kind = problem.answer_kind;
  rec.gold = answer_to_string(problem.gold);
  rec.delimiter = prefix.delimiter;
  rec.prefix = prefix.text;
  rec.excluded = prefix.meta.excluded;
  rec.distractor_value = prefix.meta.distractor_value;
  rec.meta = meta_map(prefix.meta);
  rec.config_hash = store_.config_hash();
  return rec;
}

GenerationRecord Session::run_job(const Job& job, const PerturbedPrefix& prefix) {
  auto rec = make_record(job, prefix);
  if (!rec.excluded) {
    GenerateRequest req;
    req.question = job.item->problem.question;
    req.injected_prefix = prefix.text;
    req.max_new_tokens = job.free_generation ? kFreeGenerationTokens : 32;
    req.few_shot = plan_.few_shot;
    req.position_id_map = job.position_map;
    try {
      rec.output_text = job.spec ? backend_.generate_with_intervention(req, *job.spec) : backend_.generate(req);
    } catch (const ItemError& e) {
      rec.excluded = std::string("model_error: ") + e.what();
    }
  }
  score_record(rec, job.free_generation);
  return rec;
}

std::vector<GenerationRecord> Session::evaluate(const std::vector<Job>& jobs) {
  std::vector<std::optional<GenerationRecord>> results(jobs.size());
  std::vector<std::size_t> plain;
  std::vector<std::size_t> intervened;
  std::map<std::string, std::size_t> first_of_key;
  std::vector<std::pair<std::size_t, std::size_t>> repeats;

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& job = jobs[i];
    const std::string key = job.item->problem.id + "\x1f" + job.condition + "\x1f" + job.intervention;
    if (const auto* cached = store_.find(key)) {
      results[i] = *cached;
      continue;
    }
    if (auto [it, fresh] = first_of_key.emplace(key, i); !fresh) {
      repeats.emplace_back(i, it->second);
      continue;
    }
    (job.spec ? intervened : plain).push_back(i);
  }

  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run_one = [&](std::size_t i) {
    try {
      const auto prefix = jobs[i].make_prefix();
      results[i] = run_job(jobs[i], prefix);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, plan_.parallelism)), plain.size());
  if (workers <= 1) {
    for (auto i : plain) {
      run_one(i);
      if (failure) break;
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t k = next.fetch_add(1);
          if (k >= plain.size()) return;
          {
            std::lock_guard lock(failure_mutex);
            if (failure) return;
          }
          run_one(plain[k]);
        }
      });
    for (auto& t : pool) t.join();
  }
  // Interventions are serialized on the backend instance.
  if (!failure)
    for (auto i : intervened) {
      run_one(i);
      if (failure) break;
    }

  // Persist whatever completed, in job order, before surfacing errors.
  std::vector<GenerationRecord> fresh;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!results[i]) continue;
    const std::string key = results[i]->key();
    if (store_.find(key) == nullptr) fresh.push_back(*results[i]);
  }
  store_.write_records(fresh);
  if (failure) std::rethrow_exception(failure);

  for (const auto& [dup, orig] : repeats) results[dup] = results[orig];
  std::vector<GenerationRecord> out;
  out.reserve(jobs.size());
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

// ---- record views ----------------------------------------------------------------

RecordView::RecordView(const std::vector<GenerationRecord>& records) {
  for (const auto& r : records) index_[r.key()] = &r;
}

const GenerationRecord* RecordView::get(const std::string& item, const std::string& condition,
                                        const std::string& intervention) const {
  auto it = index_.find(item + "\x1f" + condition + "\x1f" + intervention);
  return it == index_.end() ? nullptr : it->second;
}

const GenerationRecord* RecordView::usable(const std::string& item, const std::string& condition,
                                           const std::string& intervention) const {
  const auto* r = get(item, condition, intervention);
  return r != nullptr && !r->excluded ? r : nullptr;
}

std::vector<const GenerationRecord*> RecordView::with_condition(const std::string& condition,
                                                                const std::string& intervention) const {
  std::vector<const GenerationRecord*> out;
  for (const auto& [_, r] : index_)
    if (r->condition == condition && r->intervention == intervention) out.push_back(r);
  return out;
}

namespace {

ExperimentPlan plan_from_config(const json& config) {
  json p = config.at("plan");
  p["dataset"] = "(stored run)";
  // Runtime-only knobs are absent from the config; analysis never reads them.
  return parse_plan(p);
}

}  // namespace

AnalysisInput analysis_input(const ExperimentPlan& plan, const RunStore& store) {
  AnalysisInput in;
  in.plan = plan;
  in.records = RecordView(store.records());
  in.measurements = store.measurements();
  if (auto it = in.measurements.find("items"); it != in.measurements.end())
    in.item_ids = it->second.get<std::vector<std::string>>();
  return in;
}

AnalysisInput analysis_input(const RunStore& store) { return analysis_input(plan_from_config(store.config()), store); }

// ---- job builders ----------------------------------------------------------------

namespace {

struct Builder {
  Session& s;

  [[nodiscard]] const std::string& delim() const { return s.plan().delimiter; }

  Job corruption(const PreparedItem& item, CorruptionCondition c, const std::string& intervention = "none",
                 std::optional<InterventionSpec> spec = std::nullopt) const {
    const std::string tag(condition_tag(c));
    const std::string d = delim();
    return {&item, tag, intervention,
            [&item, c, tag, d] {
              const auto* g = item.problem.numeric_gold();
              if (g == nullptr) return excluded_prefix(item, tag, d, "non_numeric_gold");
              return gen_corruption(item.problem.id, item.trace, *g, c, Session::seed_for(item, tag), d);
            },
            std::move(spec), std::nullopt, false};
  }

  Job truncation(const PreparedItem& item, TruncationCondition c) const {
    const std::string tag(condition_tag(c));
    const std::string d = delim();
    return {&item, tag, "none",
            [&item, c, d] { return gen_truncation(item.problem.id, item.trace, item.problem.gold, c, d); }, std::nullopt,
            std::nullopt, false};
  }

  Job shuffle(const PreparedItem& item, ShuffleKind kind, int seed, const std::string& tag_prefix = "",
              const std::string& intervention = "none", std::optional<PositionIdMap> map = std::nullopt) const {
    const std::string tag = tag_prefix + shuffle_tag(kind, seed);
    const std::string d = delim();
    ModelBackend* backend = &s.backend();
    return {&item, tag, intervention,
            [&item, kind, seed, tag, d, backend] {
              Tokenizer tok = [backend](std::string_view text) { return backend->tokenize(text); };
              return gen_shuffle(item.problem.id, item.trace, kind, Session::seed_for(item, tag), seed, tok, d);
            },
            std::nullopt, map, false};
  }

  Job position(const PreparedItem& item, const SweepPosition& pos, int seed) const {
    const std::string tag = position_tag(pos, seed);
    const std::string d = delim();
    return {&item, tag, "none",
            [&item, pos, seed, tag, d] {
              return gen_position_sweep(item.problem.id, item.trace, pos, Session::seed_for(item, tag), seed, d);
            },
            std::nullopt, std::nullopt, false};
  }

  Job distractor(const PreparedItem& item, DistractorKind kind, Framing framing, const std::string& d) const {
    const std::string tag = distractor_tag(kind, framing, d);
    return {&item, tag, "none",
            [&item, kind, framing, d] {
              return gen_distractor(item.problem.id, item.trace, item.problem.gold, kind, framing, d,
                                    Session::seed_for(item, distractor_value_tag(kind)));
            },
            std::nullopt, std::nullopt, false};
  }

  Job free(const PreparedItem& item) const {
    const std::string d = delim();
    return {&item, std::string(kFreeCondition), "none",
            [&item, d] {
              PerturbedPrefix p;
              p.item_id = item.problem.id;
              p.condition = std::string(kFreeCondition);
              p.delimiter = d;
              return p;
            },
            std::nullopt, std::nullopt, true};
  }
};

std::vector<const PreparedItem*> all_items(Session& s) {
  std::vector<const PreparedItem*> out;
  for (const auto& item : s.items()) out.push_back(&item);
  return out;
}

std::vector<const PreparedItem*> within_token_budget(Session& s, const std::vector<const PreparedItem*>& items) {
  const int budget = s.plan().effective_max_tokens();
  if (budget <= 0) return items;
  const auto& lengths = s.token_lengths();
  std::vector<const PreparedItem*> out;
  for (const auto* item : items)
    if (lengths.at(item->problem.id) <= static_cast<std::size_t>(budget)) out.push_back(item);
  return out;
}

// Runs the baseline job per item and keeps the items that pass it.
std::vector<const PreparedItem*> baseline(Session& s, const std::vector<const PreparedItem*>& items,
                                          const std::function<Job(const PreparedItem&)>& make) {
  std::vector<Job> jobs;
  for (const auto* item : items) jobs.push_back(make(*item));
  const auto records = s.evaluate(jobs);
  std::vector<const PreparedItem*> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& r = records[i];
    if (r.excluded) continue;
    if (s.plan().filters.baseline_correct && !r.is_correct) continue;
    out.push_back(items[i]);
  }
  return out;
}

bool wanted(const ExperimentPlan& plan, const std::string& name) {
  return plan.conditions.empty() || std::find(plan.conditions.begin(), plan.conditions.end(), name) != plan.conditions.end();
}

bool stochastic_shuffle(ShuffleKind k) {
  return k != ShuffleKind::ordered && k != ShuffleKind::reverse_order && k != ShuffleKind::no_cot;
}

void collect_decomposition(Session& s) {
  Builder b{s};
  const auto base = baseline(s, all_items(s), [&](const PreparedItem& i) { return b.corruption(i, CorruptionCondition::C_clean); });
  std::vector<Job> jobs;
  for (const auto* item : base) {
    jobs.push_back(b.corruption(*item, CorruptionCondition::A_corrupt_all));
    jobs.push_back(b.corruption(*item, CorruptionCondition::B_preserve_gold));
  }
  s.evaluate(jobs);
}

void collect_ladder(Session& s) {
  Builder b{s};
  const auto base = baseline(s, all_items(s), [&](const PreparedItem& i) { return b.corruption(i, CorruptionCondition::C_clean); });
  std::vector<Job> jobs;
  for (const auto* item : base) {
    jobs.push_back(b.truncation(*item, TruncationCondition::no_cot));
    jobs.push_back(b.corruption(*item, CorruptionCondition::A_corrupt_all));
    jobs.push_back(b.corruption(*item, CorruptionCondition::D_rep));
    jobs.push_back(b.truncation(*item, TruncationCondition::D_trunc));
    jobs.push_back(b.truncation(*item, TruncationCondition::D_blank));
    jobs.push_back(b.corruption(*item, CorruptionCondition::B_preserve_gold));
  }
  s.evaluate(jobs);
}

void collect_shuffles(Session& s, const std::vector<const PreparedItem*>& items, const std::string& tag_prefix) {
  Builder b{s};
  const auto base = baseline(s, items, [&](const PreparedItem& i) { return b.shuffle(i, ShuffleKind::ordered, 0, tag_prefix); });
  std::vector<Job> jobs;
  for (const auto& name : shuffle_conditions()) {
    const auto kind = *shuffle_kind_from_string(name);
    if (kind == ShuffleKind::ordered || !wanted(s.plan(), name)) continue;
    for (const auto* item : base) {
      if (!stochastic_shuffle(kind)) {
        jobs.push_back(b.shuffle(*item, kind, 0, tag_prefix));
        continue;
      }
      for (int seed : s.plan().seeds) jobs.push_back(b.shuffle(*item, kind, seed, tag_prefix));
    }
  }
  s.evaluate(jobs);
}

void collect_shuffle_hierarchy(Session& s) { collect_shuffles(s, within_token_budget(s, all_items(s)), ""); }

// Free generations, then shuffles of the model's own correct chains of thought.
void collect_selfgen(Session& s, std::vector<PreparedItem>& self_items) {
  Builder b{s};
  std::vector<Job> jobs;
  for (const auto& item : s.items()) jobs.push_back(b.free(item));
  const auto records = s.evaluate(jobs);
  self_items.clear();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.excluded || !r.is_correct) continue;
    const auto& item = s.items()[i];
    const auto cut = r.output_text.rfind(trim_delimiter(r.delimiter));
    std::string cot = r.output_text.substr(0, cut);
    while (!cot.empty() && std::isspace(static_cast<unsigned char>(cot.back()))) cot.pop_back();
    PreparedItem self{item.index, item.problem, parse_trace(cot, item.problem.gold)};
    self.problem.reference_cot = cot;
    self_items.push_back(std::move(self));
  }
  std::vector<const PreparedItem*> ptrs;
  for (const auto& item : self_items) ptrs.push_back(&item);
  collect_shuffles(s, ptrs, std::string(kSelfPrefix));
}

const std::array<double, 5> kSweepFractions{0.0, 0.25, 0.5, 0.75, 1.0};

void collect_position(Session& s) {
  Builder b{s};
  const auto base = baseline(s, all_items(s), [&](const PreparedItem& i) { return b.shuffle(i, ShuffleKind::ordered, 0); });
  std::vector<Job> jobs;
  for (const auto* item : base) {
    for (int seed : s.plan().seeds) {
      for (double f : kSweepFractions) jobs.push_back(b.position(*item, SweepPosition::at(f), seed));
      jobs.push_back(b.position(*item, SweepPosition::keep_end(), seed));
      jobs.push_back(b.position(*item, SweepPosition::move_front(), seed));
      jobs.push_back(b.position(*item, SweepPosition::full_shuffle(), seed));
    }
  }
  s.evaluate(jobs);
}

void collect_distractors(Session& s) {
  Builder b{s};
  const auto cells = distractor_cells(s.plan());
  for (const auto& d : distractor_delimiters(s.plan())) {
    const auto base = baseline(s, all_items(s), [&](const PreparedItem& i) {
      return b.distractor(i, DistractorKind::C0, Framing::F1_template, d);
    });
    std::vector<Job> jobs;
    for (const auto& [kind, framing] : cells) {
      if (kind == DistractorKind::C0) continue;
      for (const auto* item : base) jobs.push_back(b.distractor(*item, kind, framing, d));
    }
    s.evaluate(jobs);
  }
}

void collect_free(Session& s) {
  Builder b{s};
  std::vector<Job> jobs;
  for (const auto& item : s.items()) jobs.push_back(b.free(item));
  s.evaluate(jobs);
}

std::string map_label(PositionIdMap m) { return "pos:" + std::string(to_string(m)); }

void collect_position_encoding(Session& s) {
  if (!s.model_info().supports_position_ids) return;
  Builder b{s};
  const auto identity = PositionIdMap::identity;
  const auto base = baseline(s, all_items(s), [&](const PreparedItem& i) {
    return b.shuffle(i, ShuffleKind::ordered, 0, "", map_label(identity), identity);
  });
  std::vector<Job> jobs;
  for (const auto* item : base) {
    for (auto m : {PositionIdMap::identity, PositionIdMap::random_gaps_1to5}) {
      jobs.push_back(b.shuffle(*item, ShuffleKind::ordered, 0, "", map_label(m), m));
      for (int seed : s.plan().seeds) jobs.push_back(b.shuffle(*item, ShuffleKind::step_shuffle, seed, "", map_label(m), m));
    }
    jobs.push_back(b.shuffle(*item, ShuffleKind::ordered, 0, "", map_label(PositionIdMap::stretch_2p5x),
                             PositionIdMap::stretch_2p5x));
  }
  s.evaluate(jobs);
}

}  // namespace

// ---- condition sets --------------------------------------------------------------

std::vector<std::string> ladder_conditions() { return {"no_cot", "A", "D_rep", "D_trunc", "D_blank", "B", "C"}; }

std::vector<std::string> shuffle_conditions() {
  return {"ordered", "within_step", "step_shuffle", "word_shuffle", "reverse_order", "token_shuffle", "no_cot"};
}

std::vector<std::pair<DistractorKind, Framing>> distractor_cells(const ExperimentPlan& plan) {
  std::vector<std::string> kinds = plan.kinds;
  std::vector<std::string> framings = plan.framings;
  switch (plan.experiment) {
    case Experiment::framing_suite:
      if (kinds.empty()) kinds = {"C1", "C2"};
      if (framings.empty()) framings = {"F1", "F2", "F3", "F4"};
      break;
    case Experiment::delimiter_suite:
      if (kinds.empty()) kinds = {"C1", "C2"};
      if (framings.empty()) framings = {"F1"};
      break;
    default:
      if (kinds.empty()) kinds = {"C0", "C0b", "C1", "C2", "C3", "intermediate"};
      if (framings.empty()) framings = {"F1"};
      break;
  }
  std::vector<std::pair<DistractorKind, Framing>> out{{DistractorKind::C0, Framing::F1_template}};
  for (const auto& k : kinds) {
    const auto kind = *distractor_kind_from_string(k);
    if (kind == DistractorKind::C0) continue;
    if (kind == DistractorKind::C0b_filler) {
      out.emplace_back(kind, Framing::F1_template);
      continue;
    }
    for (const auto& f : framings) out.emplace_back(kind, *framing_from_string(f));
  }
  return out;
}

std::vector<std::string> distractor_delimiters(const ExperimentPlan& plan) {
  if (!plan.delimiters.empty()) {
    std::vector<std::string> out;
    for (const auto& d : plan.delimiters) out.emplace_back(trim_delimiter(d));
    return out;
  }
  if (plan.experiment == Experiment::delimiter_suite) return {"####", ">>>RESULT:", "##FINAL##", "[ANSWER]"};
  return {plan.delimiter};
}

// ---- orchestration ----------------------------------------------------------------

void collect(Session& s) {
  switch (s.plan().experiment) {
    case Experiment::decomposition: return collect_decomposition(s);
    case Experiment::causal_ladder: return collect_ladder(s);
    case Experiment::shuffle_hierarchy:
    case Experiment::bbh_retention: return collect_shuffle_hierarchy(s);
    case Experiment::selfgen_shuffle: {
      std::vector<PreparedItem> self_items;
      return collect_selfgen(s, self_items);
    }
    case Experiment::position_sweep: return collect_position(s);
    case Experiment::distractor_suite:
    case Experiment::framing_suite:
    case Experiment::delimiter_suite: return collect_distractors(s);
    case Experiment::free_generation: return collect_free(s);
    case Experiment::position_encoding_control: return collect_position_encoding(s);
    case Experiment::mech_ablation: return collect_mech_ablation(s);
    case Experiment::patching_screen: return collect_patching_screen(s);
  }
}

Artifacts run_experiment(Session& s) {
  collect(s);
  auto artifacts = analyze(analysis_input(s.plan(), s.store()));
  for (const auto& [name, value] : artifacts) s.store().put_artifact(name, value);
  return artifacts;
}

namespace {

void expect(const Session& s, std::initializer_list<Experiment> allowed, const char* what) {
  for (auto e : allowed)
    if (s.plan().experiment == e) return;
  throw std::invalid_argument(std::string(what) + " needs a matching plan, got experiment '" +
                              std::string(to_string(s.plan().experiment)) + "'");
}

}  // namespace

DecompositionResult run_decomposition(Session& s) {
  expect(s, {Experiment::decomposition}, "run_decomposition");
  run_experiment(s);
  return analyze_decomposition(analysis_input(s.plan(), s.store()));
}

LadderResult run_causal_ladder(Session& s) {
  expect(s, {Experiment::causal_ladder}, "run_causal_ladder");
  run_experiment(s);
  return analyze_causal_ladder(analysis_input(s.plan(), s.store()));
}

ShuffleResult run_shuffle_hierarchy(Session& s) {
  expect(s, {Experiment::shuffle_hierarchy, Experiment::selfgen_shuffle, Experiment::bbh_retention},
         "run_shuffle_hierarchy");
  run_experiment(s);
  return analyze_shuffle(analysis_input(s.plan(), s.store()));
}

PositionResult run_position_sweep(Session& s) {
  expect(s, {Experiment::position_sweep}, "run_position_sweep");
  run_experiment(s);
  return analyze_position_sweep(analysis_input(s.plan(), s.store()));
}

DistractorResult run_distractor_suite(Session& s) {
  expect(s, {Experiment::distractor_suite, Experiment::framing_suite, Experiment::delimiter_suite},
         "run_distractor_suite");
  run_experiment(s);
  return analyze_distractor(analysis_input(s.plan(), s.store()));
}

FreeGenerationMetrics run_free_generation(Session& s) {
  expect(s, {Experiment::free_generation}, "run_free_generation");
  run_experiment(s);
  const auto in = analysis_input(s.plan(), s.store());
  return analyze_free_generation(in.records.with_condition(std::string(kFreeCondition)));
}

PositionEncodingResult run_position_encoding_control(Session& s) {
  expect(s, {Experiment::position_encoding_control}, "run_position_encoding_control");
  run_experiment(s);
  return analyze_position_encoding(analysis_input(s.plan(), s.store()));
}

}  // namespace cotprobe
