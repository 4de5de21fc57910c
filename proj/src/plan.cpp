#include <fstream>
#include <set>

#include "cotprobe/harness.hpp"
#include "cotprobe/seeding.hpp"
#include "cotprobe/simbots.hpp"

namespace cotprobe {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<Experiment, std::string_view>, 13> kExperimentNames{{
    {Experiment::decomposition, "decomposition"},
    {Experiment::causal_ladder, "causal_ladder"},
    {Experiment::shuffle_hierarchy, "shuffle_hierarchy"},
    {Experiment::position_sweep, "position_sweep"},
    {Experiment::distractor_suite, "distractor_suite"},
    {Experiment::framing_suite, "framing_suite"},
    {Experiment::delimiter_suite, "delimiter_suite"},
    {Experiment::free_generation, "free_generation"},
    {Experiment::selfgen_shuffle, "selfgen_shuffle"},
    {Experiment::bbh_retention, "bbh_retention"},
    {Experiment::position_encoding_control, "position_encoding_control"},
    {Experiment::mech_ablation, "mech_ablation"},
    {Experiment::patching_screen, "patching_screen"},
}};

bool stochastic(Experiment e) {
  switch (e) {
    case Experiment::shuffle_hierarchy:
    case Experiment::position_sweep:
    case Experiment::selfgen_shuffle:
    case Experiment::bbh_retention:
    case Experiment::position_encoding_control:
    case Experiment::patching_screen: return true;
    default: return false;
  }
}

// Field reader that records every problem instead of stopping at the first.
class Reader {
 public:
  Reader(const json& obj, std::string base, std::vector<PlanIssue>& issues)
      : obj_(obj), base_(std::move(base)), issues_(issues) {}

  void fail(const std::string& key, const std::string& message) { issues_.push_back({ptr(key), message}); }

  [[nodiscard]] std::string ptr(const std::string& key) const { return base_ + "/" + key; }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void str(const std::string& key, std::string& out, bool required = false, bool nonempty = false) {
    const json* v = get(key);
    if (v == nullptr) {
      if (required) fail(key, "required field is missing");
      return;
    }
    if (!v->is_string()) return fail(key, "expected a string");
    if (nonempty && v->get_ref<const std::string&>().empty()) return fail(key, "must not be empty");
    out = v->get<std::string>();
  }

  void boolean(const std::string& key, bool& out) {
    const json* v = get(key);
    if (v == nullptr) return;
    if (!v->is_boolean()) return fail(key, "expected a boolean");
    out = v->get<bool>();
  }

  template <class Int>
  void integer(const std::string& key, Int& out, std::int64_t lo, std::int64_t hi = INT64_MAX) {
    const json* v = get(key);
    if (v == nullptr) return;
    if (!v->is_number_integer()) return fail(key, "expected an integer");
    if (v->is_number_unsigned() && v->get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX))
      return fail(key, "integer out of range");
    const auto x = v->get<std::int64_t>();
    if (x < lo || x > hi)
      return fail(key, "must lie in [" + std::to_string(lo) + ", " + (hi == INT64_MAX ? "inf" : std::to_string(hi)) + "]");
    out = static_cast<Int>(x);
  }

  void real(const std::string& key, double& out, double lo, double hi) {
    const json* v = get(key);
    if (v == nullptr) return;
    if (!v->is_number()) return fail(key, "expected a number");
    const double x = v->get<double>();
    if (!(x >= lo && x <= hi)) return fail(key, "out of range");
    out = x;
  }

  void strings(const std::string& key, std::vector<std::string>& out,
               const std::function<bool(const std::string&)>& valid = {}) {
    const json* v = get(key);
    if (v == nullptr) return;
    if (!v->is_array()) return fail(key, "expected an array of strings");
    std::vector<std::string> tmp;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto& e = (*v)[i];
      const std::string p = key + "/" + std::to_string(i);
      if (!e.is_string()) {
        fail(p, "expected a string");
        continue;
      }
      if (valid && !valid(e.get<std::string>())) {
        fail(p, "unknown value '" + e.get<std::string>() + "'");
        continue;
      }
      tmp.push_back(e.get<std::string>());
    }
    out = std::move(tmp);
  }

  void finish() {
    for (const auto& [key, _] : obj_.items())
      if (seen_.count(key) == 0) fail(key, "unknown field");
  }

 private:
  const json& obj_;
  std::string base_;
  std::vector<PlanIssue>& issues_;
  std::set<std::string> seen_;
};

bool is_cell_name(const std::string& s) {
  // "C1.F1", "C0", "C0b", "intermediate.F4"
  const auto dot = s.find('.');
  const auto kind = distractor_kind_from_string(s.substr(0, dot));
  if (!kind) return false;
  if (dot == std::string::npos) return true;
  return framing_from_string(s.substr(dot + 1)).has_value();
}

}  // namespace

std::string_view to_string(Experiment e) {
  for (const auto& [k, name] : kExperimentNames)
    if (k == e) return name;
  return "?";
}

std::optional<Experiment> experiment_from_string(std::string_view s) {
  for (const auto& [k, name] : kExperimentNames)
    if (name == s) return k;
  return std::nullopt;
}

PlanError::PlanError(std::vector<PlanIssue> issues)
    : std::runtime_error([&] {
        std::string msg = "invalid plan:";
        for (const auto& i : issues) msg += "\n  " + (i.pointer.empty() ? std::string("/") : i.pointer) + ": " + i.message;
        return msg;
      }()),
      issues_(std::move(issues)) {}

int ExperimentPlan::effective_max_tokens() const {
  if (filters.max_tokens > 0) return filters.max_tokens;
  switch (experiment) {
    case Experiment::shuffle_hierarchy:
    case Experiment::selfgen_shuffle:
    case Experiment::bbh_retention: return 1024;
    case Experiment::mech_ablation:
    case Experiment::patching_screen: return 1536;
    default: return 0;
  }
}

stats::RetentionMode ExperimentPlan::effective_retention_mode() const {
  if (retention_mode) return *stats::retention_mode_from_string(*retention_mode);
  return experiment == Experiment::bbh_retention ? stats::RetentionMode::chance_corrected
                                                 : stats::RetentionMode::nocot_anchored;
}

json ExperimentPlan::to_json() const {
  json j;
  j["experiment"] = std::string(to_string(experiment));
  j["dataset"] = dataset;
  j["dataset_format"] = std::string(cotprobe::to_string(dataset_format));
  j["backend"] = backend;
  j["backend_options"] = backend_options;
  j["item_limit"] = item_limit;
  j["seeds"] = seeds;
  j["filters"] = {{"baseline_correct", filters.baseline_correct},
                  {"tf_threshold", filters.tf_threshold},
                  {"max_tokens", filters.max_tokens}};
  j["delimiter"] = delimiter;
  j["conditions"] = conditions;
  j["kinds"] = kinds;
  j["framings"] = framings;
  j["delimiters"] = delimiters;
  j["confirmatory"] = confirmatory;
  if (retention_mode) j["retention_mode"] = *retention_mode;
  json shots = json::array();
  for (const auto& s : few_shot) shots.push_back({{"question", s.question}, {"completion", s.completion}});
  j["few_shot"] = shots;
  j["bootstrap_resamples"] = bootstrap_resamples;
  j["analysis_seed"] = analysis_seed;
  j["mech"] = {{"kind", mech.kind},
               {"top_k", mech.top_k},
               {"ks", mech.ks},
               {"control_sets", mech.control_sets},
               {"control_size", mech.control_size},
               {"layer_stratified", mech.layer_stratified},
               {"permutation_n", mech.permutation_n},
               {"top_n", mech.top_n},
               {"induction_k", mech.induction_k},
               {"induction_n", mech.induction_n},
               {"induction_seed", mech.induction_seed},
               {"screen_items", mech.screen_items},
               {"validation_items", mech.validation_items},
               {"jaccard_splits", mech.jaccard_splits},
               {"ldelta_threshold", mech.ldelta_threshold}};
  return j;
}

ExperimentPlan parse_plan(const json& j) {
  std::vector<PlanIssue> issues;
  if (!j.is_object()) throw PlanError(std::vector<PlanIssue>{{"", "plan must be a JSON object"}});
  ExperimentPlan plan;
  Reader r(j, "", issues);

  std::string experiment;
  r.str("experiment", experiment, true);
  if (!experiment.empty()) {
    if (auto e = experiment_from_string(experiment))
      plan.experiment = *e;
    else
      r.fail("experiment", "unknown experiment '" + experiment + "'");
  }
  if (plan.experiment == Experiment::bbh_retention) plan.dataset_format = DatasetFormat::bbh_jsonl;
  r.str("dataset", plan.dataset, true, true);
  std::string format;
  r.str("dataset_format", format);
  if (!format.empty()) {
    if (auto f = dataset_format_from_string(format))
      plan.dataset_format = *f;
    else
      r.fail("dataset_format", "unknown dataset format '" + format + "'");
  }
  r.str("backend", plan.backend, false, true);
  if (const json* opts = r.get("backend_options")) {
    if (opts->is_object())
      plan.backend_options = *opts;
    else
      r.fail("backend_options", "expected an object");
  }
  r.integer("item_limit", plan.item_limit, 1);

  if (const json* seeds = r.get("seeds")) {
    if (!seeds->is_array()) {
      r.fail("seeds", "expected an array of integers");
    } else {
      std::vector<int> out;
      std::set<int> seen;
      for (std::size_t i = 0; i < seeds->size(); ++i) {
        const auto& s = (*seeds)[i];
        if (!s.is_number_integer() || s.get<std::int64_t>() < 0 || s.get<std::int64_t>() > 1'000'000) {
          r.fail("seeds/" + std::to_string(i), "expected a seed index in [0, 1000000]");
          continue;
        }
        if (!seen.insert(s.get<int>()).second) r.fail("seeds/" + std::to_string(i), "duplicate seed");
        out.push_back(s.get<int>());
      }
      plan.seeds = out;
    }
  }
  if (plan.seeds.empty() && stochastic(plan.experiment))
    r.fail("seeds", "stochastic experiments need at least one seed");

  if (const json* f = r.get("filters")) {
    if (!f->is_object()) {
      r.fail("filters", "expected an object");
    } else {
      Reader fr(*f, "/filters", issues);
      fr.boolean("baseline_correct", plan.filters.baseline_correct);
      fr.real("tf_threshold", plan.filters.tf_threshold, 0.0, 1.0);
      fr.integer("max_tokens", plan.filters.max_tokens, 0, 1 << 24);
      fr.finish();
    }
  }
  r.str("delimiter", plan.delimiter, false, true);
  if (std::string(trim_delimiter(plan.delimiter)).empty()) r.fail("delimiter", "delimiter is blank");
  plan.delimiter = std::string(trim_delimiter(plan.delimiter));

  r.strings("conditions", plan.conditions);
  r.strings("kinds", plan.kinds, [](const std::string& s) { return distractor_kind_from_string(s).has_value(); });
  r.strings("framings", plan.framings, [](const std::string& s) { return framing_from_string(s).has_value(); });
  r.strings("delimiters", plan.delimiters, [](const std::string& s) { return !trim_delimiter(s).empty(); });
  r.strings("confirmatory", plan.confirmatory, is_cell_name);

  std::string mode;
  r.str("retention_mode", mode);
  if (!mode.empty()) {
    if (stats::retention_mode_from_string(mode))
      plan.retention_mode = mode;
    else
      r.fail("retention_mode", "unknown retention mode '" + mode + "'");
  }

  if (const json* shots = r.get("few_shot")) {
    if (!shots->is_array()) {
      r.fail("few_shot", "expected an array");
    } else {
      for (std::size_t i = 0; i < shots->size(); ++i) {
        const auto& s = (*shots)[i];
        const std::string p = "few_shot/" + std::to_string(i);
        if (!s.is_object() || !s.contains("question") || !s.contains("completion") || !s["question"].is_string() ||
            !s["completion"].is_string()) {
          r.fail(p, "expected {question, completion} strings");
          continue;
        }
        plan.few_shot.push_back({s["question"].get<std::string>(), s["completion"].get<std::string>()});
      }
    }
  }
  r.integer("bootstrap_resamples", plan.bootstrap_resamples, 1, 10'000'000);
  r.integer("analysis_seed", plan.analysis_seed, 0);

  if (const json* m = r.get("mech")) {
    if (!m->is_object()) {
      r.fail("mech", "expected an object");
    } else {
      Reader mr(*m, "/mech", issues);
      mr.str("kind", plan.mech.kind);
      if (plan.mech.kind != "zero" && plan.mech.kind != "mean") mr.fail("kind", "expected \"zero\" or \"mean\"");
      mr.integer("top_k", plan.mech.top_k, 1);
      if (const json* ks = mr.get("ks")) {
        if (!ks->is_array() || ks->empty()) {
          mr.fail("ks", "expected a nonempty array of integers");
        } else {
          std::vector<int> out;
          for (std::size_t i = 0; i < ks->size(); ++i) {
            const auto& k = (*ks)[i];
            if (!k.is_number_integer() || k.get<std::int64_t>() < 0) {
              mr.fail("ks/" + std::to_string(i), "expected a nonnegative integer");
              continue;
            }
            if (!out.empty() && k.get<int>() <= out.back()) mr.fail("ks/" + std::to_string(i), "must increase strictly");
            out.push_back(k.get<int>());
          }
          if (!out.empty() && out.front() != 0) mr.fail("ks/0", "the sweep starts at K = 0");
          plan.mech.ks = out;
        }
      }
      mr.integer("control_sets", plan.mech.control_sets, 1);
      mr.integer("control_size", plan.mech.control_size, 1);
      mr.boolean("layer_stratified", plan.mech.layer_stratified);
      mr.integer("permutation_n", plan.mech.permutation_n, 1);
      mr.integer("top_n", plan.mech.top_n, 1);
      mr.integer("induction_k", plan.mech.induction_k, 1);
      mr.integer("induction_n", plan.mech.induction_n, 1);
      mr.integer("induction_seed", plan.mech.induction_seed, 0);
      mr.integer("screen_items", plan.mech.screen_items, 2);
      mr.integer("validation_items", plan.mech.validation_items, 1);
      mr.integer("jaccard_splits", plan.mech.jaccard_splits, 1);
      mr.real("ldelta_threshold", plan.mech.ldelta_threshold, 0.0, 1e9);
      mr.finish();
    }
  }
  r.integer("parallelism", plan.parallelism, 1, 1024);
  r.finish();

  if (!issues.empty()) throw PlanError(std::move(issues));
  return plan;
}

ExperimentPlan load_plan(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw PlanError({{"", std::string("plan is not valid JSON: ") + e.what()}});
  }
  auto plan = parse_plan(j);
  std::filesystem::path ds(plan.dataset);
  if (ds.is_relative()) plan.dataset = (path.parent_path() / ds).lexically_normal().string();
  return plan;
}

std::unique_ptr<ModelBackend> make_backend(const std::string& spec, const std::vector<Problem>& problems,
                                           const json& options) {
  if (spec.rfind("sim:", 0) == 0) {
    const auto kind = simbot_kind_from_string(spec.substr(4));
    if (!kind) throw std::invalid_argument("unknown simbot policy '" + spec.substr(4) + "'");
    auto params = params_from_problems(problems);
    if (options.contains("depth_limit")) params.depth_limit = options["depth_limit"].get<int>();
    if (options.contains("copy_heads")) params.copy_heads = wire::heads_from_json(options["copy_heads"]);
    if (options.contains("copy_disable_threshold"))
      params.copy_disable_threshold = options["copy_disable_threshold"].get<int>();
    return std::make_unique<SimBackend>(*kind, std::move(params));
  }
  if (spec.rfind("http://", 0) == 0) return std::make_unique<HttpBackend>(spec);
  throw std::invalid_argument("backend must be sim:<policy> or an http:// URL, got '" + spec + "'");
}

json run_config(const ExperimentPlan& plan, const std::string& dataset_digest) {
  json plan_json = plan.to_json();
  // The dataset is identified by content; its path is incidental.
  plan_json.erase("dataset");
  return {{"plan", plan_json}, {"dataset_sha256", dataset_digest}, {"format_version", 1}};
}

std::string run_id_for(const json& config) { return RunStore::hash_config(config).substr(0, 12); }

}  // namespace cotprobe
