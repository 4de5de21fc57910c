#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cotprobe/corpus.hpp"
#include "cotprobe/modelio.hpp"
#include "cotprobe/perturb.hpp"
#include "cotprobe/stats.hpp"
#include "cotprobe/store.hpp"
#include "json.hpp"

namespace cotprobe {

// ---- plans -------------------------------------------------------------------

enum class Experiment {
  decomposition,
  causal_ladder,
  shuffle_hierarchy,
  position_sweep,
  distractor_suite,
  framing_suite,
  delimiter_suite,
  free_generation,
  selfgen_shuffle,
  bbh_retention,
  position_encoding_control,
  mech_ablation,
  patching_screen,
};

std::string_view to_string(Experiment e);
std::optional<Experiment> experiment_from_string(std::string_view s);

struct PlanFilters {
  bool baseline_correct = true;
  double tf_threshold = 0.80;
  /// Token budget for question plus chain of thought; 0 picks the
  /// experiment default (1024 for shuffles, 1536 for ablations, else none).
  int max_tokens = 0;
};

/// Knobs of the head-level experiments.
struct MechPlan {
  std::string kind = "zero";
  int top_k = 5;
  std::vector<int> ks{0, 1, 2, 3, 5, 10, 20};
  int control_sets = 20;
  int control_size = 5;
  bool layer_stratified = true;
  int permutation_n = 1000;
  int top_n = 20;
  int induction_k = 50;
  int induction_n = 200;
  std::uint64_t induction_seed = 0;
  std::size_t screen_items = 34;
  std::size_t validation_items = 150;
  int jaccard_splits = 50;
  double ldelta_threshold = 0.3;
};

struct ExperimentPlan {
  Experiment experiment = Experiment::decomposition;
  std::string dataset;
  DatasetFormat dataset_format = DatasetFormat::generic_jsonl;
  std::string backend = "sim:copybot";
  /// Backend-specific settings (simbot depth limit, copy heads, ...).
  nlohmann::json backend_options = nlohmann::json::object();
  std::size_t item_limit = 500;
  std::vector<int> seeds{0, 1, 2, 3, 4};
  PlanFilters filters;
  std::string delimiter{kDefaultDelimiter};
  /// Restricts the experiment to these condition names; empty means all.
  std::vector<std::string> conditions;
  std::vector<std::string> kinds;
  std::vector<std::string> framings;
  std::vector<std::string> delimiters;
  /// Cells tested against the 0.70 decision threshold.
  std::vector<std::string> confirmatory;
  std::optional<std::string> retention_mode;
  std::vector<FewShotExample> few_shot;
  int bootstrap_resamples = 10000;
  std::uint64_t analysis_seed = 0;
  MechPlan mech;
  /// In-flight plain generate requests. Not part of the config identity.
  int parallelism = 4;

  /// Canonical config (everything that can change results).
  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] int effective_max_tokens() const;
  [[nodiscard]] stats::RetentionMode effective_retention_mode() const;
};

struct PlanIssue {
  std::string pointer;
  std::string message;
};

/// Plan validation failure; every problem is reported with its JSON pointer.
class PlanError : public std::runtime_error {
 public:
  explicit PlanError(std::vector<PlanIssue> issues);
  [[nodiscard]] const std::vector<PlanIssue>& issues() const { return issues_; }

 private:
  std::vector<PlanIssue> issues_;
};

ExperimentPlan parse_plan(const nlohmann::json& j);
/// Reads a plan file; a relative dataset path resolves against the plan's
/// directory.
ExperimentPlan load_plan(const std::filesystem::path& path);

/// "sim:<policy>" for an in-process simbot fitted to `problems`, or an
/// http:// URL for a remote backend.
std::unique_ptr<ModelBackend> make_backend(const std::string& spec, const std::vector<Problem>& problems,
                                           const nlohmann::json& options = nlohmann::json::object());

// ---- sessions ------------------------------------------------------------------

struct PreparedItem {
  std::size_t index = 0;
  Problem problem;
  CoTTrace trace;
};

std::vector<PreparedItem> prepare_items(const std::vector<Problem>& problems, std::size_t limit);

/// One generation to run (or fetch from the store).
struct Job {
  const PreparedItem* item = nullptr;
  std::string condition;
  std::string intervention = "none";
  /// Builds the prefix; skipped entirely when the record is cached.
  std::function<PerturbedPrefix()> make_prefix;
  std::optional<InterventionSpec> spec;
  std::optional<PositionIdMap> position_map;
  bool free_generation = false;
};

/// Run identity derived from the plan and the dataset bytes.
nlohmann::json run_config(const ExperimentPlan& plan, const std::string& dataset_digest);
std::string run_id_for(const nlohmann::json& config);

/// Binds a plan, its items, a backend and a store. Collection methods call
/// the backend only for records and measurements the store lacks.
class Session {
 public:
  Session(ExperimentPlan plan, std::vector<Problem> problems, ModelBackend& backend, RunStore& store);

  [[nodiscard]] const ExperimentPlan& plan() const { return plan_; }
  [[nodiscard]] const std::vector<PreparedItem>& items() const { return items_; }
  [[nodiscard]] ModelBackend& backend() { return backend_; }
  [[nodiscard]] RunStore& store() { return store_; }

  /// Records for `jobs` in job order. Plain generations run with bounded
  /// parallelism; intervened ones run one at a time.
  std::vector<GenerationRecord> evaluate(const std::vector<Job>& jobs);

  /// Token counts of question plus reference chain of thought per item.
  const std::map<std::string, std::size_t>& token_lengths();
  ModelInfo model_info();
  /// A measurement, computed by `fn` and stored on first use.
  nlohmann::json measured(const std::string& name, const std::function<nlohmann::json()>& fn);

  /// Seeds context for (item, condition tag).
  static SeedContext seed_for(const PreparedItem& item, std::string_view tag);

 private:
  GenerationRecord make_record(const Job& job, const PerturbedPrefix& prefix) const;
  GenerationRecord run_job(const Job& job, const PerturbedPrefix& prefix);

  ExperimentPlan plan_;
  std::vector<PreparedItem> items_;
  ModelBackend& backend_;
  RunStore& store_;
  std::optional<std::map<std::string, std::size_t>> token_lengths_;
};

// ---- analysis inputs -------------------------------------------------------------

/// Records indexed by (item, condition, intervention).
class RecordView {
 public:
  RecordView() = default;
  explicit RecordView(const std::vector<GenerationRecord>& records);
  [[nodiscard]] const GenerationRecord* get(const std::string& item, const std::string& condition,
                                            const std::string& intervention = "none") const;
  /// Usable (present, not excluded) record.
  [[nodiscard]] const GenerationRecord* usable(const std::string& item, const std::string& condition,
                                               const std::string& intervention = "none") const;
  [[nodiscard]] std::vector<const GenerationRecord*> with_condition(const std::string& condition,
                                                                    const std::string& intervention = "none") const;

 private:
  std::map<std::string, const GenerationRecord*> index_;
};

/// Everything analysis may read: no backend, no dataset.
struct AnalysisInput {
  ExperimentPlan plan;
  /// Item ids in dataset order.
  std::vector<std::string> item_ids;
  RecordView records;
  std::map<std::string, nlohmann::json> measurements;
};

AnalysisInput analysis_input(const ExperimentPlan& plan, const RunStore& store);
/// Same, with the plan recovered from the stored config.
AnalysisInput analysis_input(const RunStore& store);

/// Artifact name to artifact, all derived purely from the input.
using Artifacts = std::map<std::string, nlohmann::json>;

// ---- results -----------------------------------------------------------------------

/// Digest of a sorted item-id set, carried by every paired contrast.
std::string index_hash(std::vector<std::string> ids);

struct DecompositionResult {
  stats::StatResult p_a, p_b, p_c;
  stats::StatResult delta_copy, delta_offcopy, p_residual;
  std::optional<stats::StatResult> ceiling_norm;
  stats::StatResult mcnemar_b_vs_a;
  std::size_t n_baseline = 0;
  std::map<std::string, std::size_t> n_per_condition;
  std::map<std::string, std::size_t> excluded;
  std::vector<std::string> common_items;
  [[nodiscard]] nlohmann::json to_json() const;
};

struct LadderContrast {
  std::string name;
  stats::StatResult difference;
  stats::StatResult mcnemar;
  double holm_p = 1.0;
};

struct LadderResult {
  std::map<std::string, stats::StatResult> accuracy;
  stats::StatResult copy_override_gap;
  stats::StatResult retained_context;
  stats::StatResult p_distractor_drep;
  std::vector<LadderContrast> contrasts;
  std::map<std::string, std::size_t> excluded;
  std::vector<std::string> common_items;
  [[nodiscard]] nlohmann::json to_json() const;
};

struct DepthPartition {
  std::map<std::string, bool> one_op;
  std::size_t n_one_op = 0;
  std::size_t n_multi_step = 0;
  std::optional<stats::StatResult> one_op_accuracy;
  std::optional<stats::StatResult> multi_step_accuracy;
  std::optional<stats::StatResult> one_op_floor;
  std::optional<stats::StatResult> multi_step_floor;
  [[nodiscard]] nlohmann::json to_json() const;
};

struct RetentionRow {
  std::string condition;
  double accuracy = 0.0;
  std::optional<stats::StatResult> retention;
  std::optional<std::string> undefined_reason;
  std::size_t n = 0;
};

struct ShuffleResult {
  std::string mode;
  std::string source;
  std::vector<RetentionRow> rows;
  std::map<std::string, std::size_t> excluded;
  std::vector<std::string> items;
  /// Per-item accuracy (mean over seeds) per condition.
  std::map<std::string, std::map<std::string, double>> per_item;
  [[nodiscard]] nlohmann::json to_json() const;
};

struct PositionResult {
  std::vector<std::pair<double, stats::StatResult>> sweep;
  std::optional<stats::StatResult> spearman;
  std::map<std::string, stats::StatResult> discrete;
  std::optional<stats::StatResult> mcnemar_ordered_vs_keep_end;
  std::size_t sweep_items = 0;
  std::size_t discrete_items = 0;
  std::map<std::string, std::size_t> excluded;
  [[nodiscard]] nlohmann::json to_json() const;
};

struct DistractorCell {
  std::string cell;
  std::string delimiter;
  std::size_t n = 0;
  std::optional<stats::StatResult> p_distractor;
  std::optional<stats::StatResult> p_gold;
  std::size_t n_novel = 0;
  std::optional<stats::StatResult> p_distractor_novel;
  std::optional<stats::StatResult> p_gold_novel;
  std::optional<stats::StatResult> threshold_test;
  std::optional<double> holm_p;
  bool confirmatory = false;
  std::size_t excluded = 0;
};

struct DistractorResult {
  std::vector<DistractorCell> cells;
  std::map<std::string, std::size_t> baseline_n;
  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] const DistractorCell* find(const std::string& cell,
                                           const std::string& delimiter = std::string(kDefaultDelimiter)) const;
};

struct FidelityReport {
  std::string experiment;
  std::string condition;
  std::optional<double> metric;
  std::size_t n = 0;
  double threshold = 0.80;
  bool pass = false;
  [[nodiscard]] nlohmann::json to_json() const;
};

struct FreeGenerationMetrics {
  std::size_t n = 0;
  std::size_t unparseable = 0;
  std::optional<double> answer_is_last;
  std::optional<double> gold_is_last;
  std::optional<double> acc_given_gold_last;
  std::optional<double> acc_given_gold_not_last;
  std::optional<double> answer_is_last_given_incorrect;
  std::optional<double> accuracy;
  [[nodiscard]] nlohmann::json to_json() const;
};

struct PositionEncodingResult {
  std::optional<std::string> skipped;
  std::map<std::string, stats::StatResult> cells;
  std::map<std::string, double> shuffle_effect;
  std::optional<stats::StatResult> stretch;
  [[nodiscard]] nlohmann::json to_json() const;
};

// ---- pure analysis -------------------------------------------------------------------

DecompositionResult analyze_decomposition(const AnalysisInput& in);
LadderResult analyze_causal_ladder(const AnalysisInput& in);
DepthPartition depth_partition(const std::vector<const GenerationRecord*>& trunc_records,
                               const RecordView* floor_records = nullptr);
ShuffleResult analyze_shuffle(const AnalysisInput& in);
PositionResult analyze_position_sweep(const AnalysisInput& in);
DistractorResult analyze_distractor(const AnalysisInput& in);
/// Designated fidelity condition per experiment: C for decomposition, the
/// ladder and ablations; ordered for shuffles; position 1.0 (all seeds) for
/// the sweep; C0 for distractor suites. Throws when it has no records.
FidelityReport compute_tf_fidelity(const RecordView& records, const std::vector<std::string>& items,
                                   Experiment experiment, double threshold = 0.80,
                                   const std::vector<int>& seeds = {0});
FreeGenerationMetrics analyze_free_generation(const std::vector<const GenerationRecord*>& records);
PositionEncodingResult analyze_position_encoding(const AnalysisInput& in);

/// All artifacts of the plan's experiment.
Artifacts analyze(const AnalysisInput& in);

// ---- orchestration -----------------------------------------------------------------------

/// Issues every model call the plan's experiment needs (cached calls are
/// skipped).
void collect(Session& session);

/// collect + analyze + persist artifacts; returns the artifacts.
Artifacts run_experiment(Session& session);

DecompositionResult run_decomposition(Session& session);
LadderResult run_causal_ladder(Session& session);
ShuffleResult run_shuffle_hierarchy(Session& session);
PositionResult run_position_sweep(Session& session);
DistractorResult run_distractor_suite(Session& session);
FreeGenerationMetrics run_free_generation(Session& session);
PositionEncodingResult run_position_encoding_control(Session& session);

// ---- condition naming --------------------------------------------------------------------

/// Condition tags of each experiment (before seeds expand).
std::vector<std::string> ladder_conditions();
std::vector<std::string> shuffle_conditions();
/// Distractor cells of a suite: C0 first, then kinds x framings (C0b
/// carries no framing).
std::vector<std::pair<DistractorKind, Framing>> distractor_cells(const ExperimentPlan& plan);
std::vector<std::string> distractor_delimiters(const ExperimentPlan& plan);
/// Cell label without the delimiter suffix: "C0", "C0b", "C1.F1".
std::string cell_name(DistractorKind kind, Framing framing);
inline constexpr std::string_view kSelfPrefix = "self:";
inline constexpr std::string_view kFreeCondition = "free";

}  // namespace cotprobe
