#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cotprobe/harness.hpp"
#include "cotprobe/modelio.hpp"
#include "cotprobe/stats.hpp"

namespace cotprobe {

/// Heads ordered by score, highest first; ties go to the lower (layer, head).
struct HeadRanking {
  std::vector<std::pair<HeadId, double>> heads;
  std::string score_kind;
  /// Hash of the item set the scores were computed on.
  std::string split_id;

  [[nodiscard]] std::vector<HeadId> top(std::size_t k) const;
  [[nodiscard]] nlohmann::json to_json() const;
};

HeadRanking rank_heads(const HeadScoreMatrix& scores, std::string split_id = {});

nlohmann::json matrix_to_json(const HeadScoreMatrix& m);
HeadScoreMatrix matrix_from_json(const nlohmann::json& j);

/// Why an ablated answer is wrong.
enum class FailureKind { verbatim_copy, multiple_of_gold, other };
std::string_view to_string(FailureKind k);

/// 2x or 3x gold first, then any numeral of the injected prefix, else other.
FailureKind classify_failure(const GenerationRecord& rec);

struct AblationSweepResult {
  std::string kind;
  double baseline = 0.0;
  std::vector<std::pair<int, double>> accuracy;
  /// Smallest K with accuracy <= baseline / 2.
  std::optional<int> k50;
  [[nodiscard]] nlohmann::json to_json() const;
};

std::optional<int> find_k50(const std::vector<std::pair<int, double>>& accuracy, double baseline);

/// Seeded head sets that never contain an `excluded` head. Layer-stratified
/// sets take one head per layer, cycling through a shuffled layer order
/// when `size` exceeds the layer count.
std::vector<std::vector<HeadId>> random_control_sets(const ModelInfo& arch, const std::vector<HeadId>& excluded,
                                                     bool layer_stratified, int size, int count, std::uint64_t seed);

/// Right-tailed p of `top_drop` against `n` control drops resampled with
/// replacement from the measured ones.
double control_permutation_p(double top_drop, const std::vector<double>& control_drops, int n, std::uint64_t seed);

struct OverlapResult {
  int top_n = 0;
  std::int64_t population = 0;
  int k = 0;
  double p = 1.0;
  stats::StatResult spearman;
  [[nodiscard]] nlohmann::json to_json() const;
};

/// Top-n overlap with a hypergeometric tail over the full head population,
/// plus the normal-approximation Spearman over all scores. Throws
/// std::invalid_argument when the matrices cover different populations.
OverlapResult overlap_analysis(const HeadScoreMatrix& a, const HeadScoreMatrix& b, int top_n);

double jaccard(const std::vector<HeadId>& a, const std::vector<HeadId>& b);

/// Per-head patching deltas on the screen items.
struct PatchScreen {
  int layers = 0;
  int heads = 0;
  std::vector<std::string> items;
  /// deltas[item][head index]
  std::vector<std::vector<double>> deltas;
  /// Delta when every head is patched, per item.
  std::vector<double> all_heads;
};

/// Heads with |mean delta| above the threshold, ranked by recovery ratio
/// (mean delta over the mean all-heads delta). Uses only `rows`.
HeadRanking screen_ranking(const PatchScreen& screen, const std::vector<std::size_t>& rows, double threshold);

struct StabilityResult {
  double jaccard_mean = 0.0;
  double jaccard_min = 0.0;
  int splits = 0;
  std::optional<double> gini;
  std::optional<double> gini_p;
  std::optional<std::string> gini_error;
  [[nodiscard]] nlohmann::json to_json() const;
};

StabilityResult screen_stability(const PatchScreen& screen, int top_n, double threshold, int splits, int permutations,
                                 std::uint64_t seed);

/// Head-level data collection (rankings, ablations, controls, induction).
void collect_mech_ablation(Session& session);
/// Per-head patching screen plus group-patch validation.
void collect_patching_screen(Session& session);

/// Artifacts of mech_ablation / patching_screen runs, from stored
/// records and measurements only.
Artifacts mech_artifacts(const AnalysisInput& in);

/// Intervention label of a head-set ablation ("zero@top5", "mean@ctrl3").
std::string ablation_label(const std::string& kind, const std::string& set);

}  // namespace cotprobe
