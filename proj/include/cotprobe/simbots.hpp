#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cotprobe/corpus.hpp"
#include "cotprobe/modelio.hpp"

namespace cotprobe {

enum class SimbotKind { copybot, computebot, gatebot };

std::string_view to_string(SimbotKind k);
std::optional<SimbotKind> simbot_kind_from_string(std::string_view s);

/// Per-question fixture knowledge. Policies stay pure functions of the
/// rendered prompt: the question text is part of that prompt and is the
/// lookup key.
struct SimbotParams {
  /// gatebot: numerals of the clean chain of thought plus gold.
  std::map<std::string, std::set<Decimal>> known_values;
  /// computebot fixture mode: gold per question.
  std::map<std::string, Decimal> gold;
  /// Chains of thought written out under free generation.
  std::map<std::string, std::string> scripted_cot;
  /// computebot: maximum number of chained operations.
  int depth_limit = 1;
  /// Heads that carry the copy readout in the mechanistic stubs.
  std::vector<HeadId> copy_heads{{0, 0}};
  /// Naming at least this many copy heads in an intervention disables
  /// copying.
  int copy_disable_threshold = 1;
  std::string free_generation_delimiter = "####";
};

/// Builds fixture maps (known values, gold, scripted chains of thought)
/// from a dataset.
SimbotParams params_from_problems(const std::vector<Problem>& problems);

/// Text preceding the delimiter line of an injected prefix: everything up
/// to the last newline (nothing when the prefix is a bare delimiter).
std::string_view prefix_body(std::string_view prefix);

/// True when the numeral at `span` sits in answer framing: its sentence
/// mentions "answer" or "should be", or it closes an "=" clause.
bool is_framed(std::string_view text, const NumericSpan& span, const std::vector<CharRange>& sentences);

/// The numeral copybot reads out (last framed numeral before the
/// delimiter line), or nullopt.
std::optional<NumericSpan> copybot_choice(std::string_view prefix);

/// Policy outputs in generation form: " 72", or "" when nothing parsable.
std::string copybot(std::string_view prefix);
/// Multiple-choice readout: the last "(X)" option marker before the
/// delimiter line. Policies fall back to it when no numeral qualifies.
std::optional<char> letter_choice(std::string_view prefix);

std::string gatebot(std::string_view prefix, const std::set<Decimal>* known);
/// Operands computebot works from: the numerals of the last sentence
/// holding two or more, or when none does, those of every sentence that
/// does not state an answer.
std::vector<Decimal> retained_operands(std::string_view body);

std::string computebot(std::string_view prefix, const std::optional<Decimal>& gold, int depth_limit = 1);

/// True when some chain of at most `depth` operations (+, -, *, exact /)
/// over distinct operands reaches `target`; depth 1 is the ordered-pair test.
bool reachable(const std::vector<Decimal>& operands, const Decimal& target, int depth = 1);

/// In-process synthetic backend implementing one readout policy.
class SimBackend final : public ModelBackend {
 public:
  SimBackend(SimbotKind kind, SimbotParams params = {});

  [[nodiscard]] SimbotKind kind() const { return kind_; }
  [[nodiscard]] const SimbotParams& params() const { return params_; }

  /// Whitespace tokens with their trailing separators attached; a leading
  /// whitespace run forms its own token.
  static std::vector<std::string> whitespace_tokenize(std::string_view text);

 protected:
  std::string do_generate(const GenerateRequest& req) override;
  std::vector<std::string> do_tokenize(std::string_view text) override;
  AttentionMassResult do_attention_mass(const std::vector<AttentionItem>& items) override;
  std::string do_generate_with_intervention(const GenerateRequest& req, const InterventionSpec& spec) override;
  PatchResult do_patch_and_score(const std::string& ordered_prompt, const std::string& shuffled_prompt,
                                 const std::vector<HeadId>& heads, const std::string& gold_token) override;
  InductionScores do_induction_scores(int K, int N, std::uint64_t seed) override;
  ModelInfo do_model_info() override;

 private:
  std::string answer_for(const std::string& question, std::string_view prefix) const;
  std::string numeric_answer_for(const std::string& question, std::string_view prefix) const;
  std::string policy_output(const GenerateRequest& req) const;
  bool disables_copy(const std::vector<HeadId>& heads) const;
  bool is_copy_head(HeadId h) const;

  SimbotKind kind_;
  SimbotParams params_;
  ModelInfo info_;
};

}  // namespace cotprobe
