#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotprobe/corpus.hpp"
#include "cotprobe/seeding.hpp"

namespace cotprobe {

inline constexpr std::string_view kDefaultDelimiter = "####";
inline constexpr std::string_view kBlankSentence = "The answer is determined by the steps above.";
inline constexpr std::string_view kFillerSentence = "Let me double-check the steps above carefully.";
inline constexpr double kMinTruncationFraction = 0.30;

struct PrefixMeta {
  std::optional<std::string> distractor_value;
  /// True when the distractor is neither gold nor any numeral of the clean
  /// chain of thought.
  std::optional<bool> distractor_novel;
  std::optional<double> truncation_fraction;
  std::optional<std::size_t> answer_position;
  std::string seed_used;
  std::optional<std::string> excluded;
};

/// One intervention condition applied to one trace. `text` always ends with
/// the delimiter followed by one space unless the prefix is excluded, in
/// which case it is empty and must not be sent to a model.
struct PerturbedPrefix {
  std::string item_id;
  std::string condition;
  std::string text;
  std::string delimiter{kDefaultDelimiter};
  PrefixMeta meta;

  [[nodiscard]] bool excluded() const { return meta.excluded.has_value(); }
};

/// body (right-trimmed) + "\n" + delimiter + " ", or just delimiter + " "
/// for an empty body.
std::string assemble_prefix(std::string_view body, std::string_view delimiter);

/// v ± max(1, floor(0.3·|v|)); the low bit of draw[0] picks the sign
/// (0 → minus, 1 → plus). Fractional values keep their fractional part.
Decimal corrupt_value(const Decimal& v, const Md5Digest& draw);

enum class CorruptionCondition { A_corrupt_all, B_preserve_gold, C_clean, D_rep };
enum class TruncationCondition { D_trunc, D_blank, no_cot };
enum class ShuffleKind { ordered, within_step, step_shuffle, word_shuffle, reverse_order, token_shuffle, no_cot };
enum class DistractorKind { C0, C0b_filler, C1_adjacent, C2_random, C3_gold_dup, intermediate_result };
enum class Framing { F1_template, F2_bare, F3_note, F4_inline };

struct SweepPosition {
  enum class Kind { fraction, keep_end, move_front, full_shuffle };
  Kind kind = Kind::fraction;
  double fraction = 1.0;

  static SweepPosition at(double f) { return {Kind::fraction, f}; }
  static SweepPosition keep_end() { return {Kind::keep_end, 1.0}; }
  static SweepPosition move_front() { return {Kind::move_front, 0.0}; }
  static SweepPosition full_shuffle() { return {Kind::full_shuffle, 0.0}; }
};

std::string_view condition_tag(CorruptionCondition c);
std::string_view condition_tag(TruncationCondition c);
std::string_view to_string(ShuffleKind k);
std::string_view to_string(DistractorKind k);
std::string_view to_string(Framing f);
std::optional<ShuffleKind> shuffle_kind_from_string(std::string_view s);
std::optional<DistractorKind> distractor_kind_from_string(std::string_view s);
std::optional<Framing> framing_from_string(std::string_view s);
std::optional<CorruptionCondition> corruption_from_string(std::string_view s);
std::optional<TruncationCondition> truncation_from_string(std::string_view s);

/// "ordered", "no_cot", or "<kind>@s<seed>" for the stochastic kinds.
std::string shuffle_tag(ShuffleKind kind, int seed_index);
/// "pos@0.75@s1", "keep_end@s0", "move_front@s0", "full_shuffle@s2".
std::string position_tag(const SweepPosition& pos, int seed_index);
/// "C1.F1"; "C0" and "C0b" carry no framing; a non-default delimiter is
/// appended as "@<delimiter>".
std::string distractor_tag(DistractorKind kind, Framing framing, std::string_view delimiter = kDefaultDelimiter);
/// Tag whose seed fixes the distractor value, shared by every framing and
/// delimiter so cells differ only in presentation.
std::string distractor_value_tag(DistractorKind kind);

using Tokenizer = std::function<std::vector<std::string>(std::string_view)>;

/// Conditions A, B, C and D_rep. The record's condition is ctx.condition_tag.
PerturbedPrefix gen_corruption(std::string_view item_id, const CoTTrace& trace, const Decimal& gold,
                               CorruptionCondition condition, SeedContext ctx,
                               std::string_view delimiter = kDefaultDelimiter);

/// D_trunc, D_blank and no_cot. Deterministic; no randomness is involved.
PerturbedPrefix gen_truncation(std::string_view item_id, const CoTTrace& trace, const AnswerValue& gold,
                               TruncationCondition condition, std::string_view delimiter = kDefaultDelimiter);

/// The retained body D_trunc would keep (before delimiter assembly), or
/// nullopt when the trace holds no gold occurrence.
std::optional<std::string> truncated_body(const CoTTrace& trace, const AnswerValue& gold);

/// Step/word/token shuffles. `tokenizer` is needed only for token_shuffle.
PerturbedPrefix gen_shuffle(std::string_view item_id, const CoTTrace& trace, ShuffleKind kind, SeedContext ctx,
                            int seed_index, const Tokenizer& tokenizer = {},
                            std::string_view delimiter = kDefaultDelimiter);

PerturbedPrefix gen_position_sweep(std::string_view item_id, const CoTTrace& trace, const SweepPosition& position,
                                   SeedContext ctx, int seed_index, std::string_view delimiter = kDefaultDelimiter);

/// Appends a framed distractor after the clean chain of thought. `ctx`
/// seeds only the distractor value: pass the context derived from
/// distractor_value_tag(kind) to keep the value fixed across framings.
PerturbedPrefix gen_distractor(std::string_view item_id, const CoTTrace& trace, const AnswerValue& gold,
                               DistractorKind kind, Framing framing, std::string_view delimiter, SeedContext ctx);

/// The distractor number alone (nullopt for C0/C0b or when unavailable).
/// Throws std::runtime_error when C2 rejection sampling exhausts its budget.
std::optional<Decimal> draw_distractor_value(const CoTTrace& trace, const Decimal& gold, DistractorKind kind,
                                             SeedContext& ctx);

std::string framing_text(Framing framing, std::string_view value);

/// Swaps the trailing delimiter of a prefix.
PerturbedPrefix set_delimiter(PerturbedPrefix prefix, std::string_view delimiter);

}  // namespace cotprobe
