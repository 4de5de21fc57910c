#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cotprobe/decimal.hpp"

namespace cotprobe {

enum class AnswerKind { numeric, letter };

/// A gold or extracted answer: an exact decimal, or a single letter A-Z for
/// multiple-choice items.
using AnswerValue = std::variant<Decimal, char>;

std::string answer_to_string(const AnswerValue& v);
std::optional<AnswerValue> parse_answer(std::string_view text, AnswerKind kind);
std::string_view to_string(AnswerKind kind);
std::optional<AnswerKind> answer_kind_from_string(std::string_view s);

struct Problem {
  std::string id;
  std::string question;
  AnswerValue gold;
  std::string reference_cot;
  AnswerKind answer_kind = AnswerKind::numeric;

  [[nodiscard]] const Decimal* numeric_gold() const { return std::get_if<Decimal>(&gold); }
};

struct CharRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  [[nodiscard]] std::size_t size() const { return end - begin; }
  friend bool operator==(const CharRange&, const CharRange&) = default;
};

struct NumericSpan {
  Decimal value;
  CharRange range;
  bool digit_bounded = true;
};

/// A chain of thought split into steps. The text is reproduced exactly by
/// `leading + steps[0] + separators[0] + ... + steps[n-1] + separators[n-1]`.
struct CoTTrace {
  std::string text;
  std::string leading;
  std::vector<std::string> steps;
  std::vector<std::string> separators;
  std::vector<CharRange> boundaries;
  std::vector<NumericSpan> numeric_spans;
  std::optional<std::size_t> answer_step_index;
  bool sentence_fallback = false;

  [[nodiscard]] std::string reconstruct() const;
  /// Index of the step containing the character offset, if any.
  [[nodiscard]] std::optional<std::size_t> step_of(std::size_t offset) const;
};

enum class DatasetFormat { gsm8k_jsonl, generic_jsonl, bbh_jsonl };

std::optional<DatasetFormat> dataset_format_from_string(std::string_view s);
std::string_view to_string(DatasetFormat f);

struct DatasetIssue {
  std::size_t line = 0;
  std::string message;
};

struct LoadedDataset {
  std::vector<Problem> problems;
  /// Malformed lines (bad JSON, missing fields, duplicate ids).
  std::vector<DatasetIssue> errors;
  /// Well-formed records dropped because the gold answer did not parse.
  std::vector<DatasetIssue> skipped;
};

/// Reads a JSON-lines dataset. Problems come back in file order; bad lines
/// are reported with their 1-based line number and never abort the load.
/// Throws std::runtime_error only when the file cannot be opened.
LoadedDataset load_dataset(const std::filesystem::path& path, DatasetFormat format);
LoadedDataset parse_dataset(std::istream& in, DatasetFormat format);

/// Removes GSM8K calculator annotations such as "<<48/2=24>>".
std::string strip_calculator_annotations(std::string_view text);

/// Splits on blank-line paragraph breaks, falling back to sentence
/// boundaries when fewer than two paragraphs are found.
CoTTrace parse_steps(std::string_view cot);

/// parse_steps plus the answer step (last step holding a gold occurrence).
CoTTrace parse_trace(std::string_view cot, const AnswerValue& gold);

/// Maximal digit-bounded numerals, left to right.
std::vector<NumericSpan> find_numeric_spans(std::string_view text);

std::vector<std::size_t> find_gold_occurrences(const CoTTrace& trace, const Decimal& gold);

/// True when `value` occurs as a numeral anywhere in `text`.
bool contains_value(std::string_view text, const Decimal& value);

/// Sentence ranges under the boundary rule "whitespace run preceded by one
/// of . ? ! or a newline". Whitespace between sentences is not included.
std::vector<CharRange> split_sentences(std::string_view text);

/// Maximal non-whitespace runs.
std::vector<CharRange> whitespace_words(std::string_view text);

/// Strips the delimiter from a generation and reads the answer after it.
std::optional<AnswerValue> extract_final_answer(std::string_view output, std::string_view delimiter,
                                                AnswerKind kind);

/// Value of the final numeral strictly before the last delimiter occurrence
/// (the whole text when the delimiter is absent).
std::optional<Decimal> last_cot_number(std::string_view text, std::string_view delimiter);

/// The last sentence that carries at least two numerals; the sentence the
/// one-operation reachability test and the recompute policy read operands
/// from. Sentences with a single numeral (appended answer claims, notes,
/// bare numbers) are passed over.
std::optional<CharRange> last_operand_sentence(std::string_view text);

/// Delimiter without trailing spaces, the form used for searching.
std::string_view trim_delimiter(std::string_view delimiter);

/// Model output for one (item, condition, intervention) triple.
struct GenerationRecord {
  std::string item_id;
  std::string condition;
  std::string intervention = "none";
  AnswerKind answer_kind = AnswerKind::numeric;
  std::string gold;
  std::string delimiter;
  std::string prefix;
  std::string output_text;
  std::optional<AnswerValue> extracted_answer;
  bool is_correct = false;
  std::optional<bool> matches_last_cot_number;
  std::optional<std::string> distractor_value;
  std::optional<bool> matches_distractor;
  /// Exclusion reason; excluded rows are bookkeeping only and carry no
  /// generation.
  std::optional<std::string> excluded;
  /// Prefix metadata carried along for analysis (answer position,
  /// truncation fraction, distractor novelty, seed digest).
  std::map<std::string, std::string> meta;
  std::string config_hash;

  [[nodiscard]] std::string key() const { return item_id + "\x1f" + condition + "\x1f" + intervention; }
};

/// Fills extracted_answer, is_correct and the match flags from output_text.
/// `full_generation` selects free-generation parsing, where the chain of
/// thought precedes the delimiter inside the output itself.
void score_record(GenerationRecord& rec, bool full_generation = false);

}  // namespace cotprobe
