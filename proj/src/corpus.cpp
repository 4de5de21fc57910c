#include "cotprobe/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace cotprobe {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_alnum(char c) { return is_digit(c) || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Builds a trace from whitespace-only separator ranges. Leading and trailing
// whitespace of the whole text are peeled off first so every step is
// non-empty.
CoTTrace segment(std::string_view text, const std::vector<CharRange>& separators) {
  CoTTrace trace;
  trace.text = std::string(text);
  std::size_t a = 0;
  while (a < text.size() && is_space(text[a])) ++a;
  std::size_t b = text.size();
  while (b > a && is_space(text[b - 1])) --b;
  trace.leading = std::string(text.substr(0, a));
  if (a == b) return trace;

  std::size_t cursor = a;
  for (const auto& sep : separators) {
    if (sep.begin <= a || sep.end >= b) continue;
    trace.steps.emplace_back(text.substr(cursor, sep.begin - cursor));
    trace.boundaries.push_back({cursor, sep.begin});
    trace.separators.emplace_back(text.substr(sep.begin, sep.size()));
    cursor = sep.end;
  }
  trace.steps.emplace_back(text.substr(cursor, b - cursor));
  trace.boundaries.push_back({cursor, b});
  trace.separators.emplace_back(text.substr(b));
  return trace;
}

std::vector<CharRange> paragraph_breaks(std::string_view text) {
  std::vector<CharRange> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_space(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    int newlines = 0;
    while (j < text.size() && is_space(text[j])) {
      if (text[j] == '\n') ++newlines;
      ++j;
    }
    if (newlines >= 2) out.push_back({i, j});
    i = j;
  }
  return out;
}

std::vector<CharRange> sentence_breaks(std::string_view text) {
  std::vector<CharRange> out;
  std::size_t p = 1;
  while (p < text.size()) {
    const char prev = text[p - 1];
    if (is_space(text[p]) && (prev == '.' || prev == '!' || prev == '?' || prev == '\n')) {
      std::size_t q = p;
      while (q < text.size() && is_space(text[q])) ++q;
      out.push_back({p, q});
      p = q + 1;
    } else {
      ++p;
    }
  }
  return out;
}

std::optional<AnswerValue> first_letter_token(std::string_view s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c < 'A' || c > 'Z') continue;
    const bool left_ok = i == 0 || !is_alnum(s[i - 1]);
    const bool right_ok = i + 1 == s.size() || !is_alnum(s[i + 1]);
    if (left_ok && right_ok) return AnswerValue{c};
  }
  return std::nullopt;
}

}  // namespace

std::string answer_to_string(const AnswerValue& v) {
  if (const auto* d = std::get_if<Decimal>(&v)) return d->to_string();
  return std::string(1, std::get<char>(v));
}

std::optional<AnswerValue> parse_answer(std::string_view text, AnswerKind kind) {
  text = trim(text);
  if (kind == AnswerKind::letter) return first_letter_token(text);
  std::string cleaned;
  for (char c : text)
    if (c != ',') cleaned.push_back(c);
  auto d = Decimal::parse(cleaned);
  if (!d) return std::nullopt;
  return AnswerValue{*d};
}

std::string_view to_string(AnswerKind kind) { return kind == AnswerKind::numeric ? "numeric" : "letter"; }

std::optional<AnswerKind> answer_kind_from_string(std::string_view s) {
  if (s == "numeric") return AnswerKind::numeric;
  if (s == "letter") return AnswerKind::letter;
  return std::nullopt;
}

std::string CoTTrace::reconstruct() const {
  std::string out = leading;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out += steps[i];
    out += separators[i];
  }
  return out;
}

std::optional<std::size_t> CoTTrace::step_of(std::size_t offset) const {
  for (std::size_t i = 0; i < boundaries.size(); ++i)
    if (offset >= boundaries[i].begin && offset < boundaries[i].end) return i;
  return std::nullopt;
}

std::optional<DatasetFormat> dataset_format_from_string(std::string_view s) {
  if (s == "gsm8k_jsonl" || s == "gsm8k") return DatasetFormat::gsm8k_jsonl;
  if (s == "generic_jsonl" || s == "generic") return DatasetFormat::generic_jsonl;
  if (s == "bbh_jsonl" || s == "bbh") return DatasetFormat::bbh_jsonl;
  return std::nullopt;
}

std::string_view to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::gsm8k_jsonl: return "gsm8k_jsonl";
    case DatasetFormat::generic_jsonl: return "generic_jsonl";
    case DatasetFormat::bbh_jsonl: return "bbh_jsonl";
  }
  return "unknown";
}

std::string strip_calculator_annotations(std::string_view text) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, 2, "<<") == 0) {
      const auto close = text.find(">>", i + 2);
      if (close != std::string_view::npos) {
        i = close + 2;
        continue;
      }
    }
    out.push_back(text[i++]);
  }
  return out;
}

LoadedDataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path.string());
  return parse_dataset(in, format);
}

LoadedDataset parse_dataset(std::istream& in, DatasetFormat format) {
  using nlohmann::json;
  LoadedDataset out;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  std::size_t ordinal = 0;

  auto string_field = [](const json& rec, const char* name) -> std::optional<std::string> {
    auto it = rec.find(name);
    if (it == rec.end()) return std::nullopt;
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number()) return it->dump();
    return std::nullopt;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::size_t index = ordinal++;

    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      out.errors.push_back({line_no, std::string("malformed JSON: ") + e.what()});
      continue;
    }
    if (!rec.is_object()) {
      out.errors.push_back({line_no, "record is not a JSON object"});
      continue;
    }
    auto question = string_field(rec, "question");
    if (!question) {
      out.errors.push_back({line_no, "missing field 'question'"});
      continue;
    }

    Problem p;
    p.question = *question;
    std::optional<std::string> gold_text;
    std::string default_prefix;
    switch (format) {
      case DatasetFormat::gsm8k_jsonl: {
        auto answer = string_field(rec, "answer");
        if (!answer) {
          out.errors.push_back({line_no, "missing field 'answer'"});
          continue;
        }
        const auto marker = answer->rfind("####");
        if (marker == std::string::npos) {
          out.errors.push_back({line_no, "answer lacks the '####' gold marker"});
          continue;
        }
        p.reference_cot = std::string(trim(strip_calculator_annotations(std::string_view(*answer).substr(0, marker))));
        gold_text = answer->substr(marker + 4);
        p.answer_kind = AnswerKind::numeric;
        default_prefix = "gsm8k-";
        break;
      }
      case DatasetFormat::generic_jsonl: {
        auto cot = string_field(rec, "cot");
        gold_text = string_field(rec, "gold");
        if (!cot || !gold_text) {
          out.errors.push_back({line_no, !cot ? "missing field 'cot'" : "missing field 'gold'"});
          continue;
        }
        p.reference_cot = *cot;
        p.answer_kind = AnswerKind::numeric;
        default_prefix = "item-";
        break;
      }
      case DatasetFormat::bbh_jsonl: {
        auto cot = string_field(rec, "cot");
        gold_text = string_field(rec, "gold_letter");
        if (!cot || !gold_text) {
          out.errors.push_back({line_no, !cot ? "missing field 'cot'" : "missing field 'gold_letter'"});
          continue;
        }
        p.reference_cot = *cot;
        p.answer_kind = AnswerKind::letter;
        default_prefix = "bbh-";
        break;
      }
    }

    auto gold = parse_answer(*gold_text, p.answer_kind);
    if (!gold) {
      out.skipped.push_back({line_no, "unparsable gold answer '" + std::string(trim(*gold_text)) + "'"});
      continue;
    }
    p.gold = *gold;
    auto id = string_field(rec, "id");
    p.id = id ? *id : default_prefix + std::to_string(index);
    if (!seen_ids.insert(p.id).second) {
      out.errors.push_back({line_no, "duplicate id '" + p.id + "'"});
      continue;
    }
    out.problems.push_back(std::move(p));
  }
  return out;
}

std::vector<NumericSpan> find_numeric_spans(std::string_view text) {
  std::vector<NumericSpan> out;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    if (!is_digit(text[i]) || (i > 0 && is_digit(text[i - 1]))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    if (i >= 1 && text[i - 1] == '-' && (i == 1 || is_space(text[i - 2]))) start = i - 1;
    std::size_t j = i;
    while (j < n && is_digit(text[j])) ++j;
    while (j + 3 < n && text[j] == ',' && is_digit(text[j + 1]) && is_digit(text[j + 2]) && is_digit(text[j + 3]) &&
           (j + 4 == n || !is_digit(text[j + 4])))
      j += 4;
    if (j + 1 < n && text[j] == '.' && is_digit(text[j + 1])) {
      ++j;
      while (j < n && is_digit(text[j])) ++j;
    }
    if (auto value = Decimal::parse(text.substr(start, j - start))) {
      const bool bounded = (start == 0 || !is_digit(text[start - 1])) && (j == n || !is_digit(text[j]));
      out.push_back({*value, {start, j}, bounded});
    }
    i = j;
  }
  return out;
}

CoTTrace parse_steps(std::string_view cot) {
  CoTTrace trace = segment(cot, paragraph_breaks(cot));
  if (trace.steps.size() < 2) {
    trace = segment(cot, sentence_breaks(cot));
    trace.sentence_fallback = true;
  }
  trace.numeric_spans = find_numeric_spans(cot);
  return trace;
}

CoTTrace parse_trace(std::string_view cot, const AnswerValue& gold) {
  CoTTrace trace = parse_steps(cot);
  if (const auto* g = std::get_if<Decimal>(&gold)) {
    for (std::size_t idx : find_gold_occurrences(trace, *g))
      if (auto step = trace.step_of(trace.numeric_spans[idx].range.begin)) trace.answer_step_index = *step;
  } else {
    // Letter answers: the last step holding the letter as a standalone token.
    const char letter = std::get<char>(gold);
    for (std::size_t s = 0; s < trace.steps.size(); ++s) {
      const auto& step = trace.steps[s];
      for (std::size_t i = 0; i < step.size(); ++i) {
        if (step[i] != letter) continue;
        if ((i == 0 || !is_alnum(step[i - 1])) && (i + 1 == step.size() || !is_alnum(step[i + 1])))
          trace.answer_step_index = s;
      }
    }
  }
  return trace;
}

std::vector<std::size_t> find_gold_occurrences(const CoTTrace& trace, const Decimal& gold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < trace.numeric_spans.size(); ++i)
    if (trace.numeric_spans[i].digit_bounded && trace.numeric_spans[i].value == gold) out.push_back(i);
  return out;
}

bool contains_value(std::string_view text, const Decimal& value) {
  for (const auto& span : find_numeric_spans(text))
    if (span.digit_bounded && span.value == value) return true;
  return false;
}

std::vector<CharRange> split_sentences(std::string_view text) {
  std::vector<CharRange> out;
  std::size_t cursor = 0;
  while (cursor < text.size() && is_space(text[cursor])) ++cursor;
  for (const auto& br : sentence_breaks(text)) {
    if (br.begin > cursor) out.push_back({cursor, br.begin});
    cursor = std::max(cursor, br.end);
  }
  std::size_t end = text.size();
  while (end > cursor && is_space(text[end - 1])) --end;
  if (end > cursor) out.push_back({cursor, end});
  return out;
}

std::vector<CharRange> whitespace_words(std::string_view text) {
  std::vector<CharRange> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    out.push_back({i, j});
    i = j;
  }
  return out;
}

std::string_view trim_delimiter(std::string_view delimiter) {
  while (!delimiter.empty() && is_space(delimiter.back())) delimiter.remove_suffix(1);
  return delimiter;
}

std::optional<AnswerValue> extract_final_answer(std::string_view output, std::string_view delimiter,
                                                AnswerKind kind) {
  const auto delim = trim_delimiter(delimiter);
  std::string_view tail = output;
  if (!delim.empty()) {
    const auto pos = output.rfind(delim);
    if (pos != std::string_view::npos) tail = output.substr(pos + delim.size());
  }
  if (kind == AnswerKind::letter) return first_letter_token(tail);
  for (const auto& span : find_numeric_spans(tail))
    if (span.digit_bounded) return AnswerValue{span.value};
  return std::nullopt;
}

std::optional<Decimal> last_cot_number(std::string_view text, std::string_view delimiter) {
  const auto delim = trim_delimiter(delimiter);
  if (!delim.empty()) {
    const auto pos = text.rfind(delim);
    if (pos != std::string_view::npos) text = text.substr(0, pos);
  }
  const auto spans = find_numeric_spans(text);
  for (auto it = spans.rbegin(); it != spans.rend(); ++it)
    if (it->digit_bounded) return it->value;
  return std::nullopt;
}

std::optional<CharRange> last_operand_sentence(std::string_view text) {
  const auto sentences = split_sentences(text);
  for (auto it = sentences.rbegin(); it != sentences.rend(); ++it)
    if (find_numeric_spans(text.substr(it->begin, it->size())).size() >= 2) return *it;
  return std::nullopt;
}

void score_record(GenerationRecord& rec, bool full_generation) {
  rec.extracted_answer.reset();
  rec.is_correct = false;
  rec.matches_last_cot_number.reset();
  rec.matches_distractor.reset();
  if (rec.excluded) return;

  const auto delim = trim_delimiter(rec.delimiter);
  if (full_generation && rec.output_text.find(delim) == std::string::npos) return;
  rec.extracted_answer = extract_final_answer(rec.output_text, rec.delimiter, rec.answer_kind);
  const auto gold = parse_answer(rec.gold, rec.answer_kind);
  rec.is_correct = rec.extracted_answer && gold && *rec.extracted_answer == *gold;

  if (rec.answer_kind == AnswerKind::numeric) {
    const auto last = full_generation ? last_cot_number(rec.output_text, rec.delimiter)
                                      : last_cot_number(rec.prefix, rec.delimiter);
    if (last) {
      const auto* got = rec.extracted_answer ? std::get_if<Decimal>(&*rec.extracted_answer) : nullptr;
      rec.matches_last_cot_number = got != nullptr && *got == *last;
    }
  }
  if (rec.distractor_value) {
    const auto d = parse_answer(*rec.distractor_value, rec.answer_kind);
    rec.matches_distractor = rec.extracted_answer && d && *rec.extracted_answer == *d;
  }
}

}  // namespace cotprobe
