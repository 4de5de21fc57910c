#include "cotprobe/perturb.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace cotprobe {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_alnum(char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

std::string_view rtrim(std::string_view s) {
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

PerturbedPrefix make_prefix(std::string_view item_id, std::string condition, std::string_view delimiter) {
  PerturbedPrefix p;
  p.item_id = std::string(item_id);
  p.condition = std::move(condition);
  p.delimiter = std::string(trim_delimiter(delimiter));
  return p;
}

PerturbedPrefix excluded(PerturbedPrefix p, std::string reason) {
  p.text.clear();
  p.meta.excluded = std::move(reason);
  return p;
}

// Replacement numeral in the surface form of the one it replaces: same
// number of decimal places, thousands separators kept if present.
std::string render_like(const Decimal& value, std::string_view original) {
  const auto dot = original.find('.');
  const int frac = dot == std::string_view::npos ? 0 : static_cast<int>(original.size() - dot - 1);
  const bool commas = original.find(',') != std::string_view::npos;
  return value.format(frac, commas);
}

struct Replacement {
  CharRange range;
  std::string text;
};

std::string apply_replacements(std::string_view text, const std::vector<Replacement>& reps) {
  std::string out;
  std::size_t cursor = 0;
  for (const auto& r : reps) {
    out.append(text.substr(cursor, r.range.begin - cursor));
    out += r.text;
    cursor = r.range.end;
  }
  out.append(text.substr(cursor));
  return out;
}

void fisher_yates(std::vector<std::size_t>& items, SeedContext& ctx, std::string_view label) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(ctx.next_below(label, i));
    std::swap(items[i - 1], items[j]);
  }
}

std::vector<std::size_t> identity(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

std::string perm_label(int seed_index) { return "perm|s" + std::to_string(seed_index); }

// Steps rearranged by `order`; separators stay in their slots so the
// whitespace skeleton is unchanged.
std::string arrange_steps(const CoTTrace& trace, const std::vector<std::size_t>& order) {
  std::string out = trace.leading;
  for (std::size_t i = 0; i < order.size(); ++i) {
    out += trace.steps[order[i]];
    out += trace.separators[i];
  }
  return out;
}

// Words of `text` permuted into the original word slots.
std::string shuffle_words(std::string_view text, SeedContext& ctx, std::string_view label) {
  const auto words = whitespace_words(text);
  auto order = identity(words.size());
  fisher_yates(order, ctx, label);
  std::vector<Replacement> reps;
  reps.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto& src = words[order[i]];
    reps.push_back({words[i], std::string(text.substr(src.begin, src.size()))});
  }
  return apply_replacements(text, reps);
}

// Offset of the first gold occurrence in the trace text.
std::optional<std::size_t> first_gold_offset(const CoTTrace& trace, const AnswerValue& gold) {
  if (const auto* g = std::get_if<Decimal>(&gold)) {
    const auto occ = find_gold_occurrences(trace, *g);
    if (occ.empty()) return std::nullopt;
    return trace.numeric_spans[occ.front()].range.begin;
  }
  const char letter = std::get<char>(gold);
  const std::string& t = trace.text;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] == letter && (i == 0 || !is_alnum(t[i - 1])) && (i + 1 == t.size() || !is_alnum(t[i + 1]))) return i;
  return std::nullopt;
}

bool leaks_gold(std::string_view text, const AnswerValue& gold) {
  if (const auto* g = std::get_if<Decimal>(&gold)) return contains_value(text, *g);
  const char letter = std::get<char>(gold);
  for (std::size_t i = 0; i < text.size(); ++i)
    if (text[i] == letter && (i == 0 || !is_alnum(text[i - 1])) && (i + 1 == text.size() || !is_alnum(text[i + 1])))
      return true;
  return false;
}

std::string format_fraction(double f) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, f);
  return std::string(buf, res.ptr);
}

std::int64_t pow10_i64(int n) {
  std::int64_t r = 1;
  for (int i = 0; i < n; ++i) r *= 10;
  return r;
}

}  // namespace

std::string assemble_prefix(std::string_view body, std::string_view delimiter) {
  const auto delim = trim_delimiter(delimiter);
  const auto trimmed = rtrim(body);
  std::string out;
  if (!trimmed.empty()) {
    out.append(trimmed);
    out.push_back('\n');
  }
  out.append(delim);
  out.push_back(' ');
  return out;
}

Decimal corrupt_value(const Decimal& v, const Md5Digest& draw) {
  // floor(0.3 * |v|) = floor(3 * |m| / 10^(s+1)) for v = m * 10^-s.
  const __int128 mag = v.mantissa() < 0 ? -static_cast<__int128>(v.mantissa()) : v.mantissa();
  __int128 denom = 10;
  for (int i = 0; i < v.scale(); ++i) denom *= 10;
  const __int128 scaled = (3 * mag) / denom;
  const std::int64_t delta = std::max<std::int64_t>(1, static_cast<std::int64_t>(scaled));
  const bool plus = (draw[0] & 1u) != 0;
  const Decimal d = Decimal::from_int(plus ? delta : -delta);
  auto out = checked_add(v, d);
  if (!out) throw std::overflow_error("corrupt_value: result out of range");
  return *out;
}

std::string_view condition_tag(CorruptionCondition c) {
  switch (c) {
    case CorruptionCondition::A_corrupt_all: return "A";
    case CorruptionCondition::B_preserve_gold: return "B";
    case CorruptionCondition::C_clean: return "C";
    case CorruptionCondition::D_rep: return "D_rep";
  }
  return "?";
}

std::string_view condition_tag(TruncationCondition c) {
  switch (c) {
    case TruncationCondition::D_trunc: return "D_trunc";
    case TruncationCondition::D_blank: return "D_blank";
    case TruncationCondition::no_cot: return "no_cot";
  }
  return "?";
}

std::string_view to_string(ShuffleKind k) {
  switch (k) {
    case ShuffleKind::ordered: return "ordered";
    case ShuffleKind::within_step: return "within_step";
    case ShuffleKind::step_shuffle: return "step_shuffle";
    case ShuffleKind::word_shuffle: return "word_shuffle";
    case ShuffleKind::reverse_order: return "reverse_order";
    case ShuffleKind::token_shuffle: return "token_shuffle";
    case ShuffleKind::no_cot: return "no_cot";
  }
  return "?";
}

std::string_view to_string(DistractorKind k) {
  switch (k) {
    case DistractorKind::C0: return "C0";
    case DistractorKind::C0b_filler: return "C0b";
    case DistractorKind::C1_adjacent: return "C1";
    case DistractorKind::C2_random: return "C2";
    case DistractorKind::C3_gold_dup: return "C3";
    case DistractorKind::intermediate_result: return "intermediate";
  }
  return "?";
}

std::string_view to_string(Framing f) {
  switch (f) {
    case Framing::F1_template: return "F1";
    case Framing::F2_bare: return "F2";
    case Framing::F3_note: return "F3";
    case Framing::F4_inline: return "F4";
  }
  return "?";
}

std::optional<ShuffleKind> shuffle_kind_from_string(std::string_view s) {
  for (auto k : {ShuffleKind::ordered, ShuffleKind::within_step, ShuffleKind::step_shuffle, ShuffleKind::word_shuffle,
                 ShuffleKind::reverse_order, ShuffleKind::token_shuffle, ShuffleKind::no_cot})
    if (to_string(k) == s) return k;
  if (s == "within_step_shuffle") return ShuffleKind::within_step;
  return std::nullopt;
}

std::optional<DistractorKind> distractor_kind_from_string(std::string_view s) {
  for (auto k : {DistractorKind::C0, DistractorKind::C0b_filler, DistractorKind::C1_adjacent,
                 DistractorKind::C2_random, DistractorKind::C3_gold_dup, DistractorKind::intermediate_result})
    if (to_string(k) == s) return k;
  if (s == "intermediate_result") return DistractorKind::intermediate_result;
  return std::nullopt;
}

std::optional<Framing> framing_from_string(std::string_view s) {
  for (auto f : {Framing::F1_template, Framing::F2_bare, Framing::F3_note, Framing::F4_inline})
    if (to_string(f) == s) return f;
  return std::nullopt;
}

std::optional<CorruptionCondition> corruption_from_string(std::string_view s) {
  for (auto c : {CorruptionCondition::A_corrupt_all, CorruptionCondition::B_preserve_gold,
                 CorruptionCondition::C_clean, CorruptionCondition::D_rep})
    if (condition_tag(c) == s) return c;
  return std::nullopt;
}

std::optional<TruncationCondition> truncation_from_string(std::string_view s) {
  for (auto c : {TruncationCondition::D_trunc, TruncationCondition::D_blank, TruncationCondition::no_cot})
    if (condition_tag(c) == s) return c;
  return std::nullopt;
}

std::string shuffle_tag(ShuffleKind kind, int seed_index) {
  switch (kind) {
    case ShuffleKind::ordered:
    case ShuffleKind::no_cot:
    case ShuffleKind::reverse_order: return std::string(to_string(kind));
    default: return std::string(to_string(kind)) + "@s" + std::to_string(seed_index);
  }
}

std::string position_tag(const SweepPosition& pos, int seed_index) {
  const std::string seed = "@s" + std::to_string(seed_index);
  switch (pos.kind) {
    case SweepPosition::Kind::fraction: return "pos@" + format_fraction(pos.fraction) + seed;
    case SweepPosition::Kind::keep_end: return "keep_end" + seed;
    case SweepPosition::Kind::move_front: return "move_front" + seed;
    case SweepPosition::Kind::full_shuffle: return "full_shuffle" + seed;
  }
  return "?";
}

std::string distractor_tag(DistractorKind kind, Framing framing, std::string_view delimiter) {
  std::string tag(to_string(kind));
  if (kind != DistractorKind::C0 && kind != DistractorKind::C0b_filler) tag += "." + std::string(to_string(framing));
  const auto delim = trim_delimiter(delimiter);
  if (delim != kDefaultDelimiter) tag += "@" + std::string(delim);
  return tag;
}

std::string distractor_value_tag(DistractorKind kind) { return "distractor:" + std::string(to_string(kind)); }

PerturbedPrefix gen_corruption(std::string_view item_id, const CoTTrace& trace, const Decimal& gold,
                               CorruptionCondition condition, SeedContext ctx, std::string_view delimiter) {
  auto out = make_prefix(item_id, ctx.condition_tag, delimiter);
  out.meta.seed_used = ctx.outer_hex();
  const auto& text = trace.text;
  const auto gold_idx = find_gold_occurrences(trace, gold);

  if (condition == CorruptionCondition::C_clean) {
    out.text = assemble_prefix(text, delimiter);
    return out;
  }
  if (trace.numeric_spans.empty()) return excluded(std::move(out), "no_numeric_spans");
  if (condition != CorruptionCondition::A_corrupt_all && gold_idx.empty())
    return excluded(std::move(out), "no_gold_occurrence");

  std::vector<Replacement> reps;
  auto source = [&](const NumericSpan& s) { return std::string_view(text).substr(s.range.begin, s.range.size()); };

  if (condition == CorruptionCondition::D_rep) {
    const auto draw = ctx.next_draw(gold.to_string());
    const Decimal wrong = corrupt_value(gold, draw);
    for (auto idx : gold_idx) {
      const auto& span = trace.numeric_spans[idx];
      reps.push_back({span.range, render_like(wrong, source(span))});
    }
    out.meta.distractor_value = wrong.to_string();
  } else {
    const bool keep_gold = condition == CorruptionCondition::B_preserve_gold;
    for (const auto& span : trace.numeric_spans) {
      if (!span.digit_bounded) continue;
      if (keep_gold && span.value == gold) continue;
      const auto draw = ctx.next_draw(source(span));
      reps.push_back({span.range, render_like(corrupt_value(span.value, draw), source(span))});
    }
  }

  const std::string body = apply_replacements(text, reps);
  if (condition == CorruptionCondition::A_corrupt_all && contains_value(body, gold))
    return excluded(std::move(out), "gold_preserved");
  out.text = assemble_prefix(body, delimiter);
  return out;
}

std::optional<std::string> truncated_body(const CoTTrace& trace, const AnswerValue& gold) {
  const auto g = first_gold_offset(trace, gold);
  if (!g) return std::nullopt;
  const std::string_view text = trace.text;

  // Sentence containing the first gold occurrence; keep everything before it.
  const auto sentences = split_sentences(text);
  std::optional<std::size_t> containing;
  for (std::size_t k = 0; k < sentences.size(); ++k)
    if (sentences[k].begin <= *g) containing = k;
  if (containing && *containing > 0) return std::string(rtrim(text.substr(0, sentences[*containing - 1].end)));

  const auto nl = text.substr(0, *g).rfind('\n');
  if (nl != std::string_view::npos && !rtrim(text.substr(0, nl)).empty())
    return std::string(rtrim(text.substr(0, nl)));

  return std::string(rtrim(text.substr(0, *g)));
}

PerturbedPrefix gen_truncation(std::string_view item_id, const CoTTrace& trace, const AnswerValue& gold,
                               TruncationCondition condition, std::string_view delimiter) {
  auto out = make_prefix(item_id, std::string(condition_tag(condition)), delimiter);
  if (condition == TruncationCondition::no_cot) {
    out.text = assemble_prefix("", delimiter);
    return out;
  }
  const auto body = truncated_body(trace, gold);
  if (!body) return excluded(std::move(out), "no_gold_occurrence");

  const auto original_words = whitespace_words(trace.text).size();
  const double fraction = original_words == 0 ? 0.0
                                              : static_cast<double>(whitespace_words(*body).size()) /
                                                    static_cast<double>(original_words);
  out.meta.truncation_fraction = fraction;
  if (leaks_gold(*body, gold)) return excluded(std::move(out), "gold_leak");
  if (fraction < kMinTruncationFraction) return excluded(std::move(out), "retained_below_30pct");

  if (condition == TruncationCondition::D_trunc) {
    out.text = assemble_prefix(*body, delimiter);
  } else {
    out.text = *body + " " + std::string(kBlankSentence) + "\n\n" + std::string(trim_delimiter(delimiter)) + " ";
  }
  return out;
}

PerturbedPrefix gen_shuffle(std::string_view item_id, const CoTTrace& trace, ShuffleKind kind, SeedContext ctx,
                            int seed_index, const Tokenizer& tokenizer, std::string_view delimiter) {
  auto out = make_prefix(item_id, ctx.condition_tag, delimiter);
  out.meta.seed_used = ctx.outer_hex();
  if (kind == ShuffleKind::no_cot) {
    out.text = assemble_prefix("", delimiter);
    return out;
  }
  if (trace.steps.size() < 2) return excluded(std::move(out), "fewer_than_2_steps");

  const std::string label = perm_label(seed_index);
  std::string body;
  switch (kind) {
    case ShuffleKind::ordered: body = trace.text; break;
    case ShuffleKind::reverse_order: {
      auto order = identity(trace.steps.size());
      std::reverse(order.begin(), order.end());
      body = arrange_steps(trace, order);
      break;
    }
    case ShuffleKind::step_shuffle: {
      auto order = identity(trace.steps.size());
      fisher_yates(order, ctx, label);
      body = arrange_steps(trace, order);
      break;
    }
    case ShuffleKind::within_step: {
      body = trace.leading;
      for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        body += shuffle_words(trace.steps[i], ctx, label);
        body += trace.separators[i];
      }
      break;
    }
    case ShuffleKind::word_shuffle: body = shuffle_words(trace.text, ctx, label); break;
    case ShuffleKind::token_shuffle: {
      if (!tokenizer) throw std::invalid_argument("token_shuffle requires a tokenizer");
      const auto tokens = tokenizer(trace.text);
      auto order = identity(tokens.size());
      fisher_yates(order, ctx, label);
      for (auto i : order) body += tokens[i];
      break;
    }
    case ShuffleKind::no_cot: break;
  }
  out.text = assemble_prefix(body, delimiter);
  return out;
}

PerturbedPrefix gen_position_sweep(std::string_view item_id, const CoTTrace& trace, const SweepPosition& position,
                                   SeedContext ctx, int seed_index, std::string_view delimiter) {
  auto out = make_prefix(item_id, ctx.condition_tag, delimiter);
  out.meta.seed_used = ctx.outer_hex();
  if (!trace.answer_step_index) return excluded(std::move(out), "no_answer_step");
  const std::size_t n = trace.steps.size();
  const bool sweep_point = position.kind == SweepPosition::Kind::fraction;
  if (sweep_point && n < 5) return excluded(std::move(out), "fewer_than_5_steps");
  if (!sweep_point && n < 3) return excluded(std::move(out), "fewer_than_3_steps");
  const std::string label = perm_label(seed_index);
  const std::size_t answer = *trace.answer_step_index;

  std::vector<std::size_t> order;
  if (position.kind == SweepPosition::Kind::full_shuffle) {
    order = identity(n);
    fisher_yates(order, ctx, label);
  } else {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
      if (i != answer) rest.push_back(i);
    fisher_yates(rest, ctx, label);
    double f = position.fraction;
    if (position.kind == SweepPosition::Kind::keep_end) f = 1.0;
    if (position.kind == SweepPosition::Kind::move_front) f = 0.0;
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("sweep fraction must lie in [0, 1]");
    const auto slot = static_cast<std::size_t>(std::lround(f * static_cast<double>(n - 1)));
    order = rest;
    order.insert(order.begin() + static_cast<std::ptrdiff_t>(slot), answer);
  }
  for (std::size_t i = 0; i < n; ++i)
    if (order[i] == answer) out.meta.answer_position = i;
  out.text = assemble_prefix(arrange_steps(trace, order), delimiter);
  return out;
}

std::string framing_text(Framing framing, std::string_view value) {
  const std::string v(value);
  switch (framing) {
    case Framing::F1_template: return "Therefore, the answer is " + v + ".";
    case Framing::F2_bare: return v;
    case Framing::F3_note: return "Note: " + v;
    case Framing::F4_inline: return "But wait, actually it should be " + v + ".";
  }
  return v;
}

std::optional<Decimal> draw_distractor_value(const CoTTrace& trace, const Decimal& gold, DistractorKind kind,
                                             SeedContext& ctx) {
  const std::string gold_str = gold.to_string();
  switch (kind) {
    case DistractorKind::C0:
    case DistractorKind::C0b_filler: return std::nullopt;
    case DistractorKind::C3_gold_dup: return gold;
    case DistractorKind::C1_adjacent: {
      const auto draw = ctx.next_draw(gold_str);
      const bool plus = (draw[0] & 1u) != 0;
      const Decimal one = Decimal::from_int(1);
      const auto first = plus ? checked_add(gold, one) : checked_sub(gold, one);
      const auto second = plus ? checked_sub(gold, one) : checked_add(gold, one);
      if (first && first->integer_digits() == gold.integer_digits()) return first;
      if (second && second->integer_digits() == gold.integer_digits()) return second;
      return first ? first : second;
    }
    case DistractorKind::C2_random: {
      const int d = gold.integer_digits();
      const std::int64_t lo = d == 1 ? 1 : pow10_i64(d - 1);
      const std::int64_t hi = pow10_i64(d) - 1;
      for (int attempt = 0; attempt < 64; ++attempt) {
        const auto u = ctx.next_below(gold_str, static_cast<std::uint64_t>(hi - lo + 1));
        std::int64_t v = lo + static_cast<std::int64_t>(u);
        if (gold.is_negative()) v = -v;
        const Decimal cand = Decimal::from_int(v);
        if (cand != gold) return cand;
      }
      throw std::runtime_error("C2 distractor: rejection sampling exceeded 64 draws");
    }
    case DistractorKind::intermediate_result: {
      std::vector<const NumericSpan*> pool;
      for (const auto& s : trace.numeric_spans)
        if (s.digit_bounded && s.value != gold) pool.push_back(&s);
      if (pool.empty()) return std::nullopt;
      const auto pick = ctx.next_below("intermediate", pool.size());
      return pool[static_cast<std::size_t>(pick)]->value;
    }
  }
  return std::nullopt;
}

PerturbedPrefix gen_distractor(std::string_view item_id, const CoTTrace& trace, const AnswerValue& gold,
                               DistractorKind kind, Framing framing, std::string_view delimiter, SeedContext ctx) {
  auto out = make_prefix(item_id, distractor_tag(kind, framing, delimiter), delimiter);
  out.meta.seed_used = ctx.outer_hex();
  const std::string body(rtrim(trace.text));
  auto joined = [&](std::string_view addition) {
    const char last = body.empty() ? '\n' : body.back();
    const bool sentence_end = last == '.' || last == '!' || last == '?';
    return body + (sentence_end ? " " : "\n") + std::string(addition);
  };

  if (kind == DistractorKind::C0) {
    out.text = assemble_prefix(body, delimiter);
    return out;
  }
  if (kind == DistractorKind::C0b_filler) {
    out.text = assemble_prefix(joined(kFillerSentence), delimiter);
    return out;
  }
  const auto* g = std::get_if<Decimal>(&gold);
  if (g == nullptr) return excluded(std::move(out), "non_numeric_gold");
  const auto value = draw_distractor_value(trace, *g, kind, ctx);
  if (!value) return excluded(std::move(out), "no_intermediate_value");

  const std::string x = value->to_string();
  out.meta.distractor_value = x;
  out.meta.distractor_novel = *value != *g && !contains_value(trace.text, *value);
  out.text = assemble_prefix(joined(framing_text(framing, x)), delimiter);
  return out;
}

PerturbedPrefix set_delimiter(PerturbedPrefix prefix, std::string_view delimiter) {
  const std::string next(trim_delimiter(delimiter));
  if (prefix.excluded()) {
    prefix.delimiter = next;
    return prefix;
  }
  const std::string old_suffix = prefix.delimiter + " ";
  if (prefix.text.size() < old_suffix.size() ||
      prefix.text.compare(prefix.text.size() - old_suffix.size(), old_suffix.size(), old_suffix) != 0)
    throw std::invalid_argument("set_delimiter: prefix does not end with its delimiter");
  prefix.text.resize(prefix.text.size() - old_suffix.size());
  prefix.text += next + " ";
  prefix.delimiter = next;
  return prefix;
}

}  // namespace cotprobe
