#include "cotprobe/simbots.hpp"

#include <algorithm>
#include <functional>

namespace cotprobe {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

std::string emit(const Decimal& v) { return " " + v.to_string(); }

// Framed numerals of the prefix body, in text order.
std::vector<NumericSpan> framed_numerals(std::string_view body) {
  const auto sentences = split_sentences(body);
  std::vector<NumericSpan> out;
  for (const auto& span : find_numeric_spans(body))
    if (span.digit_bounded && is_framed(body, span, sentences)) out.push_back(span);
  return out;
}

struct TokenRange {
  std::size_t begin;
  std::size_t end;
};

std::vector<TokenRange> token_ranges(std::string_view text) {
  std::vector<TokenRange> out;
  std::size_t pos = 0;
  for (const auto& tok : SimBackend::whitespace_tokenize(text)) {
    out.push_back({pos, pos + tok.size()});
    pos += tok.size();
  }
  return out;
}

std::string truncate_tokens(const std::string& text, int max_tokens) {
  const auto tokens = SimBackend::whitespace_tokenize(text);
  if (static_cast<int>(tokens.size()) <= max_tokens) return text;
  std::string out;
  for (int i = 0; i < max_tokens; ++i) out += tokens[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace

std::string_view to_string(SimbotKind k) {
  switch (k) {
    case SimbotKind::copybot: return "copybot";
    case SimbotKind::computebot: return "computebot";
    case SimbotKind::gatebot: return "gatebot";
  }
  return "?";
}

std::optional<SimbotKind> simbot_kind_from_string(std::string_view s) {
  for (auto k : {SimbotKind::copybot, SimbotKind::computebot, SimbotKind::gatebot})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

SimbotParams params_from_problems(const std::vector<Problem>& problems) {
  SimbotParams p;
  for (const auto& prob : problems) {
    p.scripted_cot[prob.question] = prob.reference_cot;
    const auto* g = prob.numeric_gold();
    if (g == nullptr) continue;
    auto& known = p.known_values[prob.question];
    for (const auto& span : find_numeric_spans(prob.reference_cot)) known.insert(span.value);
    known.insert(*g);
    p.gold[prob.question] = *g;
  }
  return p;
}

std::string_view prefix_body(std::string_view prefix) {
  const auto nl = prefix.rfind('\n');
  if (nl == std::string_view::npos) return {};
  return prefix.substr(0, nl);
}

bool is_framed(std::string_view text, const NumericSpan& span, const std::vector<CharRange>& sentences) {
  std::size_t i = span.range.begin;
  while (i > 0 && (is_space(text[i - 1]) || text[i - 1] == '$')) --i;
  if (i > 0 && text[i - 1] == '=') return true;
  for (const auto& s : sentences) {
    if (span.range.begin < s.begin || span.range.begin >= s.end) continue;
    const auto sentence = lower(text.substr(s.begin, s.size()));
    return sentence.find("answer") != std::string::npos || sentence.find("should be") != std::string::npos;
  }
  return false;
}

std::optional<NumericSpan> copybot_choice(std::string_view prefix) {
  const auto framed = framed_numerals(prefix_body(prefix));
  if (framed.empty()) return std::nullopt;
  return framed.back();
}

std::string copybot(std::string_view prefix) {
  const auto choice = copybot_choice(prefix);
  return choice ? emit(choice->value) : std::string{};
}

std::optional<char> letter_choice(std::string_view prefix) {
  const auto body = prefix_body(prefix);
  for (std::size_t i = body.size(); i >= 3; --i) {
    const std::size_t open = i - 3;
    if (body[open] != '(' || body[open + 2] != ')') continue;
    const char c = body[open + 1];
    if (c < 'A' || c > 'Z') continue;
    return c;
  }
  return std::nullopt;
}

std::string gatebot(std::string_view prefix, const std::set<Decimal>* known) {
  const auto framed = framed_numerals(prefix_body(prefix));
  for (auto it = framed.rbegin(); it != framed.rend(); ++it)
    if (known == nullptr || known->count(it->value) > 0) return emit(it->value);
  return {};
}

bool reachable(const std::vector<Decimal>& operands, const Decimal& target, int depth) {
  const std::size_t n = std::min<std::size_t>(operands.size(), 8);
  if (n < 2 || depth < 1) return false;
  auto combine = [](const Decimal& a, const Decimal& b, int op) -> std::optional<Decimal> {
    switch (op) {
      case 0: return checked_add(a, b);
      case 1: return checked_sub(a, b);
      case 2: return checked_mul(a, b);
      default: return checked_div(a, b);
    }
  };
  std::vector<bool> used(n, false);
  std::function<bool(const Decimal&, int)> extend = [&](const Decimal& acc, int ops) -> bool {
    if (acc == target) return true;
    if (ops >= depth) return false;
    for (std::size_t k = 0; k < n; ++k) {
      if (used[k]) continue;
      used[k] = true;
      for (int op = 0; op < 4; ++op) {
        for (bool acc_first : {true, false}) {
          const auto r = acc_first ? combine(acc, operands[k], op) : combine(operands[k], acc, op);
          if (r && extend(*r, ops + 1)) {
            used[k] = false;
            return true;
          }
        }
      }
      used[k] = false;
    }
    return false;
  };
  for (std::size_t i = 0; i < n; ++i) {
    used[i] = true;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      used[j] = true;
      for (int op = 0; op < 4; ++op) {
        const auto r = combine(operands[i], operands[j], op);
        if (r && extend(*r, 1)) return true;
      }
      used[j] = false;
    }
    used[i] = false;
  }
  return false;
}

std::vector<Decimal> retained_operands(std::string_view body) {
  std::vector<Decimal> operands;
  if (const auto sentence = last_operand_sentence(body)) {
    for (const auto& span : find_numeric_spans(body.substr(sentence->begin, sentence->size())))
      operands.push_back(span.value);
    return operands;
  }
  // One numeral per sentence ("a=8. b=9."): pool them, leaving out
  // sentences that state an answer.
  for (const auto& s : split_sentences(body)) {
    const auto text = lower(body.substr(s.begin, s.size()));
    if (text.find("answer") != std::string::npos || text.find("should be") != std::string::npos) continue;
    for (const auto& span : find_numeric_spans(body.substr(s.begin, s.size()))) operands.push_back(span.value);
  }
  return operands;
}

std::string computebot(std::string_view prefix, const std::optional<Decimal>& gold, int depth_limit) {
  const auto operands = retained_operands(prefix_body(prefix));
  if (operands.size() < 2) return {};
  if (gold && reachable(operands, *gold, depth_limit)) return emit(*gold);
  const auto product = checked_mul(operands[0], operands[1]);
  return product ? emit(*product) : std::string{};
}

// ---- SimBackend ------------------------------------------------------------------

SimBackend::SimBackend(SimbotKind kind, SimbotParams params) : kind_(kind), params_(std::move(params)) {
  info_.family = "simbot-" + std::string(to_string(kind));
  info_.layers = 4;
  info_.query_heads = 8;
  info_.kv_heads = 2;
  info_.head_dim = 16;
  info_.eos = "</s>";
  info_.supports_position_ids = true;
  info_.induction_vocab = {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-", "*", "/", "="};
  for (const auto& h : params_.copy_heads)
    if (!info_.valid_head(h)) throw std::invalid_argument("copy head " + cotprobe::to_string(h) + " outside the simbot architecture");
  if (params_.copy_disable_threshold < 1) throw std::invalid_argument("copy_disable_threshold must be at least 1");
}

std::vector<std::string> SimBackend::whitespace_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  if (i < text.size() && is_space(text[i])) {
    while (i < text.size() && is_space(text[i])) ++i;
    out.emplace_back(text.substr(0, i));
  }
  while (i < text.size()) {
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    while (j < text.size() && is_space(text[j])) ++j;
    out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string SimBackend::answer_for(const std::string& question, std::string_view prefix) const {
  std::string out = numeric_answer_for(question, prefix);
  if (out.empty())
    if (const auto letter = letter_choice(prefix)) out = std::string(" ") + *letter;
  return out;
}

std::string SimBackend::numeric_answer_for(const std::string& question, std::string_view prefix) const {
  switch (kind_) {
    case SimbotKind::copybot: return copybot(prefix);
    case SimbotKind::gatebot: {
      const auto it = params_.known_values.find(question);
      return gatebot(prefix, it == params_.known_values.end() ? nullptr : &it->second);
    }
    case SimbotKind::computebot: {
      const auto it = params_.gold.find(question);
      return computebot(prefix, it == params_.gold.end() ? std::nullopt : std::optional<Decimal>(it->second),
                        params_.depth_limit);
    }
  }
  return {};
}

std::string SimBackend::policy_output(const GenerateRequest& req) const {
  if (!req.injected_prefix.empty()) return answer_for(req.question, req.injected_prefix);
  // Free generation: write the scripted chain of thought, then answer it.
  const auto it = params_.scripted_cot.find(req.question);
  if (it == params_.scripted_cot.end()) return {};
  std::string cot(it->second);
  while (!cot.empty() && is_space(cot.back())) cot.pop_back();
  const std::string head = cot.empty() ? params_.free_generation_delimiter
                                       : cot + "\n" + params_.free_generation_delimiter;
  return head + answer_for(req.question, head + " ");
}

std::string SimBackend::do_generate(const GenerateRequest& req) {
  return truncate_tokens(policy_output(req), req.max_new_tokens);
}

std::vector<std::string> SimBackend::do_tokenize(std::string_view text) { return whitespace_tokenize(text); }

bool SimBackend::is_copy_head(HeadId h) const {
  return std::find(params_.copy_heads.begin(), params_.copy_heads.end(), h) != params_.copy_heads.end();
}

bool SimBackend::disables_copy(const std::vector<HeadId>& heads) const {
  std::set<HeadId> named;
  for (const auto& h : heads)
    if (is_copy_head(h)) named.insert(h);
  return static_cast<int>(named.size()) >= params_.copy_disable_threshold;
}

AttentionMassResult SimBackend::do_attention_mass(const std::vector<AttentionItem>& items) {
  AttentionMassResult out;
  out.scores = HeadScoreMatrix(info_.layers, info_.query_heads, ScoreKind::attention_mass);
  std::vector<long double> sums(out.scores.size(), 0);
  for (const auto& item : items) {
    const auto toks = token_ranges(item.prompt);
    std::vector<std::size_t> span_tokens;
    for (std::size_t t = 0; t < toks.size(); ++t)
      for (const auto& s : item.spans)
        if (s.begin < toks[t].end && toks[t].begin < s.end && s.end <= item.prompt.size()) {
          span_tokens.push_back(t);
          break;
        }
    if (span_tokens.empty()) {
      ++out.items_skipped;
      continue;
    }
    ++out.items_used;
    // Non-copy heads sink on the first token; copy heads look at the
    // numeral copybot would read out.
    std::size_t copy_target = 0;
    if (const auto choice = copybot_choice(item.prompt)) {
      for (std::size_t t = 0; t < toks.size(); ++t)
        if (choice->range.begin >= toks[t].begin && choice->range.begin < toks[t].end) copy_target = t;
    }
    for (std::size_t i = 0; i < out.scores.size(); ++i) {
      const std::size_t target = is_copy_head(out.scores.head_at(i)) ? copy_target : 0;
      const auto hits = std::count(span_tokens.begin(), span_tokens.end(), target);
      sums[i] += static_cast<long double>(hits) / static_cast<long double>(span_tokens.size());
    }
  }
  if (out.items_used > 0)
    for (std::size_t i = 0; i < sums.size(); ++i)
      out.scores.scores[i] = static_cast<double>(sums[i] / static_cast<long double>(out.items_used));
  return out;
}

std::string SimBackend::do_generate_with_intervention(const GenerateRequest& req, const InterventionSpec& spec) {
  if (kind_ != SimbotKind::computebot && disables_copy(spec.heads)) return {};
  return do_generate(req);
}

PatchResult SimBackend::do_patch_and_score(const std::string& ordered_prompt, const std::string& shuffled_prompt,
                                           const std::vector<HeadId>& heads, const std::string& gold_token) {
  const auto gold = parse_answer(gold_token, AnswerKind::numeric);
  auto logit = [&](const std::string& text) {
    const auto got = extract_final_answer(text, "", AnswerKind::numeric);
    return got && gold && *got == *gold ? 1.0 : 0.0;
  };
  const std::string shuffled_out = answer_for({}, shuffled_prompt);
  if (!disables_copy(heads)) return {0.0, shuffled_out};
  // The copy heads carry the readout: substituting them from the ordered
  // run transplants the ordered answer.
  const std::string ordered_out = answer_for({}, ordered_prompt);
  return {logit(ordered_out) - logit(shuffled_out), ordered_out};
}

InductionScores SimBackend::do_induction_scores(int /*K*/, int /*N*/, std::uint64_t /*seed*/) {
  InductionScores out{HeadScoreMatrix(info_.layers, info_.query_heads, ScoreKind::prefix_match),
                      HeadScoreMatrix(info_.layers, info_.query_heads, ScoreKind::copy_score)};
  for (const auto& h : params_.copy_heads) {
    out.prefix_match.at(h) = 1.0;
    out.copy.at(h) = 1.0;
  }
  return out;
}

ModelInfo SimBackend::do_model_info() { return info_; }

}  // namespace cotprobe
