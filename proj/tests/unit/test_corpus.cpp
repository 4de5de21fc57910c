#include "cotprobe/corpus.hpp"

#include <random>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"

using namespace cotprobe;

namespace {

Decimal dec(const char* s) { return *Decimal::parse(s); }

std::vector<std::string> span_texts(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& s : find_numeric_spans(text)) out.emplace_back(text.substr(s.range.begin, s.range.size()));
  return out;
}

}  // namespace

TEST_CASE("gsm8k records take gold from the terminal marker") {
  std::istringstream in(R"({"question":"q1","answer":"8 * 9 = <<8*9=72>>72\n#### 72"}
{"question":"q2","answer":"Sum is 1,234.\n#### 1,234"}
)");
  const auto ds = parse_dataset(in, DatasetFormat::gsm8k_jsonl);
  REQUIRE(ds.problems.size() == 2);
  CHECK(std::get<Decimal>(ds.problems[0].gold) == dec("72"));
  CHECK(std::get<Decimal>(ds.problems[1].gold) == dec("1234"));
  CHECK(ds.problems[0].reference_cot.find("<<") == std::string::npos);
  CHECK(ds.problems[0].reference_cot.find("####") == std::string::npos);
}

TEST_CASE("empty dataset file gives no problems") {
  std::istringstream in("");
  const auto ds = parse_dataset(in, DatasetFormat::generic_jsonl);
  CHECK(ds.problems.empty());
  CHECK(ds.errors.empty());
}

TEST_CASE("malformed lines are reported with their line numbers") {
  std::istringstream in(R"({"id":"a","question":"q","cot":"c 1.","gold":"1"}
not json
{"id":"b","question":"q"}
{"id":"c","question":"q","cot":"c","gold":"seven"}
{"id":"a","question":"q","cot":"c 2.","gold":"2"}
{"id":"d","question":"q","cot":"c 3.","gold":"3"}
)");
  const auto ds = parse_dataset(in, DatasetFormat::generic_jsonl);
  REQUIRE(ds.problems.size() == 2);
  CHECK(ds.problems[0].id == "a");
  CHECK(ds.problems[1].id == "d");
  REQUIRE(ds.errors.size() == 3);
  CHECK(ds.errors[0].line == 2);
  CHECK(ds.errors[1].line == 3);
  CHECK(ds.errors[2].line == 5);
  REQUIRE(ds.skipped.size() == 1);
  CHECK(ds.skipped[0].line == 4);
}

TEST_CASE("hand-built five record fixture with comma golds") {
  testutil::TempDir dir;
  testutil::write_text(dir.path() / "five.jsonl",
                       R"({"question":"a","answer":"x\n#### 1,234"}
{"question":"b","answer":"y\n#### 72"}
{"question":"c","answer":"z\n#### 10,000,000"}
{"question":"d","answer":"w\n#### -5"}
{"question":"e","answer":"v\n#### 3.50"}
)");
  const auto ds = load_dataset(dir.path() / "five.jsonl", DatasetFormat::gsm8k_jsonl);
  REQUIRE(ds.problems.size() == 5);
  const char* want[] = {"1234", "72", "10000000", "-5", "3.5"};
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::get<Decimal>(ds.problems[i].gold) == dec(want[i]));
  CHECK_THROWS_AS(load_dataset(dir.path() / "missing.jsonl", DatasetFormat::gsm8k_jsonl), std::runtime_error);
}

TEST_CASE("bbh records carry letter answers") {
  std::istringstream in(R"({"id":"m","question":"q","cot":"so (B).","gold_letter":"B"}
{"id":"n","question":"q","cot":"so (B).","gold_letter":"BB"}
)");
  const auto ds = parse_dataset(in, DatasetFormat::bbh_jsonl);
  REQUIRE(ds.problems.size() == 1);
  CHECK(std::get<char>(ds.problems[0].gold) == 'B');
  CHECK(ds.problems[0].answer_kind == AnswerKind::letter);
}

TEST_CASE("paragraph steps") {
  const auto t = parse_steps("A.\n\nB.\n\nC.");
  REQUIRE(t.steps.size() == 3);
  CHECK(t.steps[0] == "A.");
  CHECK(t.steps[2] == "C.");
  CHECK_FALSE(t.sentence_fallback);
}

TEST_CASE("sentence fallback when there are no paragraph breaks") {
  const auto t = parse_steps("A. B. C.");
  REQUIRE(t.steps.size() == 3);
  CHECK(t.sentence_fallback);
  CHECK(t.steps[1] == "B.");
}

TEST_CASE("single step traces are returned") {
  const auto t = parse_steps("Just one step");
  CHECK(t.steps.size() == 1);
}

TEST_CASE("steps and separators reconstruct the input byte for byte") {
  const char* inputs[] = {"A.\n\nB.\n\nC.", "A. B. C.", "  lead\n\n\nx\n \ny  ", "one", "Q? Yes! Then 3.5 apples.\nEnd",
                          "\n\n", "a\n\n\n\nb"};
  for (const char* s : inputs) {
    const auto t = parse_steps(s);
    CHECK(t.reconstruct() == s);
    CHECK(t.text == s);
  }
  std::mt19937_64 rng(3);
  const std::string alphabet = "ab 1.?!\n\t,";
  for (int i = 0; i < 500; ++i) {
    std::string s;
    const auto len = rng() % 60 + 1;
    for (std::size_t j = 0; j < len; ++j) s += alphabet[rng() % alphabet.size()];
    const auto t = parse_steps(s);
    CHECK(t.reconstruct() == s);
    for (std::size_t k = 0; k < t.steps.size(); ++k)
      CHECK(s.substr(t.boundaries[k].begin, t.boundaries[k].size()) == t.steps[k]);
  }
}

TEST_CASE("numeric spans") {
  CHECK(span_texts("buys 3 apples for $12.50") == std::vector<std::string>{"3", "12.50"});
  CHECK(find_numeric_spans("buys 3 apples for $12.50")[1].value == dec("12.5"));
  const auto id = find_numeric_spans("id A123B");
  REQUIRE(id.size() == 1);
  CHECK(id[0].value == dec("123"));
  CHECK(id[0].digit_bounded);
  CHECK(find_numeric_spans("").empty());
  CHECK(span_texts("total 1,234,567 units") == std::vector<std::string>{"1,234,567"});
  CHECK(span_texts("a -5 b 7-3") == std::vector<std::string>{"-5", "7", "3"});
  CHECK(span_texts("at 12:30 or 1/2") == std::vector<std::string>{"12", "30", "1", "2"});
  CHECK(span_texts("end 72.") == std::vector<std::string>{"72"});
}

TEST_CASE("hand-labelled numeral fixture") {
  struct Case {
    const char* text;
    std::vector<std::string> spans;
  };
  const std::vector<Case> cases{
      {"x1", {"1"}},
      {"A123B", {"123"}},
      {"3rd place", {"3"}},
      {"costs $4.", {"4"}},
      {"8x9=72", {"8", "9", "72"}},
      {"(15)", {"15"}},
      {"1,000 and 2,50", {"1,000", "2", "50"}},
      {"0.5 of 10", {"0.5", "10"}},
      {"-7 degrees", {"-7"}},
      {"x-7", {"7"}},
      {"version 2.0.1", {"2.0", "1"}},
      {"12%", {"12"}},
      {"3/4", {"3", "4"}},
      {"no numbers", {}},
      {"9am-5pm", {"9", "5"}},
      {"1e5", {"1", "5"}},
      {"#### 42", {"42"}},
      {"42,", {"42"}},
      {"2024-01-05", {"2024", "01", "05"}},
      {"a 007 b", {"007"}},
  };
  for (const auto& c : cases) {
    INFO(c.text);
    CHECK(span_texts(c.text) == c.spans);
    for (const auto& s : find_numeric_spans(c.text)) {
      CHECK(s.digit_bounded);
      CHECK(*Decimal::parse(std::string(c.text).substr(s.range.begin, s.range.size())) == s.value);
    }
  }
}

TEST_CASE("gold occurrences are value based and digit bounded") {
  auto t = parse_trace("a 8 b 9 c 72 d 72.", AnswerValue{dec("72")});
  CHECK(find_gold_occurrences(t, dec("72")) == std::vector<std::size_t>{2, 3});
  CHECK(t.answer_step_index.has_value());
  auto u = parse_steps("value 720 here");
  CHECK(find_gold_occurrences(u, dec("72")).empty());
  auto v = parse_steps("so 72 apples");
  CHECK(find_gold_occurrences(v, dec("72.0")).size() == 1);
  auto w = parse_steps("so 1,234 and 1234");
  CHECK(find_gold_occurrences(w, dec("1234")).size() == 2);
}

TEST_CASE("answer step is the last step holding gold") {
  const auto t = parse_trace("First 72.\n\nThen 5.\n\nSo 72 again.\n\nDone.", AnswerValue{dec("72")});
  REQUIRE(t.answer_step_index.has_value());
  CHECK(*t.answer_step_index == 2);
  const auto u = parse_trace("No gold here.\n\nNope.", AnswerValue{dec("72")});
  CHECK_FALSE(u.answer_step_index.has_value());
}

TEST_CASE("final answer extraction") {
  CHECK(std::get<Decimal>(*extract_final_answer(" 72\n", "####", AnswerKind::numeric)) == dec("72"));
  CHECK(std::get<Decimal>(*extract_final_answer(" 1,234 units", "####", AnswerKind::numeric)) == dec("1234"));
  CHECK_FALSE(extract_final_answer("I cannot solve", "####", AnswerKind::numeric).has_value());
  CHECK(std::get<Decimal>(*extract_final_answer("work 5 #### 9 #### 12", "####", AnswerKind::numeric)) == dec("12"));
  CHECK(std::get<char>(*extract_final_answer(" (B) is right", "####", AnswerKind::letter)) == 'B');
  CHECK(std::get<char>(*extract_final_answer(" B", "####", AnswerKind::letter)) == 'B');
  CHECK_FALSE(extract_final_answer(" Because", "####", AnswerKind::letter).has_value());
}

TEST_CASE("delimiter followed by a bare integer returns the integer") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto v = static_cast<std::int64_t>(rng() % 2000001) - 1000000;
    const auto got = extract_final_answer("#### " + std::to_string(v), "####", AnswerKind::numeric);
    REQUIRE(got.has_value());
    CHECK(std::get<Decimal>(*got) == Decimal::from_int(v));
  }
}

TEST_CASE("last chain of thought number is positional") {
  CHECK(*last_cot_number("...so 8x9=72.\n#### ", "####") == dec("72"));
  CHECK_FALSE(last_cot_number("no digits at all\n#### ", "####").has_value());
  CHECK(*last_cot_number("...72. Note: 45.\n#### ", "####") == dec("45"));
  CHECK(*last_cot_number("a 3 b 4", "####") == dec("4"));
}

TEST_CASE("gold detection is invariant under comma formatting") {
  const auto a = parse_steps("We get 12345 then 12345 more.");
  const auto b = parse_steps("We get 12,345 then 12345 more.");
  CHECK(find_gold_occurrences(a, dec("12345")) == find_gold_occurrences(b, dec("12345")));
}

TEST_CASE("operand sentence skips single-numeral claims") {
  const std::string text = "a=8. 8 x 9 = 72. Therefore, the answer is 72.";
  const auto r = last_operand_sentence(text);
  REQUIRE(r.has_value());
  CHECK(text.substr(r->begin, r->size()) == "8 x 9 = 72.");
  CHECK_FALSE(last_operand_sentence("a=8. b=9.").has_value());
}

TEST_CASE("scoring a record") {
  GenerationRecord rec;
  rec.gold = "72";
  rec.delimiter = "####";
  rec.prefix = "so 8x9=72.\n#### ";
  rec.output_text = " 72";
  rec.distractor_value = "45";
  score_record(rec);
  CHECK(rec.is_correct);
  CHECK(rec.matches_last_cot_number == true);
  CHECK(rec.matches_distractor == false);

  GenerationRecord miss = rec;
  miss.output_text = "no idea";
  score_record(miss);
  CHECK_FALSE(miss.is_correct);
  CHECK_FALSE(miss.extracted_answer.has_value());

  GenerationRecord plain = rec;
  plain.distractor_value.reset();
  score_record(plain);
  CHECK_FALSE(plain.matches_distractor.has_value());

  GenerationRecord free;
  free.gold = "72";
  free.delimiter = "####";
  free.output_text = "8 times 9 is 72.\n#### 72";
  score_record(free, true);
  CHECK(free.is_correct);
  CHECK(free.matches_last_cot_number == true);
}
