#include "cotprobe/simbots.hpp"

#include <numeric>

#include "cotprobe/fixtures.hpp"
#include "cotprobe/perturb.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cotprobe;

namespace {

Decimal dec(const char* s) { return *Decimal::parse(s); }

// Independent depth-1 check: every ordered pair of distinct positions under
// the four operations, with exact division only.
bool one_op_brute_force(const std::vector<Decimal>& xs, const Decimal& target) {
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < xs.size(); ++j) {
      if (i == j) continue;
      const auto a = xs[i].to_string(), b = xs[j].to_string();
      const long double x = std::stold(a), y = std::stold(b);
      const long double t = std::stold(target.to_string());
      if (x + y == t || x - y == t || x * y == t) return true;
      if (y != 0 && x == t * y) return true;
    }
  return false;
}

std::vector<Decimal> ints(std::initializer_list<int> xs) {
  std::vector<Decimal> out;
  for (int x : xs) out.push_back(Decimal::from_int(x));
  return out;
}

}  // namespace

TEST_CASE("copybot examples") {
  CHECK(copybot("a=8. b=9. 8×9=72.\n#### ") == " 72");
  CHECK(copybot("a=8. b=9. 8×9=72. Therefore, the answer is 45.\n#### ") == " 45");
  CHECK(copybot("a=8. b=9. 8×9=72. Note: 45.\n#### ") == " 72");
  CHECK(copybot("Just words.\n#### ").empty());
  CHECK(copybot("#### ").empty());
  CHECK(copybot("So 8 x 9 = 72. We then count 3 boxes.\n#### ") == " 72");
  CHECK(copybot("But wait, actually it should be 45.\n#### ") == " 45");
}

TEST_CASE("computebot examples") {
  CHECK(computebot("a=8. b=9.\n#### ", dec("72")) == " 72");
  CHECK(computebot("No numbers here.\n#### ", dec("72")).empty());
  CHECK(computebot("#### ", dec("72")).empty());
  const std::string clean = "Tom has 8 bags with 9 apples each.\n#### ";
  const std::string with_distractor = "Tom has 8 bags with 9 apples each. Therefore, the answer is 45.\n#### ";
  CHECK(computebot(clean, dec("72")) == " 72");
  CHECK(computebot(with_distractor, dec("72")) == computebot(clean, dec("72")));
  CHECK(computebot(clean, dec("17")) == " 17");
  CHECK(computebot(clean, dec("5")) == " 72");
  CHECK(computebot(clean, std::nullopt) == " 72");
}

TEST_CASE("computebot depth limit") {
  const std::string p = "Numbers 2 3 4 here.\n#### ";
  CHECK(computebot(p, dec("20"), 1) == " 6");
  CHECK(computebot(p, dec("20"), 2) == " 20");
  CHECK(reachable(ints({2, 3, 4}), dec("20"), 2));
  CHECK_FALSE(reachable(ints({2, 3, 4}), dec("20"), 1));
  CHECK_FALSE(reachable(ints({2, 3, 4}), dec("100"), 3));
  CHECK(reachable(ints({8, 2}), dec("4"), 1));
  CHECK_FALSE(reachable(ints({7, 2}), dec("3"), 1));
  CHECK_FALSE(reachable(ints({5}), dec("5"), 1));
}

TEST_CASE("one-op reachability matches brute force") {
  std::uint64_t state = 12345;
  auto next = [&] {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return static_cast<int>((state >> 33) % 40);
  };
  for (int trial = 0; trial < 3000; ++trial) {
    std::vector<Decimal> xs;
    const int n = 2 + next() % 3;
    for (int i = 0; i < n; ++i) xs.push_back(Decimal::from_int(next() - 5));
    const auto target = Decimal::from_int(next() * (trial % 3 == 0 ? 3 : 1));
    CHECK(reachable(xs, target, 1) == one_op_brute_force(xs, target));
  }
}

TEST_CASE("gatebot examples") {
  const std::set<Decimal> known{dec("8"), dec("9"), dec("72")};
  const std::string novel = "a=8. b=9. 8×9=72. Therefore, the answer is 45.\n#### ";
  CHECK(gatebot(novel, &known) == " 72");
  const std::string dup = "a=8. b=9. 8×9=72. Therefore, the answer is 9.\n#### ";
  CHECK(gatebot(dup, &known) == " 9");
  const std::string clean = "a=8. b=9. 8×9=72.\n#### ";
  CHECK(gatebot(clean, &known) == copybot(clean));
  CHECK(gatebot(novel, nullptr) == copybot(novel));
}

TEST_CASE("simbot invariants over the fixture distractor suite") {
  const auto& fixture = testutil::arithmetic100();
  const auto params = params_from_problems(problems_of(fixture));
  const auto items = prepare_items(problems_of(fixture), fixture.size());
  for (const auto& item : items) {
    const auto& known = params.known_values.at(item.problem.question);
    const auto& gold = *item.problem.numeric_gold();
    const auto clean = assemble_prefix(item.trace.text, kDefaultDelimiter);
    for (auto kind : {DistractorKind::C1_adjacent, DistractorKind::C2_random, DistractorKind::C3_gold_dup,
                      DistractorKind::intermediate_result}) {
      for (auto framing : {Framing::F1_template, Framing::F2_bare, Framing::F3_note, Framing::F4_inline}) {
        const auto p = gen_distractor(item.problem.id, item.trace, item.problem.gold, kind, framing, "####",
                                      derive_seed(static_cast<std::int64_t>(item.index), distractor_value_tag(kind)));
        if (p.excluded()) continue;
        const auto d = dec(p.meta.distractor_value->c_str());
        const auto out = copybot(p.text);
        if (framing == Framing::F1_template || framing == Framing::F4_inline) {
          const auto got = extract_final_answer(out, "####", AnswerKind::numeric);
          REQUIRE(got.has_value());
          CHECK(std::get<Decimal>(*got) == d);
        }
        CHECK(computebot(p.text, gold) == computebot(clean, gold));
        const auto choice = copybot_choice(p.text);
        if (choice && known.count(choice->value) > 0) CHECK(gatebot(p.text, &known) == out);
      }
    }
  }
}

TEST_CASE("tokenizer keeps every character") {
  for (const std::string text : {"", "a", "  lead", "a b  c\n\nd ", "trail   ", "\n"}) {
    const auto toks = SimBackend::whitespace_tokenize(text);
    CHECK(std::accumulate(toks.begin(), toks.end(), std::string{}) == text);
  }
  CHECK(SimBackend::whitespace_tokenize("  a b") == std::vector<std::string>{"  ", "a ", "b"});
}

TEST_CASE("backend generation") {
  const auto& fixture = testutil::arithmetic100();
  SimBackend bot(SimbotKind::copybot, params_from_problems(problems_of(fixture)));
  const auto& prob = fixture.front().problem;
  GenerateRequest req{prob.question, assemble_prefix(prob.reference_cot, "####"), 32, {}, std::nullopt};
  CHECK(bot.generate(req) == " " + prob.numeric_gold()->to_string());

  GenerateRequest free_req{prob.question, "", kFreeGenerationTokens, {}, std::nullopt};
  const auto text = bot.generate(free_req);
  CHECK(text.rfind(prob.reference_cot.substr(0, 10), 0) == 0);
  const auto answer = extract_final_answer(text, "####", AnswerKind::numeric);
  REQUIRE(answer.has_value());
  CHECK(std::get<Decimal>(*answer) == *prob.numeric_gold());

  GenerateRequest unknown{"unseen question", "", 64, {}, std::nullopt};
  CHECK(bot.generate(unknown).empty());
  free_req.max_new_tokens = 3;
  CHECK(SimBackend::whitespace_tokenize(bot.generate(free_req)).size() == 3);
  CHECK(bot.generation_calls() == 4);
}

TEST_CASE("letter answers") {
  SimBackend bot(SimbotKind::copybot);
  GenerateRequest req{"q", "(A) is wrong. (C) looks right.\nSo the answer is:", 8, {}, std::nullopt};
  req.injected_prefix = "(A) is wrong. (C) looks right.\n#### ";
  CHECK(bot.generate(req) == " C");
  CHECK(letter_choice("no options\n#### ") == std::nullopt);
}

TEST_CASE("mechanistic stubs") {
  SimbotParams params;
  params.copy_heads = {{0, 0}, {2, 3}};
  params.copy_disable_threshold = 2;
  SimBackend bot(SimbotKind::copybot, params);
  const std::string prompt = "a 8 b 9 so 8 x 9 = 72.\n#### ";
  const auto gold_at = prompt.find("72");

  const auto mass = bot.attention_mass({{prompt, {{gold_at, gold_at + 2}}}});
  CHECK(mass.items_used == 1);
  CHECK(mass.scores.at({0, 0}) == 1.0);
  CHECK(mass.scores.at({2, 3}) == 1.0);
  for (std::size_t i = 0; i < mass.scores.size(); ++i) {
    const auto h = mass.scores.head_at(i);
    if (h != HeadId{0, 0} && h != HeadId{2, 3}) CHECK(mass.scores.scores[i] == 0.0);
  }
  const auto skipped = bot.attention_mass({{prompt, {}}});
  CHECK(skipped.items_skipped == 1);

  GenerateRequest req{"q", prompt, 8, {}, std::nullopt};
  CHECK(bot.generate_with_intervention(req, {InterventionKind::zero_ablate, {{0, 0}}, std::nullopt}) == " 72");
  CHECK(bot.generate_with_intervention(req, {InterventionKind::zero_ablate, {{0, 0}, {2, 3}}, std::nullopt}).empty());
  CHECK(bot.generate_with_intervention(req, {InterventionKind::zero_ablate, {{1, 1}, {3, 7}}, std::nullopt}) == " 72");

  const std::string shuffled = "so x 72 = 8 9. 8 b a 9\n#### ";
  const auto none = bot.patch_and_score(prompt, shuffled, {{1, 1}}, "72");
  CHECK(none.logit_delta == 0.0);
  const auto patched = bot.patch_and_score(prompt, shuffled, {{0, 0}, {2, 3}}, "72");
  CHECK(patched.text == " 72");
  CHECK(patched.logit_delta == (copybot(shuffled) == " 72" ? 0.0 : 1.0));
  const auto same = bot.patch_and_score(prompt, prompt, {{0, 0}, {2, 3}}, "72");
  CHECK(same.logit_delta == 0.0);

  const auto ind = bot.induction_scores(5, 10, 0);
  CHECK(ind.prefix_match.at({0, 0}) == 1.0);
  CHECK(ind.copy.at({2, 3}) == 1.0);
  CHECK(ind.copy.at({1, 1}) == 0.0);

  CHECK_THROWS_AS(SimBackend(SimbotKind::copybot, SimbotParams{{}, {}, {}, 1, {{9, 9}}, 1, "####"}),
                  std::invalid_argument);
}

TEST_CASE("computebot ignores interventions") {
  SimBackend bot(SimbotKind::computebot);
  GenerateRequest req{"q", "Tom has 8 bags with 9 apples each.\n#### ", 8, {}, std::nullopt};
  CHECK(bot.generate_with_intervention(req, {InterventionKind::zero_ablate, {{0, 0}}, std::nullopt}) ==
        bot.generate(req));
}

TEST_CASE("kind names") {
  for (auto k : {SimbotKind::copybot, SimbotKind::computebot, SimbotKind::gatebot})
    CHECK(simbot_kind_from_string(to_string(k)) == k);
  CHECK_FALSE(simbot_kind_from_string("bot").has_value());
}
