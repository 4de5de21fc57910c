#include "cotprobe/fixtures.hpp"

#include <array>
#include <fstream>
#include <ostream>
#include <set>
#include <stdexcept>

#include "cotprobe/seeding.hpp"
#include "cotprobe/simbots.hpp"
#include "json.hpp"

namespace cotprobe {

namespace {

constexpr std::array kNames{"Ava",  "Ben",   "Chloe", "Dev",  "Elena", "Farid", "Grace", "Hugo",
                            "Iris", "Jonah", "Keiko", "Liam", "Maya",  "Nikos", "Omar",  "Priya"};
constexpr std::array kObjects{"apples", "pencils", "marbles", "stickers", "cookies", "shells", "cards", "beads"};

// Uniform integer in [lo, hi] from the item's seed stream.
std::int64_t draw(SeedContext& ctx, std::string_view label, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(ctx.next_below(label, static_cast<std::uint64_t>(hi - lo + 1)));
}

std::string num(std::int64_t v) { return std::to_string(v); }

struct Draft {
  std::string question;
  std::vector<std::string> steps;
  std::int64_t gold = 0;
  bool one_op = false;
  std::vector<std::int64_t> operands;
  std::vector<std::int64_t> others;  // every numeral except the final answer
};

bool op_reaches(std::int64_t x, std::int64_t y, std::int64_t target) {
  if (x + y == target || x - y == target || y - x == target || x * y == target) return true;
  if (y != 0 && x % y == 0 && x / y == target) return true;
  if (x != 0 && y % x == 0 && y / x == target) return true;
  return false;
}

Draft draft_item(SeedContext& ctx, bool multi) {
  Draft d;
  const std::string name = kNames[static_cast<std::size_t>(draw(ctx, "name", 0, kNames.size() - 1))];
  const std::string obj = kObjects[static_cast<std::size_t>(draw(ctx, "object", 0, kObjects.size() - 1))];
  const auto a = draw(ctx, "a", 3, 12);
  const auto b = draw(ctx, "b", 4, 15);
  const auto p = a * b;

  d.steps.push_back(name + " buys " + num(a) + " boxes of " + obj + " at the market. Each box holds " + num(b) + " " +
                    obj + ".");
  d.steps.push_back("So " + name + " has " + num(a) + " * " + num(b) + " = " + num(p) + " " + obj + " in total.");
  d.others = {a, b, p};

  const auto fillers = draw(ctx, "fillers", 1, 3);
  std::array<int, 3> kinds{0, 1, 2};
  for (std::size_t i = 2; i > 0; --i) std::swap(kinds[i], kinds[static_cast<std::size_t>(draw(ctx, "filler-order", 0, static_cast<std::int64_t>(i)))]);
  for (std::int64_t f = 0; f < fillers; ++f) {
    switch (kinds[static_cast<std::size_t>(f)]) {
      case 0: {
        const auto cost = draw(ctx, "cost", 2, 9);
        d.steps.push_back("Each box costs $" + num(cost) + ", so " + name + " spends " + num(a) + " * " + num(cost) +
                          " = " + num(a * cost) + " dollars.");
        d.others.insert(d.others.end(), {cost, a * cost});
        break;
      }
      case 1: {
        const auto days = draw(ctx, "days", 2, 9);
        d.steps.push_back("The market stays open for " + num(days) + " days.");
        d.others.push_back(days);
        break;
      }
      default: {
        const auto blocks = draw(ctx, "blocks", 3, 20);
        d.steps.push_back(name + " walks " + num(blocks) + " blocks to get home.");
        d.others.push_back(blocks);
        break;
      }
    }
  }

  if (!multi) {
    const auto c = draw(ctx, "give", 1, p - 1);
    d.gold = p - c;
    d.steps.push_back("Then " + name + " gives " + num(c) + " of the " + num(p) + " " + obj + " to a friend.");
    d.steps.push_back("Now " + name + " has " + num(p) + " - " + num(c) + " = " + num(d.gold) + " " + obj + " left.");
    d.others.push_back(c);
    d.operands = {c, p};
    d.one_op = true;
    d.question = name + " buys " + num(a) + " boxes of " + obj + " with " + num(b) + " in each box and gives " + num(c) +
                 " away. How many " + obj + " are left?";
  } else {
    const auto k = draw(ctx, "friends", 2, 4);
    const auto c = draw(ctx, "each", 1, std::max<std::int64_t>(1, (p - 1) / k));
    const auto g1 = c * k;
    d.gold = p - g1;
    d.steps.push_back("Then " + name + " gives " + num(c) + " " + obj + " to each of " + num(k) + " friends.");
    d.steps.push_back("That is " + num(c) + " * " + num(k) + " = " + num(g1) + " " + obj + ", so " + name + " has " +
                      num(p) + " - " + num(g1) + " = " + num(d.gold) + " " + obj + " left.");
    d.others.insert(d.others.end(), {c, k, g1});
    d.operands = {c, k};
    d.one_op = op_reaches(c, k, d.gold);
    d.question = name + " buys " + num(a) + " boxes of " + obj + " with " + num(b) + " in each box and gives " + num(c) +
                 " to each of " + num(k) + " friends. How many " + obj + " are left?";
  }
  return d;
}

bool acceptable(const Draft& d, bool multi) {
  if (d.gold < 1) return false;
  for (auto v : d.others)
    if (v == d.gold) return false;
  // Multi-step items must really need the second operation.
  return !multi || !d.one_op;
}

}  // namespace

std::vector<FixtureItem> make_arithmetic_fixture(const FixtureOptions& options) {
  std::vector<FixtureItem> out;
  std::set<std::string> questions;
  const std::string tag = "fixture@s" + std::to_string(options.seed);
  for (std::size_t i = 0; i < options.count; ++i) {
    auto ctx = derive_seed(static_cast<std::int64_t>(i), tag);
    const bool multi = static_cast<int>(ctx.next_below("kind", 10)) < options.multi_step_tenths;
    Draft d;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw std::runtime_error("fixture generator could not place item " + std::to_string(i));
      d = draft_item(ctx, multi);
      if (acceptable(d, multi) && questions.count(d.question) == 0) break;
    }
    questions.insert(d.question);

    FixtureItem item;
    item.problem.id = options.id_prefix + "-" + std::to_string(i);
    item.problem.question = d.question;
    item.problem.gold = Decimal::from_int(d.gold);
    item.problem.answer_kind = AnswerKind::numeric;
    for (std::size_t s = 0; s < d.steps.size(); ++s) {
      if (s > 0) item.problem.reference_cot += "\n\n";
      item.problem.reference_cot += d.steps[s];
    }
    item.one_op_reachable = d.one_op;
    for (auto v : d.operands) item.last_operands.push_back(Decimal::from_int(v));
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<Problem> make_token_fixture(std::size_t count, std::uint64_t seed) {
  std::vector<Problem> out;
  const std::string tag = "token-fixture@s" + std::to_string(seed);
  for (std::size_t i = 0; i < count; ++i) {
    auto ctx = derive_seed(static_cast<std::int64_t>(i), tag);
    const auto x = draw(ctx, "x", 2, 40);
    const auto y = draw(ctx, "y", 2, 40);
    Problem p;
    p.id = "tok-" + std::to_string(i);
    p.answer_kind = AnswerKind::numeric;
    switch (ctx.next_below("template", 3)) {
      case 0:
        p.question = "What is " + num(x) + " plus " + num(y) + "? (case " + num(static_cast<std::int64_t>(i)) + ")";
        p.reference_cot = "Add " + num(x) + " + " + num(y) + " = " + num(x + y) + ".\n\nDone.";
        p.gold = Decimal::from_int(x + y);
        break;
      case 1:
        p.question = "What is " + num(x) + " times " + num(y) + "? (case " + num(static_cast<std::int64_t>(i)) + ")";
        p.reference_cot = "Multiply: " + num(x) + " * " + num(y) + " = " + num(x * y) + ".\n\nDone.";
        p.gold = Decimal::from_int(x * y);
        break;
      default: {
        const auto total = x + y + 10;
        p.question = "What is " + num(total) + " minus " + num(x) + "? (case " + num(static_cast<std::int64_t>(i)) + ")";
        p.reference_cot = "Take " + num(total) + " - " + num(x) + " = " + num(total - x) + ".\n\nDone.";
        p.gold = Decimal::from_int(total - x);
        break;
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Problem> make_letter_fixture(std::size_t count, std::uint64_t seed) {
  static constexpr std::array kSubjects{"the red box", "the blue jar", "the green bag", "the old chest",
                                        "the small crate", "the tall vase"};
  std::vector<Problem> out;
  const std::string tag = "letter-fixture@s" + std::to_string(seed);
  for (std::size_t i = 0; i < count; ++i) {
    auto ctx = derive_seed(static_cast<std::int64_t>(i), tag);
    const char gold = static_cast<char>('A' + ctx.next_below("gold", 3));
    std::vector<char> wrong;
    for (char c : {'A', 'B', 'C'})
      if (c != gold) wrong.push_back(c);
    if (ctx.next_below("order", 2) == 1) std::swap(wrong[0], wrong[1]);
    const std::string subject = kSubjects[ctx.next_below("subject", kSubjects.size())];

    Problem p;
    p.id = "mcq-" + std::to_string(i);
    p.answer_kind = AnswerKind::letter;
    p.question = "Which option holds the key in puzzle " + std::to_string(i) + "? Options: (A) " + subject +
                 " (B) the drawer (C) the shelf";
    p.reference_cot = std::string("Option (") + wrong[0] + ") is ruled out by the first clue.\n\nOption (" + wrong[1] +
                      ") contradicts the second clue.\n\nOnly option (" + gold + ") fits both clues, so the answer is (" +
                      gold + ").";
    p.gold = gold;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Problem> problems_of(const std::vector<FixtureItem>& items) {
  std::vector<Problem> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(item.problem);
  return out;
}

void write_dataset(std::ostream& out, const std::vector<Problem>& problems) {
  for (const auto& p : problems) {
    nlohmann::json j;
    j["id"] = p.id;
    j["question"] = p.question;
    j["cot"] = p.reference_cot;
    if (p.answer_kind == AnswerKind::letter)
      j["gold_letter"] = answer_to_string(p.gold);
    else
      j["gold"] = answer_to_string(p.gold);
    out << j.dump() << '\n';
  }
}

void write_dataset(const std::filesystem::path& path, const std::vector<Problem>& problems) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_dataset(out, problems);
}

}  // namespace cotprobe
