#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cotprobe/corpus.hpp"

namespace cotprobe {

/// Synthetic word problem with the ground truth the harness should recover.
struct FixtureItem {
  Problem problem;
  /// Gold is reachable by one operation over the operands of the last
  /// sentence that survives D_trunc.
  bool one_op_reachable = false;
  /// Operands of that sentence, in text order.
  std::vector<Decimal> last_operands;
};

struct FixtureOptions {
  std::size_t count = 100;
  std::uint64_t seed = 0;
  /// Share of items (in tenths) whose last retained sentence needs two
  /// operations to reach gold.
  int multi_step_tenths = 3;
  /// Prefix of generated item ids.
  std::string id_prefix = "fx";
};

/// Arithmetic word problems with 5-7 paragraph steps. Gold appears only in
/// the final step; every other numeral differs from it.
std::vector<FixtureItem> make_arithmetic_fixture(const FixtureOptions& options = {});

/// Short items of exactly seven whitespace tokens, small enough to
/// enumerate every token permutation.
std::vector<Problem> make_token_fixture(std::size_t count, std::uint64_t seed = 0);

/// Three-way multiple-choice items with letter answers and option-by-option
/// rationales.
std::vector<Problem> make_letter_fixture(std::size_t count, std::uint64_t seed = 0);

std::vector<Problem> problems_of(const std::vector<FixtureItem>& items);

/// Serialises problems in the generic_jsonl (numeric) or bbh_jsonl (letter)
/// layout accepted by load_dataset.
void write_dataset(std::ostream& out, const std::vector<Problem>& problems);
void write_dataset(const std::filesystem::path& path, const std::vector<Problem>& problems);

}  // namespace cotprobe
