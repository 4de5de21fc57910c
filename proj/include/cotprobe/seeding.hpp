#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace cotprobe {

using Sha256Digest = std::array<std::uint8_t, 32>;
using Md5Digest = std::array<std::uint8_t, 16>;

Sha256Digest sha256(std::string_view data);
Md5Digest md5(std::string_view data);
std::string to_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view data);

/// Per-(item, condition) randomness. All stochastic choices in the
/// perturbation generators are drawn from here; there is no global RNG.
///
/// outer_seed = SHA-256("<problem_index>|<condition_tag>")
/// draw i     = MD5("<label>|<outer_seed hex>|<i>")
///
/// where `label` is the numeral string being perturbed (or a fixed label
/// such as "perm|s2" for permutation draws) and i is the running draw
/// counter, so draws depend on the order in which they are requested.
struct SeedContext {
  std::int64_t problem_index = 0;
  std::string condition_tag;
  Sha256Digest outer_seed{};
  std::uint64_t draw_counter = 0;

  [[nodiscard]] std::string outer_hex() const { return to_hex(outer_seed); }

  Md5Digest next_draw(std::string_view label);

  /// Uniform integer in [0, bound) by rejection over successive draws.
  std::uint64_t next_below(std::string_view label, std::uint64_t bound);
};

SeedContext derive_seed(std::int64_t problem_index, std::string_view condition_tag);

/// First eight digest bytes, big-endian.
std::uint64_t digest_u64(const Md5Digest& d);

}  // namespace cotprobe
