#include "cotprobe/seeding.hpp"

#include <openssl/evp.h>

#include <limits>
#include <memory>
#include <stdexcept>

namespace cotprobe {

namespace {

template <std::size_t N>
std::array<std::uint8_t, N> evp_digest(const EVP_MD* md, std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  std::array<std::uint8_t, N> out{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), md, nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1 || len != N)
    throw std::runtime_error("digest computation failed");
  return out;
}

}  // namespace

Sha256Digest sha256(std::string_view data) { return evp_digest<32>(EVP_sha256(), data); }

Md5Digest md5(std::string_view data) { return evp_digest<16>(EVP_md5(), data); }

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xf]);
  }
  return out;
}

std::string sha256_hex(std::string_view data) { return to_hex(sha256(data)); }

Md5Digest SeedContext::next_draw(std::string_view label) {
  std::string msg;
  msg.reserve(label.size() + 64 + 24);
  msg.append(label);
  msg.push_back('|');
  msg.append(outer_hex());
  msg.push_back('|');
  msg.append(std::to_string(draw_counter++));
  return md5(msg);
}

std::uint64_t SeedContext::next_below(std::string_view label, std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("next_below: bound must be positive");
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = kMax - (kMax % bound + 1) % bound;
  for (;;) {
    const std::uint64_t u = digest_u64(next_draw(label));
    if (u <= limit) return u % bound;
  }
}

SeedContext derive_seed(std::int64_t problem_index, std::string_view condition_tag) {
  SeedContext ctx;
  ctx.problem_index = problem_index;
  ctx.condition_tag = std::string(condition_tag);
  ctx.outer_seed = sha256(std::to_string(problem_index) + "|" + std::string(condition_tag));
  return ctx;
}

std::uint64_t digest_u64(const Md5Digest& d) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | d[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace cotprobe
