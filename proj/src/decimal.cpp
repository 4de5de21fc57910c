#include "cotprobe/decimal.hpp"

#include <algorithm>
#include <charconv>
#include <limits>

namespace cotprobe {

namespace {

using i128 = __int128;

constexpr int kMaxDigits = 18;

i128 pow10_128(int n) {
  i128 r = 1;
  for (int i = 0; i < n; ++i) r *= 10;
  return r;
}

bool fits_i64(i128 v) {
  return v >= std::numeric_limits<std::int64_t>::min() && v <= std::numeric_limits<std::int64_t>::max();
}

std::optional<Decimal> from_wide(i128 mantissa, int scale);

}  // namespace

Decimal::Decimal(std::int64_t mantissa, int scale) : mantissa_(mantissa), scale_(scale) { normalize(); }

void Decimal::normalize() {
  while (scale_ > 0 && mantissa_ % 10 == 0) {
    mantissa_ /= 10;
    --scale_;
  }
  if (mantissa_ == 0) scale_ = 0;
}

std::optional<Decimal> Decimal::parse(std::string_view text) {
  std::size_t i = 0;
  bool negative = false;
  if (i < text.size() && text[i] == '-') {
    negative = true;
    ++i;
  }
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  std::string digits;
  std::size_t run_start = i;
  while (i < text.size() && is_digit(text[i])) digits.push_back(text[i++]);
  if (i == run_start) return std::nullopt;
  while (i < text.size() && text[i] == ',') {
    if (i + 4 > text.size() || !is_digit(text[i + 1]) || !is_digit(text[i + 2]) || !is_digit(text[i + 3]))
      return std::nullopt;
    if (i + 4 < text.size() && is_digit(text[i + 4])) return std::nullopt;
    digits.append(text.substr(i + 1, 3));
    i += 4;
  }
  int scale = 0;
  if (i < text.size() && text[i] == '.') {
    ++i;
    std::size_t frac_start = i;
    while (i < text.size() && is_digit(text[i])) digits.push_back(text[i++]);
    if (i == frac_start) return std::nullopt;
    scale = static_cast<int>(i - frac_start);
  }
  if (i != text.size()) return std::nullopt;

  // Drop leading zeros, then trailing fractional zeros, before the length
  // check so "0.50" or "007" do not count against the digit budget.
  std::size_t lead = 0;
  while (digits[lead] == '0' && digits.size() - lead > static_cast<std::size_t>(scale) + 1) ++lead;
  digits.erase(0, lead);
  while (scale > 0 && digits.size() > 1 && digits.back() == '0') {
    digits.pop_back();
    --scale;
  }
  if (static_cast<int>(digits.size()) > kMaxDigits) return std::nullopt;
  std::int64_t m = 0;
  for (char c : digits) m = m * 10 + (c - '0');
  return Decimal(negative ? -m : m, scale);
}

std::optional<std::int64_t> Decimal::as_integer() const {
  if (scale_ != 0) return std::nullopt;
  return mantissa_;
}

int Decimal::integer_digits() const {
  i128 ip = mantissa_ < 0 ? -static_cast<i128>(mantissa_) : static_cast<i128>(mantissa_);
  ip /= pow10_128(scale_);
  int n = 1;
  while (ip >= 10) {
    ip /= 10;
    ++n;
  }
  return n;
}

std::string Decimal::to_string() const { return format(0, false); }

std::string Decimal::format(int min_fraction_digits, bool thousands) const {
  i128 mag = mantissa_ < 0 ? -static_cast<i128>(mantissa_) : static_cast<i128>(mantissa_);
  int scale = scale_;
  while (scale < min_fraction_digits) {
    mag *= 10;
    ++scale;
  }
  std::string raw;
  if (mag == 0) raw = "0";
  while (mag > 0) {
    raw.push_back(static_cast<char>('0' + static_cast<int>(mag % 10)));
    mag /= 10;
  }
  while (static_cast<int>(raw.size()) <= scale) raw.push_back('0');
  std::reverse(raw.begin(), raw.end());
  std::string int_part = raw.substr(0, raw.size() - static_cast<std::size_t>(scale));
  std::string frac_part = raw.substr(raw.size() - static_cast<std::size_t>(scale));
  if (thousands && int_part.size() > 3) {
    std::string grouped;
    std::size_t first = int_part.size() % 3;
    if (first == 0) first = 3;
    grouped.append(int_part, 0, first);
    for (std::size_t p = first; p < int_part.size(); p += 3) {
      grouped.push_back(',');
      grouped.append(int_part, p, 3);
    }
    int_part = std::move(grouped);
  }
  std::string out = mantissa_ < 0 ? "-" : "";
  out += int_part;
  if (!frac_part.empty()) {
    out.push_back('.');
    out += frac_part;
  }
  return out;
}

double Decimal::to_double() const {
  // Through the canonical string so the conversion is correctly rounded.
  const std::string s = to_string();
  double v = 0.0;
  std::from_chars(s.data(), s.data() + s.size(), v);
  return v;
}

std::strong_ordering operator<=>(const Decimal& a, const Decimal& b) {
  int scale = std::max(a.scale_, b.scale_);
  i128 am = static_cast<i128>(a.mantissa_) * pow10_128(scale - a.scale_);
  i128 bm = static_cast<i128>(b.mantissa_) * pow10_128(scale - b.scale_);
  if (am < bm) return std::strong_ordering::less;
  if (am > bm) return std::strong_ordering::greater;
  return std::strong_ordering::equal;
}

namespace {

std::optional<Decimal> from_wide(i128 mantissa, int scale) {
  while (scale > 0 && mantissa % 10 == 0) {
    mantissa /= 10;
    --scale;
  }
  while (scale < 0) {
    mantissa *= 10;
    ++scale;
    if (!fits_i64(mantissa)) return std::nullopt;
  }
  if (!fits_i64(mantissa) || scale > kMaxDigits) return std::nullopt;
  auto text = [&] {
    bool neg = mantissa < 0;
    i128 mag = neg ? -mantissa : mantissa;
    std::string digits;
    if (mag == 0) digits = "0";
    while (mag > 0) {
      digits.push_back(static_cast<char>('0' + static_cast<int>(mag % 10)));
      mag /= 10;
    }
    while (static_cast<int>(digits.size()) <= scale) digits.push_back('0');
    std::reverse(digits.begin(), digits.end());
    if (scale > 0) digits.insert(digits.size() - static_cast<std::size_t>(scale), ".");
    return (neg ? "-" : "") + digits;
  }();
  return Decimal::parse(text);
}

}  // namespace

std::optional<Decimal> checked_add(const Decimal& a, const Decimal& b) {
  int scale = std::max(a.scale_, b.scale_);
  i128 am = static_cast<i128>(a.mantissa_) * pow10_128(scale - a.scale_);
  i128 bm = static_cast<i128>(b.mantissa_) * pow10_128(scale - b.scale_);
  return from_wide(am + bm, scale);
}

std::optional<Decimal> checked_sub(const Decimal& a, const Decimal& b) { return checked_add(a, b.negated()); }

std::optional<Decimal> checked_mul(const Decimal& a, const Decimal& b) {
  return from_wide(static_cast<i128>(a.mantissa_) * static_cast<i128>(b.mantissa_), a.scale_ + b.scale_);
}

std::optional<Decimal> checked_div(const Decimal& a, const Decimal& b) {
  if (b.mantissa_ == 0) return std::nullopt;
  i128 num = a.mantissa_;
  const i128 den = b.mantissa_;
  for (int k = 0; k <= kMaxDigits; ++k) {
    if (num % den == 0) return from_wide(num / den, a.scale_ - b.scale_ + k);
    num *= 10;
    if (!fits_i64(num / 10) && k > 0) break;
  }
  return std::nullopt;
}

}  // namespace cotprobe
