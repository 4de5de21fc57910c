#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace cotprobe {

/// Exact base-10 number: mantissa * 10^-scale.
///
/// Values are kept normalized (no trailing zeros in the mantissa when
/// scale > 0), so structural equality is value equality: "72", "72.0" and
/// "72.00" all compare equal. Up to 18 significant digits are supported;
/// longer numerals fail to parse rather than losing precision.
class Decimal {
 public:
  Decimal() = default;

  static Decimal from_int(std::int64_t v) { return Decimal(v, 0); }

  /// Parses `[-]digits[,ddd]*[.digits]`. Commas are accepted only as
  /// thousands separators (groups of exactly three digits).
  static std::optional<Decimal> parse(std::string_view text);

  [[nodiscard]] std::int64_t mantissa() const { return mantissa_; }
  [[nodiscard]] int scale() const { return scale_; }

  [[nodiscard]] bool is_integer() const { return scale_ == 0; }
  [[nodiscard]] bool is_negative() const { return mantissa_ < 0; }
  [[nodiscard]] bool is_zero() const { return mantissa_ == 0; }
  [[nodiscard]] std::optional<std::int64_t> as_integer() const;

  /// Digits in the integer part of |value| ("0.5" has one).
  [[nodiscard]] int integer_digits() const;

  [[nodiscard]] Decimal abs() const { return Decimal(mantissa_ < 0 ? -mantissa_ : mantissa_, scale_); }
  [[nodiscard]] Decimal negated() const { return Decimal(-mantissa_, scale_); }

  /// Canonical rendering: no commas, no trailing fractional zeros.
  [[nodiscard]] std::string to_string() const;

  /// Renders with at least `min_fraction_digits` fractional digits and,
  /// optionally, thousands separators. Used to keep replacement numerals in
  /// the same surface format as the numeral they replace.
  [[nodiscard]] std::string format(int min_fraction_digits, bool thousands) const;

  [[nodiscard]] double to_double() const;

  friend bool operator==(const Decimal&, const Decimal&) = default;
  friend std::strong_ordering operator<=>(const Decimal& a, const Decimal& b);

  // Checked arithmetic; nullopt on int64 overflow (or division that does
  // not terminate within 18 digits).
  friend std::optional<Decimal> checked_add(const Decimal& a, const Decimal& b);
  friend std::optional<Decimal> checked_sub(const Decimal& a, const Decimal& b);
  friend std::optional<Decimal> checked_mul(const Decimal& a, const Decimal& b);
  friend std::optional<Decimal> checked_div(const Decimal& a, const Decimal& b);

 private:
  Decimal(std::int64_t mantissa, int scale);
  void normalize();

  std::int64_t mantissa_ = 0;
  int scale_ = 0;
};

std::optional<Decimal> checked_add(const Decimal& a, const Decimal& b);
std::optional<Decimal> checked_sub(const Decimal& a, const Decimal& b);
std::optional<Decimal> checked_mul(const Decimal& a, const Decimal& b);
std::optional<Decimal> checked_div(const Decimal& a, const Decimal& b);

}  // namespace cotprobe
