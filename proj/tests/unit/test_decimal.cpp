#include "cotprobe/decimal.hpp"

#include <random>

#include "doctest.h"

using cotprobe::Decimal;

TEST_CASE("decimal parsing normalises trailing zeros") {
  CHECK(*Decimal::parse("72") == *Decimal::parse("72.0"));
  CHECK(*Decimal::parse("72.00") == Decimal::from_int(72));
  CHECK(Decimal::parse("12.50")->to_string() == "12.5");
  CHECK(Decimal::parse("-3")->is_negative());
}

TEST_CASE("thousands separators must form groups of three") {
  CHECK(*Decimal::parse("1,234") == Decimal::from_int(1234));
  CHECK(*Decimal::parse("1,234,567.5") == *Decimal::parse("1234567.5"));
  CHECK_FALSE(Decimal::parse("1,23").has_value());
  CHECK_FALSE(Decimal::parse("12,3456").has_value());
  CHECK_FALSE(Decimal::parse("").has_value());
  CHECK_FALSE(Decimal::parse("abc").has_value());
  CHECK_FALSE(Decimal::parse("1.").has_value());
}

TEST_CASE("more than eighteen significant digits is rejected") {
  CHECK(Decimal::parse("123456789012345678").has_value());
  CHECK_FALSE(Decimal::parse("12345678901234567890").has_value());
}

TEST_CASE("formatting keeps the surface form") {
  const auto v = *Decimal::parse("1234.5");
  CHECK(v.format(2, true) == "1,234.50");
  CHECK(v.format(0, false) == "1234.5");
  CHECK(Decimal::from_int(-1234567).format(0, true) == "-1,234,567");
}

TEST_CASE("ordering and integer helpers") {
  CHECK(*Decimal::parse("0.5") < Decimal::from_int(1));
  CHECK(*Decimal::parse("-2.5") < *Decimal::parse("-2"));
  CHECK(Decimal::parse("0.5")->integer_digits() == 1);
  CHECK(Decimal::from_int(72).integer_digits() == 2);
  CHECK(Decimal::parse("7.5")->as_integer() == std::nullopt);
  CHECK(Decimal::from_int(-40).as_integer() == -40);
}

TEST_CASE("checked arithmetic") {
  const auto a = *Decimal::parse("1.5");
  const auto b = *Decimal::parse("0.25");
  CHECK(checked_add(a, b)->to_string() == "1.75");
  CHECK(checked_sub(b, a)->to_string() == "-1.25");
  CHECK(checked_mul(a, b)->to_string() == "0.375");
  CHECK(checked_div(Decimal::from_int(10), Decimal::from_int(4))->to_string() == "2.5");
  CHECK_FALSE(checked_div(Decimal::from_int(1), Decimal::from_int(3)).has_value());
  CHECK_FALSE(checked_div(Decimal::from_int(1), Decimal::from_int(0)).has_value());
  const auto big = *Decimal::parse("900000000000000000");
  CHECK_FALSE(checked_mul(big, Decimal::from_int(100)).has_value());
}

TEST_CASE("rendering round-trips through parsing") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    const auto m = static_cast<std::int64_t>(rng() % 2000000001) - 1000000000;
    const int scale = static_cast<int>(rng() % 5);
    std::string s = std::to_string(m < 0 ? -m : m);
    if (scale > 0) {
      while (static_cast<int>(s.size()) <= scale) s.insert(0, "0");
      s.insert(s.size() - static_cast<std::size_t>(scale), ".");
    }
    if (m < 0) s.insert(0, "-");
    const auto v = Decimal::parse(s);
    REQUIRE(v.has_value());
    CHECK(*Decimal::parse(v->to_string()) == *v);
    CHECK(*Decimal::parse(v->format(0, true)) == *v);
  }
}
