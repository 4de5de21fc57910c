#pragma once

// Reference implementations for the statistics module. They share no code
// with the library: exact rationals where the quantity is rational, 50-digit
// decimal floats where it is not.

#include <cstdint>
#include <vector>

#include <boost/multiprecision/cpp_dec_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

namespace oracle {

using rational = boost::multiprecision::cpp_rational;
using integer = boost::multiprecision::cpp_int;
using real50 = boost::multiprecision::cpp_dec_float_50;

/// The exact value of a finite double.
rational exact(double v);

/// True when `v` is the double nearest to `x` (ties either way).
bool correctly_rounded(double v, const rational& x);

/// |v - x| / |x|, or |v| when x is zero.
double relative_error(double v, const real50& x);

integer factorial(std::int64_t n);
integer choose(std::int64_t n, std::int64_t k);

struct Bounds {
  real50 low;
  real50 high;
};

/// Wilson score interval from the textbook formula at 50 digits.
Bounds wilson(std::int64_t k, std::int64_t n, double level = 0.95);

/// Two-sided exact McNemar p on discordant counts.
rational mcnemar(std::int64_t b, std::int64_t c);

/// Holm adjustment in exact arithmetic over the inputs' exact values.
std::vector<rational> holm(const std::vector<double>& p);

/// P(X >= k), X ~ Binom(n, p0), p0 taken at its exact double value.
rational binom_upper(std::int64_t k, std::int64_t n, double p0);

/// P(X >= k) for the hypergeometric law, from factorials.
rational hypergeom_upper(std::int64_t N, std::int64_t K, std::int64_t n, std::int64_t k);

/// Mean absolute difference over all ordered pairs, over twice the mean.
rational gini(const std::vector<double>& values);

struct Spearman {
  real50 rho;
  rational p;
};

/// Rank correlation with the two-sided permutation p, by permuting the
/// y values themselves and recomputing every statistic from scratch.
Spearman spearman(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace oracle
