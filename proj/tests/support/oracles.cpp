#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

namespace oracle {

namespace mp = boost::multiprecision;

rational exact(double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("oracle::exact: non-finite");
  int e = 0;
  const double f = std::frexp(v, &e);
  const auto m = static_cast<std::int64_t>(std::ldexp(f, 64 - 11));
  rational r = rational(integer(m));
  const int shift = e - (64 - 11);
  if (shift >= 0)
    r *= rational(integer(1) << shift);
  else
    r /= rational(integer(1) << -shift);
  return r;
}

bool correctly_rounded(double v, const rational& x) {
  const double below = std::nextafter(v, -std::numeric_limits<double>::infinity());
  const double above = std::nextafter(v, std::numeric_limits<double>::infinity());
  const rational lo = (exact(below) + exact(v)) / 2;
  const rational hi = (exact(v) + exact(above)) / 2;
  return x >= lo && x <= hi;
}

double relative_error(double v, const real50& x) {
  const real50 d = mp::abs(real50(v) - x);
  if (x == 0) return static_cast<double>(d);
  return static_cast<double>(d / mp::abs(x));
}

integer factorial(std::int64_t n) {
  // Memoised table; the oracles ask for the same factorials repeatedly.
  static std::vector<integer> table{1};
  while (static_cast<std::int64_t>(table.size()) <= n)
    table.push_back(table.back() * static_cast<std::int64_t>(table.size()));
  return table[static_cast<std::size_t>(n)];
}

integer choose(std::int64_t n, std::int64_t k) {
  if (k < 0 || k > n) return 0;
  return factorial(n) / (factorial(k) * factorial(n - k));
}

Bounds wilson(std::int64_t k, std::int64_t n, double level) {
  const boost::math::normal_distribution<real50> nd;
  const real50 z = boost::math::quantile(nd, real50(1) - (real50(1) - real50(level)) / 2);
  const real50 nn = n;
  const real50 p = real50(k) / nn;
  const real50 z2 = z * z;
  const real50 centre = (p + z2 / (2 * nn)) / (1 + z2 / nn);
  const real50 half = z / (1 + z2 / nn) * mp::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn));
  return {centre - half, centre + half};
}

rational mcnemar(std::int64_t b, std::int64_t c) {
  const std::int64_t n = b + c;
  if (n == 0) return 1;
  integer tail = 0;
  for (std::int64_t i = 0; i <= std::min(b, c); ++i) tail += choose(n, i);
  const rational p = rational(2 * tail) / rational(integer(1) << n);
  return p > 1 ? rational(1) : p;
}

std::vector<rational> holm(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<rational> out(m);
  rational best = 0;
  for (std::size_t j = 0; j < m; ++j) {
    rational adj = rational(static_cast<std::int64_t>(m - j)) * exact(p[order[j]]);
    if (adj > 1) adj = 1;
    if (adj > best) best = adj;
    out[order[j]] = best;
  }
  return out;
}

rational binom_upper(std::int64_t k, std::int64_t n, double p0) {
  // Over the common denominator d^n, with p = a/d and q = (d - a)/d.
  const rational p = exact(p0);
  const integer a = mp::numerator(p);
  const integer d = mp::denominator(p);
  integer s = 0;
  for (std::int64_t i = std::max<std::int64_t>(k, 0); i <= n; ++i)
    s += choose(n, i) * mp::pow(a, static_cast<unsigned>(i)) * mp::pow(integer(d - a), static_cast<unsigned>(n - i));
  return rational(s, mp::pow(d, static_cast<unsigned>(n)));
}

rational hypergeom_upper(std::int64_t N, std::int64_t K, std::int64_t n, std::int64_t k) {
  rational s = 0;
  for (std::int64_t i = k; i <= std::min(K, n); ++i) s += rational(choose(K, i) * choose(N - K, n - i));
  return s / rational(choose(N, n));
}

rational gini(const std::vector<double>& values) {
  rational sum_abs = 0, total = 0;
  for (double a : values) {
    total += exact(a);
    for (double b : values) {
      const rational d = exact(a) - exact(b);
      sum_abs += d < 0 ? rational(-d) : d;
    }
  }
  const auto n = static_cast<std::int64_t>(values.size());
  // mean |xi - xj| = sum_abs / n^2; mean = total / n.
  return (sum_abs / rational(n * n)) / (2 * total / rational(n));
}

namespace {

// Twice the average rank: integers even under ties.
std::vector<std::int64_t> doubled_ranks(const std::vector<double>& xs) {
  std::vector<std::int64_t> r(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::int64_t less = 0, equal = 0;
    for (double y : xs) {
      if (y < xs[i]) ++less;
      if (y == xs[i]) ++equal;
    }
    // Positions less+1 .. less+equal share their mean.
    r[i] = 2 * less + equal + 1;
  }
  return r;
}

// n^2 times the centred cross-product sum of two doubled-rank vectors,
// n * sum(ab) - sum(a) * sum(b): an integer.
std::int64_t scaled_cross(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
  std::int64_t sab = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += a[i] * b[i];
    sa += a[i];
    sb += b[i];
  }
  return static_cast<std::int64_t>(a.size()) * sab - sa * sb;
}

}  // namespace

Spearman spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto rx = doubled_ranks(xs);
  const auto ry = doubled_ranks(ys);
  const std::int64_t sxy = scaled_cross(rx, ry);
  const std::int64_t sxx = scaled_cross(rx, rx);
  const std::int64_t syy = scaled_cross(ry, ry);
  Spearman out;
  if (sxx == 0 || syy == 0) {
    out.rho = 0;
    out.p = 1;
    return out;
  }
  out.rho = real50(sxy) / mp::sqrt(real50(sxx) * real50(syy));
  const std::int64_t observed = sxy < 0 ? -sxy : sxy;
  std::vector<std::size_t> perm(ys.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::int64_t total = 0, extreme = 0;
  std::vector<double> permuted(ys.size());
  do {
    for (std::size_t i = 0; i < perm.size(); ++i) permuted[i] = ys[perm[i]];
    const std::int64_t s = scaled_cross(rx, doubled_ranks(permuted));
    ++total;
    if ((s < 0 ? -s : s) >= observed) ++extreme;
  } while (std::next_permutation(perm.begin(), perm.end()));
  out.p = rational(extreme) / rational(total);
  return out;
}

}  // namespace oracle
