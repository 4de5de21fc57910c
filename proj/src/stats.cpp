#include "cotprobe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <boost/multiprecision/cpp_int.hpp>

namespace cotprobe::stats {

namespace {

using ld = long double;
using big = boost::multiprecision::cpp_int;

// Above this size probabilities are summed in log space; at or below it
// they are exact rationals rounded once.
constexpr std::int64_t kExactLimit = 1000;

// num / den, correctly rounded (ties to even). Both positive.
double ratio_to_double(const big& num, const big& den) {
  if (num == 0) return 0.0;
  const auto nb = static_cast<long>(boost::multiprecision::msb(num));
  const auto db = static_cast<long>(boost::multiprecision::msb(den));
  // Shift so the quotient carries at least 55 significant bits.
  const long shift = db - nb + 55;
  big q, r;
  if (shift >= 0)
    boost::multiprecision::divide_qr(big(num << static_cast<unsigned>(shift)), den, q, r);
  else
    boost::multiprecision::divide_qr(num, big(den << static_cast<unsigned>(-shift)), q, r);
  const long qbits = static_cast<long>(boost::multiprecision::msb(q)) + 1;
  const long drop = qbits - 53;
  big mant = q >> static_cast<unsigned>(drop);
  const big rest = q - (mant << static_cast<unsigned>(drop));
  const big half = big(1) << static_cast<unsigned>(drop - 1);
  const bool sticky = r != 0;
  if (rest > half || (rest == half && (sticky || (mant & 1) != 0))) ++mant;
  const auto m = mant.convert_to<std::uint64_t>();
  return std::ldexp(static_cast<double>(m), static_cast<int>(drop - shift));
}

big binomial(std::int64_t n, std::int64_t k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  big c = 1;
  for (std::int64_t i = 0; i < k; ++i) {
    c *= n - i;
    c /= i + 1;
  }
  return c;
}

// sum_{i=lo..hi} P(X = i), X ~ Binom(n, p), as an exact rational in p's
// binary value, rounded once.
double binom_range_exact(std::int64_t lo, std::int64_t hi, std::int64_t n, double p) {
  if (lo > hi) return 0.0;
  int e2 = 0;
  const double frac = std::frexp(p, &e2);
  // p = a / 2^E exactly.
  const auto a_raw = static_cast<std::uint64_t>(std::ldexp(frac, 53));
  const int E = 53 - e2;
  const big a = a_raw;
  const big b = (big(1) << static_cast<unsigned>(E)) - a;
  // Horner in b: acc = sum_j C(n, lo+j) a^j b^(m-j), m = hi - lo.
  big acc = 0, apow = 1, c = binomial(n, lo);
  for (std::int64_t i = lo; i <= hi; ++i) {
    acc = acc * b + c * apow;
    apow *= a;
    c *= n - i;
    c /= i + 1;
  }
  const big num = acc * boost::multiprecision::pow(a, static_cast<unsigned>(lo)) *
                  boost::multiprecision::pow(b, static_cast<unsigned>(n - hi));
  const big den = big(1) << static_cast<unsigned>(static_cast<std::int64_t>(E) * n);
  return ratio_to_double(num, den);
}

ld log_sum_exp(const std::vector<ld>& terms) {
  if (terms.empty()) return -std::numeric_limits<ld>::infinity();
  const ld m = *std::max_element(terms.begin(), terms.end());
  if (std::isinf(m)) return m;
  ld s = 0;
  for (ld t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

// log P(X = i) for i in [lo, hi], X ~ Binom(n, p), 0 < p < 1.
std::vector<ld> binom_log_pmf_range(std::int64_t lo, std::int64_t hi, std::int64_t n, ld p) {
  std::vector<ld> out;
  if (lo > hi) return out;
  const ld lp = std::log(p);
  const ld lq = std::log1p(-p);
  ld cur = std::lgamma(static_cast<ld>(n) + 1) - std::lgamma(static_cast<ld>(lo) + 1) -
           std::lgamma(static_cast<ld>(n - lo) + 1) + static_cast<ld>(lo) * lp + static_cast<ld>(n - lo) * lq;
  out.reserve(static_cast<std::size_t>(hi - lo + 1));
  out.push_back(cur);
  for (std::int64_t i = lo; i < hi; ++i) {
    cur += std::log(static_cast<ld>(n - i)) - std::log(static_cast<ld>(i + 1)) + lp - lq;
    out.push_back(cur);
  }
  return out;
}

double half_binom_cdf(std::int64_t k, std::int64_t n) {
  if (n <= kExactLimit) return binom_range_exact(0, k, n, 0.5);
  return static_cast<double>(std::exp(log_sum_exp(binom_log_pmf_range(0, k, n, 0.5L))));
}

double clamp01(ld v) { return static_cast<double>(std::clamp<ld>(v, 0, 1)); }

std::vector<double> centered(std::span<const double> r) {
  const double m = mean(r);
  std::vector<double> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = r[i] - m;
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const auto cx = centered(x), cy = centered(y);
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < cx.size(); ++i) {
    sxy += static_cast<ld>(cx[i]) * cy[i];
    sxx += static_cast<ld>(cx[i]) * cx[i];
    syy += static_cast<ld>(cy[i]) * cy[i];
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw std::domain_error("normal_quantile: p outside [0, 1]");
  }
  // Acklam's rational approximation, then Halley refinement against erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  for (int iter = 0; iter < 2; ++iter) {
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
    x = x - u / (1 + x * u / 2);
  }
  return x;
}

StatResult wilson_ci(std::int64_t k, std::int64_t n, double level) {
  if (n <= 0) throw std::invalid_argument("wilson_ci: n must be positive");
  if (k < 0 || k > n) throw std::invalid_argument("wilson_ci: k outside [0, n]");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("wilson_ci: level outside (0, 1)");
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  const double nn = static_cast<double>(n);
  const double phat = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (phat + z2 / (2 * nn)) / denom;
  const double half = z / denom * std::sqrt(phat * (1 - phat) / nn + z2 / (4 * nn * nn));
  // The two bounds are the roots of a quadratic whose product is
  // phat^2 / denom; taking the lower one from the upper avoids the
  // cancellation in center - half.
  const double high = k == n ? 1.0 : std::min(1.0, center + half);
  const double low = k == 0 ? 0.0 : phat * phat / (denom * (center + half));
  StatResult r;
  r.estimate = phat;
  r.ci = Interval{std::max(0.0, std::min(low, phat)), std::max(high, phat)};
  r.method = "wilson";
  r.n = n;
  return r;
}

double binom_cdf(std::int64_t k, std::int64_t n, double p) {
  if (n < 0 || !(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("binom_cdf: bad parameters");
  if (k < 0) return 0.0;
  if (k >= n) return 1.0;
  if (p == 0.0) return 1.0;
  if (p == 1.0) return 0.0;
  if (n <= kExactLimit) return binom_range_exact(0, k, n, p);
  // Sum the tail away from the mean directly; the complement there is
  // close to 1 and subtraction costs nothing.
  if (static_cast<double>(k) < static_cast<double>(n) * p) return clamp01(std::exp(log_sum_exp(binom_log_pmf_range(0, k, n, p))));
  return clamp01(1 - std::exp(log_sum_exp(binom_log_pmf_range(k + 1, n, n, p))));
}

double binom_sf(std::int64_t k, std::int64_t n, double p) {
  if (n < 0 || !(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("binom_sf: bad parameters");
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  if (n <= kExactLimit) return binom_range_exact(k, n, n, p);
  if (static_cast<double>(k) > static_cast<double>(n) * p)
    return clamp01(std::exp(log_sum_exp(binom_log_pmf_range(k, n, n, p))));
  return clamp01(1 - std::exp(log_sum_exp(binom_log_pmf_range(0, k - 1, n, p))));
}

StatResult mcnemar_exact(std::int64_t b, std::int64_t c) {
  if (b < 0 || c < 0) throw std::invalid_argument("mcnemar_exact: negative count");
  StatResult r;
  r.method = "mcnemar_exact";
  r.n = b + c;
  r.estimate = static_cast<double>(b - c);
  r.p_value = b + c == 0 ? 1.0 : std::min(1.0, 2.0 * half_binom_cdf(std::min(b, c), b + c));
  return r;
}

StatResult mcnemar_exact(const PairedOutcomes& pairs) {
  if (pairs.a.size() != pairs.b.size()) throw std::invalid_argument("mcnemar_exact: unaligned outcomes");
  if (pairs.a.empty()) throw std::invalid_argument("mcnemar_exact: no pairs");
  std::int64_t b = 0, c = 0;
  for (std::size_t i = 0; i < pairs.a.size(); ++i) {
    if (pairs.a[i] && !pairs.b[i]) ++b;
    if (!pairs.a[i] && pairs.b[i]) ++c;
  }
  auto r = mcnemar_exact(b, c);
  r.n = static_cast<std::int64_t>(pairs.a.size());
  const double n = static_cast<double>(pairs.a.size());
  r.estimate = static_cast<double>(b - c) / n;
  return r;
}

std::vector<double> holm_bonferroni(std::span<const double> p) {
  const std::size_t m = p.size();
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("holm_bonferroni: p outside [0, 1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return p[x] < p[y]; });
  std::vector<double> out(m);
  double running = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double adj = std::min(1.0, static_cast<double>(m - j) * p[order[j]]);
    running = std::max(running, adj);
    out[order[j]] = running;
  }
  return out;
}

StatResult binom_one_sided(std::int64_t k, std::int64_t n, double p0) {
  if (k < 0 || k > n) throw std::invalid_argument("binom_one_sided: k outside [0, n]");
  StatResult r;
  r.method = "binom_one_sided";
  r.n = n;
  r.estimate = n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n);
  r.p_value = binom_sf(k, n, p0);
  return r;
}

StatResult paired_bootstrap(std::size_t n_items, const std::function<double(std::span<const std::size_t>)>& statistic,
                            int resamples, double level, std::uint64_t seed) {
  if (n_items < 2) throw std::invalid_argument("paired_bootstrap: need at least two items");
  if (resamples < 1) throw std::invalid_argument("paired_bootstrap: resamples must be positive");
  std::vector<std::size_t> idx(n_items);
  std::iota(idx.begin(), idx.end(), 0);
  StatResult r;
  r.estimate = statistic(idx);
  r.method = "paired_bootstrap_percentile";
  r.n = static_cast<std::int64_t>(n_items);

  std::mt19937_64 eng(seed);
  std::vector<double> draws;
  draws.reserve(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    for (auto& i : idx) i = static_cast<std::size_t>(bounded(eng, n_items));
    // Resamples where the statistic is undefined (a zero denominator) drop out.
    if (const double d = statistic(idx); std::isfinite(d)) draws.push_back(d);
  }
  if (draws.empty() || !std::isfinite(r.estimate)) return r;
  std::sort(draws.begin(), draws.end());
  auto quantile = [&](double q) {
    // Linear interpolation between order statistics.
    const double pos = q * static_cast<double>(draws.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, draws.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return draws[lo] + frac * (draws[hi] - draws[lo]);
  };
  const double alpha = 1.0 - level;
  r.ci = Interval{std::min(quantile(alpha / 2), r.estimate), std::max(quantile(1 - alpha / 2), r.estimate)};
  return r;
}

StatResult paired_bootstrap_diff(std::span<const double> a, std::span<const double> b, int resamples, double level,
                                 std::uint64_t seed) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_bootstrap_diff: unaligned outcomes");
  auto stat = [&](std::span<const std::size_t> idx) {
    long double s = 0;
    for (auto i : idx) s += static_cast<ld>(a[i]) - static_cast<ld>(b[i]);
    return static_cast<double>(s / static_cast<ld>(idx.size()));
  };
  auto r = paired_bootstrap(a.size(), stat, resamples, level, seed);
  r.method = "paired_bootstrap_diff";
  return r;
}

double permutation_p(double observed, std::span<const double> null_samples, Sided sided) {
  std::size_t hits = 0;
  for (double v : null_samples) {
    bool extreme = false;
    switch (sided) {
      case Sided::right: extreme = v >= observed; break;
      case Sided::left: extreme = v <= observed; break;
      case Sided::two: extreme = std::fabs(v) >= std::fabs(observed); break;
    }
    if (extreme) ++hits;
  }
  return (1.0 + static_cast<double>(hits)) / (1.0 + static_cast<double>(null_samples.size()));
}

double permutation_test(double observed, const std::function<double(int)>& null_sample, int n_perm, Sided sided) {
  if (n_perm < 1) throw std::invalid_argument("permutation_test: n_perm must be positive");
  std::vector<double> nulls(static_cast<std::size_t>(n_perm));
  for (int i = 0; i < n_perm; ++i) nulls[static_cast<std::size_t>(i)] = null_sample(i);
  return permutation_p(observed, nulls, sided);
}

std::vector<double> average_ranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

StatResult spearman_exact(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("spearman_exact: length mismatch");
  const std::size_t n = xs.size();
  if (n < 3 || n > 8) throw std::invalid_argument("spearman_exact: n must lie in [3, 8]");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  StatResult r;
  r.method = "spearman_exact";
  r.n = static_cast<std::int64_t>(n);
  r.estimate = pearson(rx, ry);

  // Doubled ranks are integers; under permutation only sum(rx*ry) varies,
  // so extremeness is compared on the integer centred cross-product.
  std::vector<std::int64_t> x2(n), y2(n);
  for (std::size_t i = 0; i < n; ++i) {
    x2[i] = std::llround(2 * rx[i]);
    y2[i] = std::llround(2 * ry[i]);
  }
  const auto nn = static_cast<std::int64_t>(n);
  const std::int64_t offset = nn * (nn + 1) * (nn + 1);
  auto centred_cross = [&](const std::vector<std::int64_t>& yy) {
    std::int64_t s = 0;
    for (std::size_t i = 0; i < n; ++i) s += x2[i] * yy[i];
    return s - offset;
  };
  const std::int64_t observed = std::llabs(centred_cross(y2));
  const bool degenerate = std::all_of(rx.begin(), rx.end(), [&](double v) { return v == rx[0]; }) ||
                          std::all_of(ry.begin(), ry.end(), [&](double v) { return v == ry[0]; });
  if (degenerate) {
    r.estimate = 0.0;
    r.p_value = 1.0;
    return r;
  }
  // Enumerate all n! index orders; duplicates from tied ranks are counted
  // with multiplicity so the denominator stays n!.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::int64_t total = 0, extreme = 0;
  std::vector<std::int64_t> yy(n);
  do {
    for (std::size_t i = 0; i < n; ++i) yy[i] = y2[idx[i]];
    ++total;
    if (std::llabs(centred_cross(yy)) >= observed) ++extreme;
  } while (std::next_permutation(idx.begin(), idx.end()));
  r.p_value = static_cast<double>(extreme) / static_cast<double>(total);
  return r;
}

StatResult spearman_normal(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("spearman_normal: length mismatch");
  if (xs.size() < 3) throw std::invalid_argument("spearman_normal: need at least three observations");
  StatResult r;
  r.method = "spearman_normal";
  r.n = static_cast<std::int64_t>(xs.size());
  r.estimate = pearson(average_ranks(xs), average_ranks(ys));
  const double z = r.estimate * std::sqrt(static_cast<double>(xs.size() - 1));
  r.p_value = std::min(1.0, std::erfc(std::fabs(z) / std::sqrt(2.0)));
  return r;
}

double hypergeom_tail(std::int64_t N, std::int64_t K, std::int64_t n, std::int64_t k) {
  if (N < 0 || K < 0 || n < 0 || K > N || n > N || k < 0)
    throw std::invalid_argument("hypergeom_tail: infeasible parameters");
  const std::int64_t lo = std::max<std::int64_t>(0, n - (N - K));
  const std::int64_t hi = std::min(K, n);
  if (k > hi) throw std::invalid_argument("hypergeom_tail: k exceeds min(K, n)");
  if (k <= lo) return 1.0;
  if (N <= kExactLimit) {
    big num = 0;
    for (std::int64_t i = k; i <= hi; ++i) num += binomial(K, i) * binomial(N - K, n - i);
    return ratio_to_double(num, binomial(N, n));
  }
  auto log_choose = [](std::int64_t a, std::int64_t b) {
    return std::lgamma(static_cast<ld>(a) + 1) - std::lgamma(static_cast<ld>(b) + 1) -
           std::lgamma(static_cast<ld>(a - b) + 1);
  };
  std::vector<ld> terms;
  ld cur = log_choose(K, k) + log_choose(N - K, n - k) - log_choose(N, n);
  terms.push_back(cur);
  for (std::int64_t i = k; i < hi; ++i) {
    cur += std::log(static_cast<ld>((K - i) * (n - i))) - std::log(static_cast<ld>((i + 1) * (N - K - n + i + 1)));
    terms.push_back(cur);
  }
  return clamp01(std::exp(log_sum_exp(terms)));
}

double gini(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("gini: empty input");
  std::vector<double> v(values.begin(), values.end());
  for (double x : v)
    if (x < 0 || !std::isfinite(x)) throw std::invalid_argument("gini: values must be finite and nonnegative");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  long double total = 0, pairs = 0;
  for (double x : v) total += x;
  if (total == 0) throw std::invalid_argument("gini: all values are zero");
  // sum_{i<j} (v_j - v_i) over sorted values: every gap v_{g+1} - v_g is
  // crossed by (g + 1)(m - g - 1) pairs. All terms are nonnegative.
  for (std::size_t g = 0; g + 1 < m; ++g)
    pairs += (static_cast<ld>(v[g + 1]) - v[g]) * static_cast<ld>(g + 1) * static_cast<ld>(m - g - 1);
  // mean |x_i - x_j| over all ordered pairs = 2 * pairs / m^2; over 2 * mean.
  return static_cast<double>(pairs / (static_cast<ld>(m) * total));
}

std::optional<double> retention(double p_cond, double p_ord, double p_floor, RetentionMode mode) {
  double num = p_cond, den = p_ord;
  switch (mode) {
    case RetentionMode::simple: break;
    case RetentionMode::nocot_anchored:
      num = p_cond - p_floor;
      den = p_ord - p_floor;
      break;
    case RetentionMode::chance_corrected:
      num = p_cond - kChanceFloor3Way;
      den = p_ord - kChanceFloor3Way;
      break;
  }
  if (den == 0.0) return std::nullopt;
  if (p_cond == p_ord) return 1.0;
  return num / den;
}

std::string to_string(RetentionMode mode) {
  switch (mode) {
    case RetentionMode::simple: return "simple";
    case RetentionMode::nocot_anchored: return "nocot_anchored";
    case RetentionMode::chance_corrected: return "chance_corrected";
  }
  return "?";
}

std::optional<RetentionMode> retention_mode_from_string(const std::string& s) {
  for (auto m : {RetentionMode::simple, RetentionMode::nocot_anchored, RetentionMode::chance_corrected})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean: empty input");
  long double s = 0;
  for (double x : xs) s += x;
  return static_cast<double>(s / static_cast<ld>(xs.size()));
}

}  // namespace cotprobe::stats
