#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cotprobe::stats {

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

struct StatResult {
  double estimate = 0.0;
  std::optional<Interval> ci;
  std::optional<double> p_value;
  std::string method;
  std::int64_t n = 0;
};

/// Per-item paired binary outcomes, aligned by item id.
struct PairedOutcomes {
  std::vector<std::string> item_ids;
  std::vector<bool> a;
  std::vector<bool> b;
};

/// Upper quantile of the standard normal: returns z with Phi(z) = p.
double normal_quantile(double p);
/// Phi(x).
double normal_cdf(double x);

StatResult wilson_ci(std::int64_t k, std::int64_t n, double level = 0.95);

/// P(X <= k) for X ~ Binom(n, p), summed in log space.
double binom_cdf(std::int64_t k, std::int64_t n, double p);
/// P(X >= k) for X ~ Binom(n, p).
double binom_sf(std::int64_t k, std::int64_t n, double p);

/// Two-sided exact McNemar on the discordant counts: b = a-only successes,
/// c = b-only successes. p = min(1, 2 * BinomCDF(min(b, c); b + c, 1/2)).
StatResult mcnemar_exact(std::int64_t b, std::int64_t c);
StatResult mcnemar_exact(const PairedOutcomes& pairs);

/// Holm step-down adjustment, returned in input order.
std::vector<double> holm_bonferroni(std::span<const double> p);

/// One-sided exact binomial: P(X >= k) under Binom(n, p0).
StatResult binom_one_sided(std::int64_t k, std::int64_t n, double p0 = 0.70);

/// Percentile bootstrap over items. `statistic` receives the resampled item
/// indices (with repetition) and returns the statistic of that resample.
/// Non-finite resample values are dropped; with none left, or a non-finite
/// point estimate, the result carries no interval.
StatResult paired_bootstrap(std::size_t n_items, const std::function<double(std::span<const std::size_t>)>& statistic,
                            int resamples = 10000, double level = 0.95, std::uint64_t seed = 0);

/// mean(a) - mean(b) with a paired percentile bootstrap interval.
StatResult paired_bootstrap_diff(std::span<const double> a, std::span<const double> b, int resamples = 10000,
                                 double level = 0.95, std::uint64_t seed = 0);

enum class Sided { right, left, two };

/// Add-one permutation p-value: (1 + #{null at least as extreme}) / (1 + n).
double permutation_p(double observed, std::span<const double> null_samples, Sided sided = Sided::right);
double permutation_test(double observed, const std::function<double(int)>& null_sample, int n_perm = 1000,
                        Sided sided = Sided::right);

/// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> xs);

/// Spearman rho with a two-sided exact permutation p over all n! orders;
/// 3 <= n <= 8.
StatResult spearman_exact(std::span<const double> xs, std::span<const double> ys);

/// Spearman rho with the large-sample normal approximation z = rho*sqrt(n-1).
StatResult spearman_normal(std::span<const double> xs, std::span<const double> ys);

/// P(X >= k) for X ~ Hypergeometric(N population, K marked, n drawn).
double hypergeom_tail(std::int64_t N, std::int64_t K, std::int64_t n, std::int64_t k);

/// Mean absolute pairwise difference over 2 * mean, for nonnegative values.
double gini(std::span<const double> values);

enum class RetentionMode { simple, nocot_anchored, chance_corrected };

inline constexpr double kChanceFloor3Way = 1.0 / 3.0;

/// simple: p_cond / p_ord; anchored: (p_cond - p_floor) / (p_ord - p_floor);
/// chance-corrected: as anchored with p_floor fixed at 1/3. nullopt when
/// the denominator is zero.
std::optional<double> retention(double p_cond, double p_ord, double p_floor, RetentionMode mode);

std::string to_string(RetentionMode mode);
std::optional<RetentionMode> retention_mode_from_string(const std::string& s);

double mean(std::span<const double> xs);

/// Uniform integer in [0, bound) from a 64-bit engine output stream, by
/// rejection; platform-independent unlike std::uniform_int_distribution.
template <class Engine>
std::uint64_t bounded(Engine& eng, std::uint64_t bound) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound + 1) % bound;
  for (;;) {
    const std::uint64_t u = eng();
    if (u <= limit) return u % bound;
  }
}

}  // namespace cotprobe::stats
