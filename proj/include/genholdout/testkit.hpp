#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/distributions/binomial.hpp>

#include "genholdout/core.hpp"
#include "genholdout/detail/parallel.hpp"
#include "genholdout/detail/sha256.hpp"
#include "genholdout/errors.hpp"
#include "genholdout/rng.hpp"

namespace genholdout {

// ---------------------------------------------------------------------------
// Test families
// ---------------------------------------------------------------------------

/// Threshold test on an empirical mean of a [-1, 1]-bounded loss: accepts
/// iff mean loss strictly exceeds the threshold. For losses whose population
/// mean is <= 0 under the null, the false-positive probability is bounded by
/// the Hoeffding tail exp(-2 h tau^2 / 4), i.e. exp(-h/8) at tau = 1/2.
class GappedLossTest {
public:
  explicit GappedLossTest(LossFunction loss, double threshold = 0.5, std::string label = {})
      : loss_(std::move(loss)), threshold_(threshold), label_(std::move(label)) {
    if (!(threshold_ > 0.0) || !(threshold_ < 1.0))
      throw DomainError("GappedLossTest: threshold must lie in (0, 1)");
  }

  const LossFunction& loss() const { return loss_; }
  double threshold() const { return threshold_; }
  const std::string& label() const { return label_; }

private:
  LossFunction loss_;
  double threshold_;
  std::string label_;
};

/// Accepts iff the raw (untruncated) empirical correlation
/// (1/n) sum_i y_i <w, x_i> strictly exceeds the threshold.
class CorrelationTest {
public:
  explicit CorrelationTest(std::vector<double> w, double threshold = 1.0)
      : w_(std::move(w)), threshold_(threshold) {
    if (!detail::is_unit(w_)) throw NormError("CorrelationTest: w must be unit length");
  }

  const std::vector<double>& direction() const { return w_; }
  double threshold() const { return threshold_; }

private:
  std::vector<double> w_;
  double threshold_;
};

using HypothesisTest = std::variant<GappedLossTest, CorrelationTest>;

/// Validating factory for the truncated linear loss truncate(y * <w, x>).
inline LossFunction make_linear_loss(std::vector<double> w) {
  if (!detail::is_unit(w)) throw NormError("make_linear_loss: w must be unit length (1e-9)");
  return LossFunction::truncated_linear(std::move(w));
}

inline CorrelationTest make_correlation_test(std::vector<double> w, double threshold = 1.0) {
  return CorrelationTest(std::move(w), threshold);
}

inline bool evaluate_gapped_test(const GappedLossTest& test, const Dataset& data) {
  return empirical_mean_loss(test.loss(), data) > test.threshold();
}

inline double correlation_statistic(const CorrelationTest& test, const Dataset& data) {
  if (data.empty()) throw EmptyDataError("correlation_statistic: empty dataset");
  if (test.direction().size() != data.dimension())
    throw DomainError("correlation_statistic: dimension mismatch");
  const double total = detail::pairwise_accumulate(0, data.size(), [&](std::size_t i) {
    return data[i].y * detail::dot(test.direction(), data[i].x);
  });
  return total / static_cast<double>(data.size());
}

inline bool evaluate_correlation_test(const CorrelationTest& test, const Dataset& data) {
  return correlation_statistic(test, data) > test.threshold();
}

/// The decision statistic of either family (mean loss, or raw correlation).
inline double test_statistic(const HypothesisTest& test, const Dataset& data) {
  return std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, GappedLossTest>) {
          return empirical_mean_loss(t.loss(), data);
        } else {
          return correlation_statistic(t, data);
        }
      },
      test);
}

inline double test_threshold(const HypothesisTest& test) {
  return std::visit([](const auto& t) { return t.threshold(); }, test);
}

inline bool evaluate_test(const HypothesisTest& test, const Dataset& data) {
  return test_statistic(test, data) > test_threshold(test);
}

/// Direction vector for linear-family hypotheses, nullptr for others.
inline const std::vector<double>* test_direction(const HypothesisTest& test) {
  return std::visit(
      [](const auto& t) -> const std::vector<double>* {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, GappedLossTest>) {
          return t.loss().direction();
        } else {
          return &t.direction();
        }
      },
      test);
}

/// Canonical content-based serialization of a test. Labels are excluded, so
/// resubmitting the same test under a new name yields the same identity.
inline std::string test_description_bytes(const HypothesisTest& test) {
  std::string out;
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, GappedLossTest>) {
          out.push_back('G');
          detail::append_f64(out, t.threshold());
          out.append(t.loss().description_bytes());
        } else {
          out.push_back('R');
          detail::append_f64(out, t.threshold());
          detail::append_u32(out, static_cast<std::uint32_t>(t.direction().size()));
          for (double v : t.direction()) detail::append_f64(out, v);
        }
      },
      test);
  return out;
}

/// SHA-256 hex of the canonical serialization; the audit identity of a test.
inline std::string test_hash(const HypothesisTest& test) {
  return detail::Sha256::hex_digest(test_description_bytes(test));
}

// ---------------------------------------------------------------------------
// Bounds and sample-size formulas
// ---------------------------------------------------------------------------

inline double log_hoeffding_p_bound(std::size_t h, double gap, double range_width) {
  if (!(gap > 0.0)) throw DomainError("hoeffding_p_bound: gap must be > 0");
  if (!(range_width > 0.0)) throw DomainError("hoeffding_p_bound: range_width must be > 0");
  return -2.0 * static_cast<double>(h) * gap * gap / (range_width * range_width);
}

/// One-sided Hoeffding tail for the mean of h variables with the given range
/// to exceed the null mean by `gap`: exp(-2 h gap^2 / range_width^2).
inline double hoeffding_p_bound(std::size_t h, double gap, double range_width) {
  return std::exp(log_hoeffding_p_bound(h, gap, range_width));
}

namespace detail {

inline void check_budget_arguments(std::size_t s, std::size_t k, double p0) {
  if (s < 1) throw DomainError("budget: s must be >= 1");
  if (k < 1 || k > s) throw DomainError("budget: k must satisfy 1 <= k <= s");
  if (!(p0 > 0.0) || !(p0 < 1.0)) throw DomainError("budget: p0 must lie in (0, 1)");
}

/// s^k when it is exactly representable as a double (integer < 2^53),
/// otherwise nothing.
inline std::optional<double> exact_integer_power(std::size_t s, std::size_t k) {
  double p = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    p *= static_cast<double>(s);
    if (p > 9.0e15) return std::nullopt;
  }
  return p;
}

}  // namespace detail

inline double log_per_test_alpha(std::size_t s, std::size_t k, double p0) {
  detail::check_budget_arguments(s, k, p0);
  return std::log(p0) - static_cast<double>(k) * std::log(static_cast<double>(s));
}

/// The uniform per-test level p0 / s^k. At k = 1 this is the Bonferroni
/// level p0 / s, computed as the single correctly-rounded quotient. Larger
/// exponents fall back to log space, so extreme budgets shrink toward zero
/// instead of raising errors.
inline double per_test_alpha(std::size_t s, std::size_t k, double p0) {
  detail::check_budget_arguments(s, k, p0);
  if (k == 1) return p0 / static_cast<double>(s);
  if (const auto power = detail::exact_integer_power(s, k)) return p0 / *power;
  return std::exp(log_per_test_alpha(s, k, p0));
}

/// Smallest holdout size h with hoeffding_p_bound(h, 1/2, 2) <= p0 / s^k,
/// i.e. ceil(8 ln(s^k / p0)) adjusted so the defining inequality holds
/// exactly in double arithmetic (and fails at h - 1).
inline std::size_t required_holdout_size(std::size_t s, std::size_t k, double p0) {
  detail::check_budget_arguments(s, k, p0);
  const double log_alpha = log_per_test_alpha(s, k, p0);
  // Below ~exp(-700) the linear-space quantities would flush to zero;
  // compare in log space there and skip the boundary fix-up.
  const bool use_linear = log_alpha > std::log(std::numeric_limits<double>::min()) + 2.0;
  const auto satisfies = [&](std::size_t h) {
    if (use_linear) return hoeffding_p_bound(h, 0.5, 2.0) <= per_test_alpha(s, k, p0);
    return log_hoeffding_p_bound(h, 0.5, 2.0) <= log_alpha;
  };
  const double raw = std::ceil(-8.0 * log_alpha);
  auto h = static_cast<std::size_t>(std::max(0.0, raw));
  while (!satisfies(h)) ++h;
  while (h > 0 && satisfies(h - 1)) --h;
  return h;
}

/// Validity budget of a holdout oracle: at most s queries, stop after k
/// stop-events, overall false-discovery target p0, uniform per-test level
/// alpha = p0 / s^k. k = 0 (with any s) describes the degenerate oracle
/// that never answers.
struct BudgetSpec {
  std::size_t s_max = 1;
  std::size_t k_max = 1;
  double p0 = 0.05;
  double alpha = 0.05;
  double log_alpha = 0.0;

  static BudgetSpec make(std::size_t s, std::size_t k, double p0) {
    if (!(p0 > 0.0) || !(p0 < 1.0)) throw DomainError("BudgetSpec: p0 must lie in (0, 1)");
    if (k > s) throw DomainError("BudgetSpec: k must not exceed s");
    BudgetSpec b;
    b.s_max = s;
    b.k_max = k;
    b.p0 = p0;
    if (k == 0) {
      b.alpha = p0;
      b.log_alpha = std::log(p0);
    } else {
      b.alpha = per_test_alpha(s, k, p0);
      b.log_alpha = log_per_test_alpha(s, k, p0);
    }
    return b;
  }

  bool operator==(const BudgetSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Monte Carlo calibration of the correlation family
// ---------------------------------------------------------------------------

struct CalibrationEntry {
  double p_hat = 0.0;        ///< observed null accept fraction
  double upper99 = 1.0;      ///< exact-binomial (Clopper-Pearson) upper 99% bound
  std::size_t replications = 0;
};

/// Empirical null false-positive bounds for the threshold-1 correlation
/// test, per holdout size. This is the brute-force stand-in for the family's
/// unknown analytic constant: the oracle certifies correlation queries
/// against the table's upper confidence bound, never the point estimate.
class CalibrationTable {
public:
  void set(std::size_t n, CalibrationEntry entry) { entries_[n] = entry; }

  const CalibrationEntry* find(std::size_t n) const {
    const auto it = entries_.find(n);
    return it == entries_.end() ? nullptr : &it->second;
  }

  const std::map<std::size_t, CalibrationEntry>& entries() const { return entries_; }

private:
  std::map<std::size_t, CalibrationEntry> entries_;
};

/// Estimate Pr[correlation statistic > 1] under the global null for each
/// requested sample size, by R independent simulations each. Replications
/// use per-index substreams and integer-count aggregation, so results do not
/// depend on the worker count.
///
/// Under the global null the statistic (1/n) sum y_i <w, x_i> is a mean of
/// n i.i.d. products of two standard normals for every unit w and every
/// feature dimension, so the simulation draws those products directly.
inline CalibrationTable calibrate_correlation_null(std::span<const std::size_t> sample_sizes,
                                                   std::size_t d, std::size_t replications,
                                                   const RngStream& rng, unsigned threads = 0) {
  if (d < 1) throw DomainError("calibrate_correlation_null: d must be >= 1");
  if (replications < 10'000)
    throw DomainError("calibrate_correlation_null: need at least 10^4 replications");

  CalibrationTable table;
  for (std::size_t ni = 0; ni < sample_sizes.size(); ++ni) {
    const std::size_t n = sample_sizes[ni];
    if (n < 1) throw DomainError("calibrate_correlation_null: sample sizes must be >= 1");
    const RngStream size_stream = rng.child(ni);
    std::atomic<std::size_t> accepts{0};
    detail::parallel_for(replications, threads, [&](std::size_t rep) {
      RngEngine engine = size_stream.child(rep).engine();
      const double total = detail::pairwise_accumulate(
          0, n, [&](std::size_t) { return engine.normal() * engine.normal(); });
      if (total / static_cast<double>(n) > 1.0) accepts.fetch_add(1, std::memory_order_relaxed);
    });

    CalibrationEntry entry;
    entry.replications = replications;
    entry.p_hat = static_cast<double>(accepts.load()) / static_cast<double>(replications);
    entry.upper99 = boost::math::binomial_distribution<double>::find_upper_bound_on_p(
        static_cast<double>(replications), static_cast<double>(accepts.load()), 0.01);
    table.set(n, entry);
  }
  return table;
}

inline CalibrationTable calibrate_correlation_null(std::size_t sample_size, std::size_t d,
                                                   std::size_t replications, const RngStream& rng,
                                                   unsigned threads = 0) {
  const std::size_t sizes[] = {sample_size};
  return calibrate_correlation_null(std::span<const std::size_t>(sizes), d, replications, rng,
                                    threads);
}

/// Certified log false-positive bound of a test at holdout size h, if one is
/// available: the Hoeffding tail for the gapped family, the calibration
/// table's upper bound for threshold->=1 correlation tests.
inline std::optional<double> certified_log_p_bound(const HypothesisTest& test, std::size_t h,
                                                   const CalibrationTable* table) {
  return std::visit(
      [&](const auto& t) -> std::optional<double> {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, GappedLossTest>) {
          return log_hoeffding_p_bound(h, t.threshold(), 2.0);
        } else {
          if (table == nullptr || t.threshold() < 1.0) return std::nullopt;
          const CalibrationEntry* entry = table->find(h);
          if (entry == nullptr || !(entry->upper99 > 0.0)) return std::nullopt;
          return std::log(entry->upper99);
        }
      },
      test);
}

}  // namespace genholdout
