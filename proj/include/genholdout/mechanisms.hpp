#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "genholdout/core.hpp"
#include "genholdout/errors.hpp"
#include "genholdout/rng.hpp"
#include "genholdout/testkit.hpp"

namespace genholdout {

enum class OracleMode {
  StopOnConfirms,  ///< lock after k_max accepted hypotheses
  StopOnRejects,   ///< complementary setting: lock after k_max rejections
};

enum class OracleState { Active, Locked };

/// One audit-log line: which query, the content hash of the test, the bit
/// returned. Deliberately nothing else — no statistics, no data.
struct TranscriptEntry {
  std::uint64_t query_index = 0;  ///< 1-based
  std::string test_hash;
  bool bit = false;
};

/// The budgeted one-bit holdout validator.
///
/// The holdout dataset is sealed at construction: no accessor exposes it,
/// its statistics, or anything else data-dependent beyond the single bit
/// each query returns. Budgets follow BudgetSpec: at most s_max queries at
/// per-test level alpha = p0 / s_max^k_max, locking at k_max stop-events
/// (confirmations, or rejections in the complementary mode) or on budget
/// exhaustion. Every query must certify a false-positive bound at or below
/// alpha for this holdout size, or it is refused without consuming budget.
///
/// A sequential object: callers serialize queries; distinct oracles may run
/// on distinct threads freely.
class GenericHoldoutOracle {
public:
  GenericHoldoutOracle(Dataset holdout, BudgetSpec budget,
                       OracleMode mode = OracleMode::StopOnConfirms,
                       std::optional<CalibrationTable> correlation_calibration = std::nullopt)
      : holdout_(std::move(holdout)),
        budget_(budget),
        mode_(mode),
        calibration_(std::move(correlation_calibration)) {
    if (holdout_.empty()) throw EmptyDataError("GenericHoldoutOracle: empty holdout");
    if (budget_.k_max >= 1 && budget_.s_max >= 1) {
      const std::size_t required =
          required_holdout_size(budget_.s_max, budget_.k_max, budget_.p0);
      if (holdout_.size() < required) {
        construction_warning_ =
            "holdout of size " + std::to_string(holdout_.size()) +
            " is below the gapped-family requirement " + std::to_string(required) +
            " for this budget; queries may be refused as too weak";
      }
    }
    apply_lock_rules();
  }

  /// Validate one hypothesis. Returns only the accept bit.
  bool query(const HypothesisTest& test) {
    require_active();
    certify(test);
    return answer(test);
  }

  /// Validate a family simultaneously. The whole batch is charged against
  /// the query budget up front (never partially); all bits are returned even
  /// when a stop-event inside the batch locks the oracle.
  std::vector<bool> query_batch(std::span<const HypothesisTest> tests) {
    require_active();
    if (tests.size() > budget_.s_max - queries_used_)
      throw SizeError("query_batch: batch exceeds remaining query budget");
    for (const auto& t : tests) certify(t);
    std::vector<bool> bits;
    bits.reserve(tests.size());
    for (const auto& t : tests) bits.push_back(answer(t));
    return bits;
  }

  OracleState state() const { return lock_ ? OracleState::Locked : OracleState::Active; }
  bool active() const { return !lock_.has_value(); }
  std::optional<LockReason> lock_reason() const { return lock_; }

  const BudgetSpec& budget() const { return budget_; }
  OracleMode mode() const { return mode_; }
  std::size_t holdout_size() const { return holdout_.size(); }
  std::size_t queries_used() const { return queries_used_; }
  std::size_t confirmations() const { return confirmations_; }
  std::size_t rejections() const { return rejections_; }

  /// Full audit log, in query order. Hashes and bits only.
  const std::vector<TranscriptEntry>& transcript() const { return transcript_; }

  /// Set when the holdout was smaller than the gapped-family requirement.
  const std::optional<std::string>& construction_warning() const { return construction_warning_; }

private:
  void require_active() const {
    if (lock_) throw LockedError(*lock_);
  }

  void certify(const HypothesisTest& test) const {
    const auto bound = certified_log_p_bound(test, holdout_.size(), calibration_ptr());
    if (!bound || *bound > budget_.log_alpha) {
      throw TestTooWeakError(
          "test cannot certify a false-positive bound at the per-test level for this holdout");
    }
  }

  const CalibrationTable* calibration_ptr() const {
    return calibration_ ? &*calibration_ : nullptr;
  }

  bool answer(const HypothesisTest& test) {
    const bool bit = evaluate_test(test, holdout_);
    ++queries_used_;
    // The mode's stop counter saturates at k_max: a batch keeps answering
    // past the k-th stop-event, but the budget invariant still holds.
    if (bit) {
      if (mode_ != OracleMode::StopOnConfirms || confirmations_ < budget_.k_max) ++confirmations_;
    } else {
      if (mode_ != OracleMode::StopOnRejects || rejections_ < budget_.k_max) ++rejections_;
    }
    transcript_.push_back({queries_used_, test_hash(test), bit});
    apply_lock_rules();
    return bit;
  }

  void apply_lock_rules() {
    if (lock_) return;
    const std::size_t stop_count =
        (mode_ == OracleMode::StopOnConfirms) ? confirmations_ : rejections_;
    if (stop_count >= budget_.k_max) {
      lock_ = LockReason::KReached;
    } else if (queries_used_ >= budget_.s_max) {
      lock_ = LockReason::BudgetExhausted;
    }
  }

  Dataset holdout_;
  BudgetSpec budget_;
  OracleMode mode_;
  std::optional<CalibrationTable> calibration_;
  std::optional<LockReason> lock_;
  std::optional<std::string> construction_warning_;
  std::uint64_t queries_used_ = 0;
  std::size_t confirmations_ = 0;
  std::size_t rejections_ = 0;
  std::vector<TranscriptEntry> transcript_;
};

inline GenericHoldoutOracle new_generic_holdout(
    Dataset holdout, std::size_t s_max, std::size_t k_max, double p0,
    OracleMode mode = OracleMode::StopOnConfirms,
    std::optional<CalibrationTable> correlation_calibration = std::nullopt) {
  return GenericHoldoutOracle(std::move(holdout), BudgetSpec::make(s_max, k_max, p0), mode,
                              std::move(correlation_calibration));
}

// ---------------------------------------------------------------------------
// Leaky / naive baselines
// ---------------------------------------------------------------------------

/// The common fallacy as an operation: hand back the exact empirical mean
/// loss on the holdout. No budget, no lock, fully reusable — and unsound.
inline double naive_disclosure_query(const Dataset& holdout, const LossFunction& loss) {
  if (holdout.empty()) throw EmptyDataError("naive_disclosure_query: empty holdout");
  return empirical_mean_loss(loss, holdout);
}

/// Sound but sample-hungry: evaluate the threshold-1/2 gapped test on the
/// next unused chunk of the pool and advance the cursor. Each query burns
/// test_size fresh samples.
inline std::pair<bool, std::size_t> fresh_split_query(const Dataset& pool, std::size_t cursor,
                                                      const LossFunction& loss,
                                                      std::size_t test_size) {
  if (test_size == 0) throw DomainError("fresh_split_query: test_size must be >= 1");
  if (cursor > pool.size() || pool.size() - cursor < test_size)
    throw PoolExhaustedError("fresh_split_query: no unused chunk of the requested size left");
  Dataset chunk(pool.dimension());
  for (std::size_t i = cursor; i < cursor + test_size; ++i) chunk.add(pool[i]);
  const GappedLossTest test(loss, 0.5);
  return {evaluate_gapped_test(test, chunk), cursor + test_size};
}

/// Behavioral sketch of the Thresholdout-style reusable holdout: when the
/// exploration and holdout means of a loss look similar (within a noisy
/// threshold), answer from the exploration set alone; when they disagree,
/// spend one unit of overfit budget and answer with a noised holdout mean.
/// The budget is quadratic in the holdout size, which is exactly the failure
/// mode the comparison experiments exhibit.
class ThresholdoutBaseline {
public:
  static constexpr double kDefaultSimilarityThreshold = 0.05;
  static constexpr double kDefaultNoiseScale = 0.03;

  /// Quadratic-in-h budget at desk scale.
  static std::size_t default_overfit_budget(std::size_t holdout_size) {
    return std::max<std::size_t>(1, holdout_size * holdout_size / 100);
  }

  ThresholdoutBaseline(Dataset holdout, Dataset exploration, double similarity_threshold,
                       double noise_scale, std::size_t overfit_budget, const RngStream& noise_rng)
      : holdout_(std::move(holdout)),
        exploration_(std::move(exploration)),
        similarity_threshold_(similarity_threshold),
        noise_scale_(noise_scale),
        overfit_budget_(overfit_budget),
        noise_engine_(noise_rng.engine()) {
    if (holdout_.empty()) throw EmptyDataError("ThresholdoutBaseline: empty holdout");
    if (exploration_.empty()) throw EmptyDataError("ThresholdoutBaseline: empty exploration");
    if (!(similarity_threshold_ >= 0.0))
      throw DomainError("ThresholdoutBaseline: similarity threshold must be >= 0");
    if (!(noise_scale_ >= 0.0)) throw DomainError("ThresholdoutBaseline: noise scale must be >= 0");
  }

  std::size_t overfit_budget() const { return overfit_budget_; }

  double query(const LossFunction& loss) {
    if (overfit_budget_ == 0)
      throw OverfitBudgetExhaustedError("thresholdout_query: overfit budget exhausted");
    const double exploration_mean = empirical_mean_loss(loss, exploration_);
    const double holdout_mean = empirical_mean_loss(loss, holdout_);
    const double slack = noise_engine_.laplace(noise_scale_);
    if (std::abs(exploration_mean - holdout_mean) <= similarity_threshold_ + slack) {
      return exploration_mean;
    }
    --overfit_budget_;
    return holdout_mean + noise_engine_.laplace(noise_scale_);
  }

private:
  Dataset holdout_;
  Dataset exploration_;
  double similarity_threshold_;
  double noise_scale_;
  std::size_t overfit_budget_;
  RngEngine noise_engine_;
};

inline double thresholdout_query(ThresholdoutBaseline& baseline, const LossFunction& loss) {
  return baseline.query(loss);
}

/// Empirical mean of the loss on a never-touched dataset, with a two-sided
/// Hoeffding interval at the requested level, clamped to the loss range.
/// This is how p-values/effect sizes for already-confirmed hypotheses are
/// reported without contaminating the validation holdout.
struct ConfidenceEstimate {
  double mean = 0.0;
  double lo = -1.0;
  double hi = 1.0;
};

inline ConfidenceEstimate estimate_confidence(const LossFunction& loss, const Dataset& fresh,
                                              double level) {
  if (fresh.empty()) throw EmptyDataError("estimate_confidence: empty dataset");
  if (!(level > 0.0) || level > 1.0)
    throw DomainError("estimate_confidence: level must lie in (0, 1]");
  const double mean = empirical_mean_loss(loss, fresh);
  constexpr double kRange = 2.0;  // losses are certified within [-1, 1]
  const double half_width =
      std::sqrt(kRange * kRange * std::log(2.0 / (1.0 - level)) /
                (2.0 * static_cast<double>(fresh.size())));
  return {mean, std::max(mean - half_width, -1.0), std::min(mean + half_width, 1.0)};
}

// ---------------------------------------------------------------------------
// Session-facing mechanism interface
// ---------------------------------------------------------------------------

struct BitResponse {
  bool bit = false;
};
struct ValueResponse {
  double value = 0.0;
};
struct ThresholdoutValueResponse {
  double value = 0.0;
};

/// What an analyst observes per query. The generic oracle only ever emits
/// BitResponse; the leaky baselines emit the value variants.
using MechanismResponse = std::variant<BitResponse, ValueResponse, ThresholdoutValueResponse>;

enum class MechanismHalt { KReached, BudgetExhausted, PoolExhausted };

/// Uniform adaptor so one session loop can drive any validator.
class Mechanism {
public:
  virtual ~Mechanism() = default;
  virtual bool active() const = 0;
  virtual std::optional<MechanismHalt> halt_cause() const = 0;
  virtual MechanismResponse respond(const HypothesisTest& test) = 0;
};

class GenericHoldoutMechanism final : public Mechanism {
public:
  explicit GenericHoldoutMechanism(GenericHoldoutOracle oracle) : oracle_(std::move(oracle)) {}

  bool active() const override { return oracle_.active(); }

  std::optional<MechanismHalt> halt_cause() const override {
    const auto reason = oracle_.lock_reason();
    if (!reason) return std::nullopt;
    return *reason == LockReason::KReached ? MechanismHalt::KReached
                                           : MechanismHalt::BudgetExhausted;
  }

  MechanismResponse respond(const HypothesisTest& test) override {
    return BitResponse{oracle_.query(test)};
  }

  const GenericHoldoutOracle& oracle() const { return oracle_; }

private:
  GenericHoldoutOracle oracle_;
};

class NaiveDisclosureMechanism final : public Mechanism {
public:
  explicit NaiveDisclosureMechanism(Dataset holdout) : holdout_(std::move(holdout)) {}

  bool active() const override { return true; }
  std::optional<MechanismHalt> halt_cause() const override { return std::nullopt; }

  /// Leaks the full statistic of either family.
  MechanismResponse respond(const HypothesisTest& test) override {
    return ValueResponse{test_statistic(test, holdout_)};
  }

private:
  Dataset holdout_;
};

class FreshSplitMechanism final : public Mechanism {
public:
  FreshSplitMechanism(Dataset pool, std::size_t test_size)
      : pool_(std::move(pool)), test_size_(test_size) {
    if (test_size_ == 0) throw DomainError("FreshSplitMechanism: test_size must be >= 1");
  }

  bool active() const override { return pool_.size() - cursor_ >= test_size_; }

  std::optional<MechanismHalt> halt_cause() const override {
    if (active()) return std::nullopt;
    return MechanismHalt::PoolExhausted;
  }

  MechanismResponse respond(const HypothesisTest& test) override {
    const auto* gapped = std::get_if<GappedLossTest>(&test);
    if (gapped == nullptr)
      throw ConfigError("fresh-split mechanism supports gapped-loss tests only");
    auto [bit, next] = fresh_split_query(pool_, cursor_, gapped->loss(), test_size_);
    cursor_ = next;
    return BitResponse{bit};
  }

private:
  Dataset pool_;
  std::size_t test_size_;
  std::size_t cursor_ = 0;
};

class ThresholdoutMechanism final : public Mechanism {
public:
  explicit ThresholdoutMechanism(ThresholdoutBaseline baseline) : baseline_(std::move(baseline)) {}

  bool active() const override { return baseline_.overfit_budget() > 0; }

  std::optional<MechanismHalt> halt_cause() const override {
    if (active()) return std::nullopt;
    return MechanismHalt::PoolExhausted;
  }

  MechanismResponse respond(const HypothesisTest& test) override {
    const auto* gapped = std::get_if<GappedLossTest>(&test);
    if (gapped == nullptr)
      throw ConfigError("thresholdout mechanism supports gapped-loss tests only");
    return ThresholdoutValueResponse{baseline_.query(gapped->loss())};
  }

private:
  ThresholdoutBaseline baseline_;
};

}  // namespace genholdout
