#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "genholdout/analysts.hpp"
#include "genholdout/core.hpp"
#include "genholdout/detail/parallel.hpp"
#include "genholdout/errors.hpp"
#include "genholdout/mechanisms.hpp"
#include "genholdout/rng.hpp"
#include "genholdout/testkit.hpp"

namespace genholdout {

/// Wilson score interval for a binomial proportion.
inline std::pair<double, double> wilson_ci(std::size_t successes, std::size_t trials,
                                           double level) {
  if (trials < 1) throw DomainError("wilson_ci: trials must be >= 1");
  if (successes > trials) throw DomainError("wilson_ci: successes must not exceed trials");
  if (!(level > 0.0) || !(level < 1.0)) throw DomainError("wilson_ci: level must lie in (0, 1)");
  const double z = boost::math::quantile(boost::math::normal_distribution<double>(),
                                         0.5 * (1.0 + level));
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  // The boundary counts collapse algebraically to exact endpoints.
  const double lo = successes == 0 ? 0.0 : std::max(0.0, center - half);
  const double hi = successes == trials ? 1.0 : std::min(1.0, center + half);
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// Experiment description
// ---------------------------------------------------------------------------

enum class MechanismKind { GenericHoldout, NaiveDisclosure, FreshSplit, Thresholdout };
enum class AnalystKind { RandomSearch, Freedman, Planted, ImmediateStop };

struct ModelSpec {
  enum class Kind { GlobalNull, PlantedLinear };

  Kind kind = Kind::GlobalNull;
  std::size_t d = 1;
  std::optional<std::vector<double>> w_true;  ///< planted; defaults to e_1
  double mu = 0.0;
  double sigma_y = 0.0;

  /// Cheap consistency checks; build() additionally runs the planted-model
  /// scale calibration, so config validation goes through here instead.
  void validate() const {
    if (d == 0) throw ConfigError("model: d must be >= 1");
    if (kind == Kind::GlobalNull) return;
    if (!(mu > 0.0) || mu > 1.0) throw ConfigError("model: mu must lie in (0, 1]");
    if (!(sigma_y >= 0.0)) throw ConfigError("model: sigma_y must be >= 0");
    if (w_true) {
      if (w_true->size() != d) throw ConfigError("model: w_true dimension mismatch");
      if (!detail::is_unit(*w_true)) throw ConfigError("model: w_true must be unit length");
    }
  }

  DistributionModel build() const {
    if (kind == Kind::GlobalNull) return DistributionModel::global_null(d);
    std::vector<double> w = w_true ? *w_true : detail::basis_vector(d, 0);
    return DistributionModel::planted_linear(d, std::move(w), mu, sigma_y);
  }

  bool operator==(const ModelSpec&) const = default;
};

struct MechanismParams {
  OracleMode mode = OracleMode::StopOnConfirms;           // generic holdout
  std::size_t fresh_split_test_size = 0;                  // fresh split
  double similarity_threshold = ThresholdoutBaseline::kDefaultSimilarityThreshold;
  double noise_scale = ThresholdoutBaseline::kDefaultNoiseScale;
  std::optional<std::size_t> overfit_budget;              // thresholdout; default h^2/100

  bool operator==(const MechanismParams&) const = default;
};

struct AnalystParams {
  std::optional<TestFamily> freedman_family;  ///< default chosen by mechanism kind

  bool operator==(const AnalystParams&) const = default;
};

/// A complete, reproducible Monte Carlo experiment: population, sizes,
/// validity budget, mechanism, analyst, replication count, root seed.
struct ExperimentConfig {
  ModelSpec model;
  std::size_t n_total = 0;
  std::optional<std::size_t> holdout_size;  ///< nullopt = auto via required_holdout_size
  std::size_t s_max = 1;
  std::size_t k_max = 1;
  double p0 = 0.05;
  MechanismKind mechanism = MechanismKind::GenericHoldout;
  MechanismParams mechanism_params;
  AnalystKind analyst = AnalystKind::RandomSearch;
  AnalystParams analyst_params;
  std::size_t replications = 1;
  std::uint64_t seed = 0;

  std::size_t resolved_holdout_size() const {
    if (holdout_size) return *holdout_size;
    if (s_max < 1 || k_max < 1)
      throw ConfigError("holdout_size \"auto\" needs s >= 1 and k >= 1");
    return required_holdout_size(s_max, k_max, p0);
  }

  void validate() const {
    (void)BudgetSpec::make(s_max, k_max, p0);
    const std::size_t h = resolved_holdout_size();
    if (h > n_total) throw ConfigError("holdout_size exceeds n_total");
    if (replications < 1) throw ConfigError("replications must be >= 1");
    if (mechanism == MechanismKind::FreshSplit && mechanism_params.fresh_split_test_size == 0)
      throw ConfigError("fresh_split mechanism needs test_size >= 1");
    if (analyst == AnalystKind::Planted && model.kind != ModelSpec::Kind::PlantedLinear)
      throw ConfigError("planted analyst needs a planted_linear model");
    model.validate();
  }

  bool operator==(const ExperimentConfig&) const = default;
};

/// Counters extracted from one replication's session.
struct ReplicationOutcome {
  std::size_t queries_used = 0;
  std::size_t confirmations = 0;
  std::size_t false_confirmations = 0;
  std::size_t true_confirmations = 0;
  StopReason stop_reason = StopReason::AnalystStopped;
};

namespace detail {

// Fixed substream labels under each replication's stream.
inline constexpr std::uint64_t kDataLabel = 0;
inline constexpr std::uint64_t kPartitionLabel = 1;
inline constexpr std::uint64_t kMechanismLabel = 2;
inline constexpr std::uint64_t kSessionLabel = 3;

inline std::unique_ptr<Mechanism> make_mechanism(const ExperimentConfig& cfg, Dataset holdout,
                                                 const Dataset& exploration,
                                                 const RngStream& rng) {
  switch (cfg.mechanism) {
    case MechanismKind::GenericHoldout:
      return std::make_unique<GenericHoldoutMechanism>(GenericHoldoutOracle(
          std::move(holdout), BudgetSpec::make(cfg.s_max, cfg.k_max, cfg.p0),
          cfg.mechanism_params.mode));
    case MechanismKind::NaiveDisclosure:
      return std::make_unique<NaiveDisclosureMechanism>(std::move(holdout));
    case MechanismKind::FreshSplit:
      return std::make_unique<FreshSplitMechanism>(std::move(holdout),
                                                   cfg.mechanism_params.fresh_split_test_size);
    case MechanismKind::Thresholdout: {
      const std::size_t budget =
          cfg.mechanism_params.overfit_budget
              ? *cfg.mechanism_params.overfit_budget
              : ThresholdoutBaseline::default_overfit_budget(holdout.size());
      return std::make_unique<ThresholdoutMechanism>(ThresholdoutBaseline(
          std::move(holdout), exploration, cfg.mechanism_params.similarity_threshold,
          cfg.mechanism_params.noise_scale, budget, rng));
    }
  }
  throw ConfigError("unknown mechanism kind");
}

inline TestFamily default_freedman_family(MechanismKind kind) {
  // Value-leaking mechanisms are attacked with the raw correlation probes;
  // bit-only and gapped-only mechanisms get the truncated-loss variant so
  // the per-test level is satisfiable.
  return kind == MechanismKind::NaiveDisclosure ? TestFamily::Correlation
                                                : TestFamily::GappedLoss;
}

inline std::unique_ptr<AnalystStrategy> make_analyst(const ExperimentConfig& cfg) {
  switch (cfg.analyst) {
    case AnalystKind::RandomSearch:
      return std::make_unique<RandomSearchAnalyst>(cfg.model.d);
    case AnalystKind::Freedman: {
      const TestFamily family = cfg.analyst_params.freedman_family
                                    ? *cfg.analyst_params.freedman_family
                                    : default_freedman_family(cfg.mechanism);
      return std::make_unique<FreedmanAdversary>(cfg.model.d, family);
    }
    case AnalystKind::Planted:
      return std::make_unique<PlantedAnalyst>();
    case AnalystKind::ImmediateStop:
      return std::make_unique<ImmediateStopAnalyst>();
  }
  throw ConfigError("unknown analyst kind");
}

inline ReplicationOutcome run_replication_impl(const ExperimentConfig& cfg,
                                               const DistributionModel& model,
                                               std::size_t rep_index) {
  const RngStream rep_rng = RngStream(cfg.seed).child(rep_index);
  const Dataset data = sample_dataset(model, cfg.n_total, rep_rng.child(kDataLabel));
  DataPartition part = partition(data, cfg.resolved_holdout_size(), rep_rng.child(kPartitionLabel));

  const auto analyst = make_analyst(cfg);
  const Dataset exploration = std::move(part.exploration);
  const auto mechanism =
      make_mechanism(cfg, std::move(part.holdout), exploration, rep_rng.child(kMechanismLabel));

  const SessionResult session =
      run_session(*analyst, *mechanism, exploration, model, rep_rng.child(kSessionLabel),
                  SessionLimits{cfg.k_max, cfg.s_max});

  ReplicationOutcome out;
  out.queries_used = session.queries;
  out.confirmations = session.confirmed.size();
  for (const auto& c : session.confirmed) {
    if (c.ground_truth_null) {
      ++out.false_confirmations;
    } else {
      ++out.true_confirmations;
    }
  }
  out.stop_reason = session.stop_reason;
  return out;
}

}  // namespace detail

/// One draw of the experiment's probability space; a pure, deterministic
/// function of (config, rep_index).
inline ReplicationOutcome run_replication(const ExperimentConfig& cfg, std::size_t rep_index) {
  if (rep_index >= cfg.replications) throw DomainError("run_replication: rep_index out of range");
  cfg.validate();
  return detail::run_replication_impl(cfg, cfg.model.build(), rep_index);
}

/// All replications, indexed by rep_index. Parallel across replications;
/// thread count never affects the outcomes.
inline std::vector<ReplicationOutcome> run_experiment(const ExperimentConfig& cfg,
                                                      unsigned threads = 0) {
  cfg.validate();
  const DistributionModel model = cfg.model.build();
  std::vector<ReplicationOutcome> outcomes(cfg.replications);
  detail::parallel_for(cfg.replications, threads, [&](std::size_t rep) {
    outcomes[rep] = detail::run_replication_impl(cfg, model, rep);
  });
  return outcomes;
}

/// Estimated family-wise error rate with its theoretical budget bound.
struct FwerEstimate {
  double false_discovery_rate = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 1.0;
  double theoretical_bound = 0.0;  ///< s_max^k_max * alpha = p0
  bool bound_satisfied = false;    ///< rate <= bound + 3 sigma_MC
  std::size_t events = 0;
  std::size_t replications = 0;
};

struct PowerEstimate {
  double power = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 1.0;
  std::size_t events = 0;
  std::size_t replications = 0;
};

/// Fold outcomes into the FWER estimate. Pure counting, so any aggregation
/// order gives identical results.
inline FwerEstimate aggregate_fwer(const ExperimentConfig& cfg,
                                   std::span<const ReplicationOutcome> outcomes) {
  if (cfg.model.kind != ModelSpec::Kind::GlobalNull)
    throw ConfigError("estimate_fwer: FWER is defined against the global null model only");
  if (outcomes.empty()) throw DomainError("aggregate_fwer: no replication outcomes");
  FwerEstimate est;
  est.replications = outcomes.size();
  for (const auto& o : outcomes) {
    if (o.false_confirmations >= 1) ++est.events;
  }
  est.false_discovery_rate =
      static_cast<double>(est.events) / static_cast<double>(outcomes.size());
  std::tie(est.wilson_lo, est.wilson_hi) = wilson_ci(est.events, outcomes.size(), 0.95);
  est.theoretical_bound = cfg.p0;
  const double sigma_mc =
      std::sqrt(cfg.p0 * (1.0 - cfg.p0) / static_cast<double>(outcomes.size()));
  est.bound_satisfied = est.false_discovery_rate <= est.theoretical_bound + 3.0 * sigma_mc;
  return est;
}

inline PowerEstimate aggregate_power(const ExperimentConfig& cfg,
                                     std::span<const ReplicationOutcome> outcomes) {
  if (cfg.model.kind != ModelSpec::Kind::PlantedLinear)
    throw ConfigError("estimate_power: power is defined against a planted model only");
  if (outcomes.empty()) throw DomainError("aggregate_power: no replication outcomes");
  PowerEstimate est;
  est.replications = outcomes.size();
  for (const auto& o : outcomes) {
    if (o.true_confirmations >= 1) ++est.events;
  }
  est.power = static_cast<double>(est.events) / static_cast<double>(outcomes.size());
  std::tie(est.wilson_lo, est.wilson_hi) = wilson_ci(est.events, outcomes.size(), 0.95);
  return est;
}

/// Fraction of replications confirming at least one false hypothesis, with
/// a Wilson 95% interval and the budget's theoretical bound check.
inline FwerEstimate estimate_fwer(const ExperimentConfig& cfg, unsigned threads = 0) {
  if (cfg.model.kind != ModelSpec::Kind::GlobalNull)
    throw ConfigError("estimate_fwer: FWER is defined against the global null model only");
  const auto outcomes = run_experiment(cfg, threads);
  return aggregate_fwer(cfg, outcomes);
}

/// Fraction of replications confirming at least one true hypothesis.
inline PowerEstimate estimate_power(const ExperimentConfig& cfg, unsigned threads = 0) {
  if (cfg.model.kind != ModelSpec::Kind::PlantedLinear)
    throw ConfigError("estimate_power: power is defined against a planted model only");
  const auto outcomes = run_experiment(cfg, threads);
  return aggregate_power(cfg, outcomes);
}

}  // namespace genholdout
