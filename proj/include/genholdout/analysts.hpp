#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "genholdout/core.hpp"
#include "genholdout/errors.hpp"
#include "genholdout/mechanisms.hpp"
#include "genholdout/rng.hpp"
#include "genholdout/testkit.hpp"

namespace genholdout {

/// Which test family an analyst crafts its probes in.
enum class TestFamily { GappedLoss, Correlation };

/// A proposed hypothesis test, or nothing to signal "stop exploring".
using AnalystAction = std::optional<HypothesisTest>;

/// A sequential hypothesis-proposing policy. The only inputs are the
/// exploration set, the mechanism's past responses, and a seeded engine —
/// a strategy is structurally unable to peek at the holdout.
class AnalystStrategy {
public:
  virtual ~AnalystStrategy() = default;
  virtual AnalystAction next(const Dataset& exploration,
                             std::span<const MechanismResponse> history, RngEngine& rng) = 0;
};

namespace detail {

inline std::vector<double> basis_vector(std::size_t d, std::size_t i) {
  std::vector<double> e(d, 0.0);
  e[i] = 1.0;
  return e;
}

inline HypothesisTest make_family_test(TestFamily family, std::vector<double> w,
                                       std::string label) {
  if (family == TestFamily::Correlation) return CorrelationTest(std::move(w), 1.0);
  return GappedLossTest(make_linear_loss(std::move(w)), 0.5, std::move(label));
}

inline double response_value_sign(const MechanismResponse& resp) {
  return std::visit(
      [](const auto& r) -> double {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, BitResponse>) {
          // One-bit responses carry no usable sign information; the attack
          // degrades to the fixed all-positive guess.
          return 1.0;
        } else {
          return r.value < 0.0 ? -1.0 : 1.0;
        }
      },
      resp);
}

}  // namespace detail

/// The weak-probes-then-combine adversary. Stage one submits the d
/// coordinate hypotheses e_1..e_d; against a value-leaking mechanism it
/// reads off the empirical correlations c_i, and the final query combines
/// them into w* = sign(c) / sqrt(d) (sign(0) taken as +1). Against a
/// one-bit mechanism the signs are unobservable and the final probe is the
/// fixed all-(+1) direction. Stops after the combined query.
class FreedmanAdversary final : public AnalystStrategy {
public:
  FreedmanAdversary(std::size_t d, TestFamily family) : d_(d), family_(family) {
    if (d_ == 0) throw DomainError("FreedmanAdversary: d must be >= 1");
  }

  AnalystAction next(const Dataset&, std::span<const MechanismResponse> history,
                     RngEngine&) override {
    const std::size_t stage = history.size();
    if (stage < d_) {
      return detail::make_family_test(family_, detail::basis_vector(d_, stage),
                                      "freedman-probe-" + std::to_string(stage + 1));
    }
    if (stage == d_) {
      const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d_));
      std::vector<double> w(d_);
      for (std::size_t i = 0; i < d_; ++i) {
        w[i] = detail::response_value_sign(history[i]) * inv_sqrt_d;
      }
      return detail::make_family_test(family_, std::move(w), "freedman-combined");
    }
    return std::nullopt;
  }

private:
  std::size_t d_;
  TestFamily family_;
};

/// Budget stressor: proposes an endless stream of independent uniformly
/// random unit directions as gapped-loss tests.
class RandomSearchAnalyst final : public AnalystStrategy {
public:
  explicit RandomSearchAnalyst(std::size_t d) : d_(d) {
    if (d_ == 0) throw DomainError("RandomSearchAnalyst: d must be >= 1");
  }

  AnalystAction next(const Dataset&, std::span<const MechanismResponse>,
                     RngEngine& rng) override {
    std::vector<double> w(d_);
    double norm = 0.0;
    do {
      for (auto& v : w) v = rng.normal();
      norm = detail::l2_norm(w);
    } while (!(norm > 0.0));
    for (auto& v : w) v /= norm;
    return GappedLossTest(make_linear_loss(std::move(w)), 0.5, "random-search");
  }

private:
  std::size_t d_;
};

/// Least-squares coefficients of y on x, normalized to unit length. Falls
/// back to a tiny ridge (lambda = 1e-6) when the Gram matrix is not
/// positive definite.
inline std::vector<double> ols_fit(const Dataset& exploration) {
  const std::size_t n = exploration.size();
  const std::size_t d = exploration.dimension();
  if (n < d) throw InsufficientDataError("ols_fit: need at least d samples");

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd moment = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd x(d);
  for (const Sample& s : exploration) {
    for (std::size_t j = 0; j < d; ++j) x[static_cast<Eigen::Index>(j)] = s.x[j];
    gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
    moment += s.y * x;
  }
  gram = gram.selfadjointView<Eigen::Lower>();

  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  Eigen::VectorXd w;
  if (llt.info() == Eigen::Success) {
    w = llt.solve(moment);
  } else {
    const Eigen::MatrixXd ridged = gram + 1e-6 * Eigen::MatrixXd::Identity(d, d);
    w = Eigen::LLT<Eigen::MatrixXd>(ridged).solve(moment);
  }

  const double norm = w.norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw NormError("ols_fit: degenerate fit cannot be normalized");
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = w[static_cast<Eigen::Index>(j)] / norm;
  return out;
}

/// Fits one direction by least squares on the exploration set, submits it
/// once as a gapped-loss test, and stops.
class PlantedAnalyst final : public AnalystStrategy {
public:
  AnalystAction next(const Dataset& exploration, std::span<const MechanismResponse> history,
                     RngEngine&) override {
    if (!history.empty()) return std::nullopt;
    return GappedLossTest(make_linear_loss(ols_fit(exploration)), 0.5, "planted-ols");
  }
};

/// Proposes nothing; useful as a session smoke probe.
class ImmediateStopAnalyst final : public AnalystStrategy {
public:
  AnalystAction next(const Dataset&, std::span<const MechanismResponse>, RngEngine&) override {
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

enum class StopReason { KReached, SExhausted, AnalystStopped, PoolExhausted };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::KReached: return "k_reached";
    case StopReason::SExhausted: return "s_exhausted";
    case StopReason::AnalystStopped: return "analyst_stopped";
    case StopReason::PoolExhausted: return "pool_exhausted";
  }
  return "unknown";
}

/// A confirmed hypothesis together with its model ground truth. The label
/// comes from the population definition, never from data.
struct ConfirmedHypothesis {
  HypothesisTest test;
  bool ground_truth_null = true;
};

struct SessionResult {
  std::vector<ConfirmedHypothesis> confirmed;
  std::vector<MechanismResponse> history;
  std::size_t queries = 0;
  StopReason stop_reason = StopReason::AnalystStopped;
};

/// Session-level mirror of the validity budget, enforced on every mechanism
/// (the generic oracle additionally enforces it internally).
struct SessionLimits {
  std::size_t k_max = std::numeric_limits<std::size_t>::max();
  std::size_t s_max = std::numeric_limits<std::size_t>::max();
};

namespace detail {

inline StopReason to_stop_reason(MechanismHalt halt) {
  switch (halt) {
    case MechanismHalt::KReached: return StopReason::KReached;
    case MechanismHalt::BudgetExhausted: return StopReason::SExhausted;
    case MechanismHalt::PoolExhausted: return StopReason::PoolExhausted;
  }
  return StopReason::PoolExhausted;
}

inline bool response_accepts(const HypothesisTest& test, const MechanismResponse& resp) {
  return std::visit(
      [&](const auto& r) -> bool {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, BitResponse>) {
          return r.bit;
        } else {
          return r.value > test_threshold(test);
        }
      },
      resp);
}

inline bool ground_truth_null(const DistributionModel& model, const HypothesisTest& test) {
  if (const auto* w = test_direction(test)) return model.is_null_hypothesis(*w);
  if (model.is_global_null()) return true;
  throw ConfigError("ground truth undefined for a non-linear hypothesis under a planted model");
}

}  // namespace detail

/// Drive the propose/validate loop until the analyst stops, the mechanism
/// halts, or a session limit is reached. Never issues a query once k_max
/// confirmations stand, mirroring the bounded-selection stop discipline.
inline SessionResult run_session(AnalystStrategy& analyst, Mechanism& mechanism,
                                 const Dataset& exploration, const DistributionModel& model,
                                 const RngStream& rng, SessionLimits limits = {}) {
  SessionResult result;
  RngEngine engine = rng.engine();
  for (;;) {
    if (result.confirmed.size() >= limits.k_max) {
      result.stop_reason = StopReason::KReached;
      break;
    }
    if (result.queries >= limits.s_max) {
      result.stop_reason = StopReason::SExhausted;
      break;
    }
    if (!mechanism.active()) {
      result.stop_reason = detail::to_stop_reason(*mechanism.halt_cause());
      break;
    }
    AnalystAction action = analyst.next(exploration, result.history, engine);
    if (!action) {
      result.stop_reason = StopReason::AnalystStopped;
      break;
    }
    const MechanismResponse response = mechanism.respond(*action);
    result.history.push_back(response);
    ++result.queries;
    if (detail::response_accepts(*action, response)) {
      const bool is_null = detail::ground_truth_null(model, *action);
      result.confirmed.push_back({std::move(*action), is_null});
    }
  }
  return result;
}

}  // namespace genholdout
