#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "genholdout/analysts.hpp"

using namespace genholdout;

namespace {

std::vector<double> direction_of(const AnalystAction& action) {
  REQUIRE(action.has_value());
  const auto* dir = test_direction(*action);
  REQUIRE(dir != nullptr);
  return *dir;
}

}  // namespace

TEST_CASE("freedman adversary stages basis probes then the combined probe") {
  const Dataset empty(3);
  auto rng = RngStream(1).engine();

  SECTION("first proposal is the first basis vector") {
    FreedmanAdversary adv(3, TestFamily::GappedLoss);
    const AnalystAction a = adv.next(empty, {}, rng);
    CHECK(direction_of(a) == std::vector<double>{1.0, 0.0, 0.0});
    REQUIRE(std::holds_alternative<GappedLossTest>(*a));
  }

  SECTION("correlation family probes carry threshold 1") {
    FreedmanAdversary adv(3, TestFamily::Correlation);
    const AnalystAction a = adv.next(empty, {}, rng);
    REQUIRE(a.has_value());
    const auto* corr = std::get_if<CorrelationTest>(&*a);
    REQUIRE(corr != nullptr);
    CHECK(corr->threshold() == 1.0);
  }

  SECTION("combined probe is sign(c)/sqrt(d) from value responses") {
    FreedmanAdversary adv(2, TestFamily::Correlation);
    const std::vector<MechanismResponse> history{ValueResponse{0.3}, ValueResponse{-0.2}};
    const Dataset empty2(2);
    const AnalystAction a = adv.next(empty2, history, rng);
    const double r = 1.0 / std::sqrt(2.0);
    const auto w = direction_of(a);
    CHECK(w[0] == Catch::Approx(r));
    CHECK(w[1] == Catch::Approx(-r));
  }

  SECTION("sign(0) counts as +1") {
    FreedmanAdversary adv(2, TestFamily::Correlation);
    const std::vector<MechanismResponse> history{ValueResponse{0.0}, ValueResponse{-0.0}};
    const Dataset empty2(2);
    const auto w = direction_of(adv.next(empty2, history, rng));
    CHECK(w[0] > 0.0);
    CHECK(w[1] > 0.0);
  }

  SECTION("bit responses degrade the attack to all-plus signs") {
    FreedmanAdversary adv(2, TestFamily::GappedLoss);
    const std::vector<MechanismResponse> history{BitResponse{false}, BitResponse{true}};
    const Dataset empty2(2);
    const auto w = direction_of(adv.next(empty2, history, rng));
    CHECK(w[0] > 0.0);
    CHECK(w[1] > 0.0);
  }

  SECTION("stops after the combined probe") {
    FreedmanAdversary adv(2, TestFamily::GappedLoss);
    const std::vector<MechanismResponse> history{BitResponse{false}, BitResponse{false},
                                                 BitResponse{false}};
    const Dataset empty2(2);
    CHECK_FALSE(adv.next(empty2, history, rng).has_value());
  }
}

TEST_CASE("random search proposes unit directions deterministically") {
  const Dataset empty(5);
  RandomSearchAnalyst analyst(5);
  auto rng1 = RngStream(99).child(3).engine();
  auto rng2 = RngStream(99).child(3).engine();

  const AnalystAction a = analyst.next(empty, {}, rng1);
  const auto w = direction_of(a);
  double norm_sq = 0.0;
  for (double v : w) norm_sq += v * v;
  CHECK(std::abs(std::sqrt(norm_sq) - 1.0) <= 1e-9);

  RandomSearchAnalyst analyst2(5);
  const AnalystAction b = analyst2.next(empty, {}, rng2);
  CHECK(direction_of(b) == w);
}

TEST_CASE("ols_fit recovers linear structure") {
  SECTION("noiseless recovery is exact") {
    Dataset data(2);
    auto e = RngStream(51).engine();
    for (int i = 0; i < 50; ++i) {
      const double x0 = e.normal(), x1 = e.normal();
      data.add(Sample{{x0, x1}, 3.0 * x0});
    }
    const auto w = ols_fit(data);
    CHECK(w[0] == Catch::Approx(1.0).margin(1e-6));
    CHECK(w[1] == Catch::Approx(0.0).margin(1e-6));
  }

  SECTION("consistent at moderate noise") {
    std::vector<double> w_true(10, 0.0);
    w_true[0] = 0.6;
    w_true[3] = 0.8;
    const auto model = DistributionModel::planted_linear(10, w_true, 0.8, 0.5);
    const Dataset data = sample_dataset(model, 2000, RngStream(8));
    const auto w = ols_fit(data);
    double dot = 0.0;
    for (std::size_t i = 0; i < 10; ++i) dot += w[i] * w_true[i];
    CHECK(dot >= 0.95);
  }

  SECTION("too few samples") {
    const Dataset tiny = sample_dataset(DistributionModel::global_null(5), 4, RngStream(1));
    CHECK_THROWS_AS(ols_fit(tiny), InsufficientDataError);
  }
}

TEST_CASE("run_session contracts") {
  const auto model = DistributionModel::global_null(2);
  const Dataset exploration = sample_dataset(model, 30, RngStream(61));

  SECTION("an immediately stopping analyst leaves an empty session") {
    GenericHoldoutMechanism mech(GenericHoldoutOracle(
        sample_dataset(model, 60, RngStream(62)), BudgetSpec::make(4, 1, 0.05)));
    ImmediateStopAnalyst analyst;
    const SessionResult result =
        run_session(analyst, mech, exploration, model, RngStream(63), SessionLimits{1, 4});
    CHECK(result.confirmed.empty());
    CHECK(result.queries == 0);
    CHECK(result.stop_reason == StopReason::AnalystStopped);
  }

  SECTION("budget exhaustion surfaces as s_exhausted") {
    GenericHoldoutMechanism mech(GenericHoldoutOracle(
        sample_dataset(model, 100, RngStream(64)), BudgetSpec::make(5, 1, 0.05)));
    RandomSearchAnalyst analyst(2);
    const SessionResult result =
        run_session(analyst, mech, exploration, model, RngStream(65), SessionLimits{1, 5});
    CHECK(result.queries == 5);
    CHECK(result.stop_reason == StopReason::SExhausted);
    CHECK(mech.oracle().queries_used() == 5);
  }

  SECTION("no query is issued after the k-th confirmation") {
    // An always-accepting analyst via constant losses versus a session cap.
    class AlwaysYes final : public AnalystStrategy {
    public:
      AnalystAction next(const Dataset&, std::span<const MechanismResponse>,
                         RngEngine&) override {
        return GappedLossTest(LossFunction::constant(1.0), 0.5, "yes");
      }
    };
    GenericHoldoutMechanism mech(GenericHoldoutOracle(
        sample_dataset(model, 100, RngStream(66)), BudgetSpec::make(10, 2, 0.05)));
    AlwaysYes analyst;
    const SessionResult result =
        run_session(analyst, mech, exploration, model, RngStream(67), SessionLimits{2, 10});
    CHECK(result.queries == 2);
    CHECK(result.confirmed.size() == 2);
    CHECK(result.stop_reason == StopReason::KReached);
    CHECK(mech.oracle().queries_used() == 2);
    CHECK(*mech.oracle().lock_reason() == LockReason::KReached);
  }

  SECTION("pool exhaustion surfaces from the fresh-split mechanism") {
    FreshSplitMechanism mech(sample_dataset(model, 100, RngStream(68)), 50);
    RandomSearchAnalyst analyst(2);
    const SessionResult result =
        run_session(analyst, mech, exploration, model, RngStream(69), SessionLimits{1, 100});
    CHECK(result.queries == 2);
    CHECK(result.stop_reason == StopReason::PoolExhausted);
  }

  SECTION("confirmed hypotheses carry model ground truth") {
    const auto planted = DistributionModel::planted_linear(2, {1.0, 0.0}, 0.8, 0.0);
    const Dataset expl = sample_dataset(planted, 100, RngStream(70));
    GenericHoldoutMechanism mech(GenericHoldoutOracle(
        sample_dataset(planted, 200, RngStream(71)), BudgetSpec::make(1, 1, 0.05)));
    PlantedAnalyst analyst;
    const SessionResult result =
        run_session(analyst, mech, expl, planted, RngStream(72), SessionLimits{1, 1});
    REQUIRE(result.confirmed.size() == 1);
    CHECK_FALSE(result.confirmed[0].ground_truth_null);
    CHECK(result.stop_reason == StopReason::KReached);
  }
}
