#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <type_traits>
#include <vector>

#include "genholdout/mechanisms.hpp"

using namespace genholdout;

namespace {

Dataset null_data(std::size_t d, std::size_t n, std::uint64_t seed) {
  return sample_dataset(DistributionModel::global_null(d), n, RngStream(seed));
}

Dataset one_dim(std::initializer_list<std::pair<double, double>> xy) {
  Dataset out(1);
  for (const auto& [x, y] : xy) out.add(Sample{{x}, y});
  return out;
}

}  // namespace

// The one-bit contract, statically: every public accessor of the oracle
// yields either the per-query bit, counters/state, or hash-only transcript
// data. Adding an accessor that returns holdout data or statistics should
// fail this audit.
static_assert(std::is_same_v<decltype(std::declval<GenericHoldoutOracle&>().query(
                                 std::declval<const HypothesisTest&>())),
                             bool>);
static_assert(std::is_same_v<decltype(std::declval<GenericHoldoutOracle&>().query_batch(
                                 std::declval<std::span<const HypothesisTest>>())),
                             std::vector<bool>>);
static_assert(std::is_same_v<decltype(std::declval<const GenericHoldoutOracle&>().state()),
                             OracleState>);
static_assert(std::is_same_v<decltype(std::declval<const GenericHoldoutOracle&>().lock_reason()),
                             std::optional<LockReason>>);
static_assert(std::is_same_v<decltype(std::declval<const GenericHoldoutOracle&>().queries_used()),
                             std::size_t>);
static_assert(std::is_same_v<decltype(std::declval<const GenericHoldoutOracle&>().confirmations()),
                             std::size_t>);
static_assert(std::is_same_v<decltype(std::declval<const GenericHoldoutOracle&>().rejections()),
                             std::size_t>);
static_assert(std::is_same_v<decltype(std::declval<const GenericHoldoutOracle&>().holdout_size()),
                             std::size_t>);
static_assert(std::is_same_v<decltype(std::declval<const GenericHoldoutOracle&>().budget()),
                             const BudgetSpec&>);
static_assert(std::is_same_v<decltype(std::declval<const GenericHoldoutOracle&>().mode()),
                             OracleMode>);
static_assert(std::is_same_v<decltype(std::declval<const GenericHoldoutOracle&>().transcript()),
                             const std::vector<TranscriptEntry>&>);
static_assert(
    std::is_same_v<decltype(std::declval<const GenericHoldoutOracle&>().construction_warning()),
                   const std::optional<std::string>&>);

TEST_CASE("oracle construction and sizing warnings") {
  CHECK_THROWS_AS(GenericHoldoutOracle(Dataset(1), BudgetSpec::make(10, 1, 0.05)),
                  EmptyDataError);

  const GenericHoldoutOracle sized(null_data(1, 80, 1), BudgetSpec::make(1000, 1, 0.05));
  CHECK(sized.state() == OracleState::Active);
  CHECK(sized.budget().alpha == Catch::Approx(5e-5));
  CHECK_FALSE(sized.construction_warning().has_value());

  const GenericHoldoutOracle undersized(null_data(1, 10, 1), BudgetSpec::make(1000, 1, 0.05));
  CHECK(undersized.state() == OracleState::Active);
  CHECK(undersized.construction_warning().has_value());
}

TEST_CASE("query returns one bit and locks on the stop rule") {
  GenericHoldoutOracle oracle(null_data(1, 40, 2), BudgetSpec::make(2, 1, 0.05));
  const HypothesisTest always = GappedLossTest(LossFunction::constant(1.0), 0.5, "always");
  CHECK(oracle.query(always) == true);
  CHECK(oracle.state() == OracleState::Locked);
  REQUIRE(oracle.lock_reason().has_value());
  CHECK(*oracle.lock_reason() == LockReason::KReached);
  CHECK(oracle.confirmations() == 1);

  CHECK_THROWS_AS(oracle.query(always), LockedError);
  try {
    oracle.query(always);
    FAIL("expected LockedError");
  } catch (const LockedError& e) {
    CHECK(e.reason() == LockReason::KReached);
  }
}

TEST_CASE("budget exhaustion locks with the budget reason") {
  GenericHoldoutOracle oracle(null_data(1, 60, 3), BudgetSpec::make(2, 2, 0.05));
  const HypothesisTest never = GappedLossTest(LossFunction::constant(-1.0), 0.5, "never");
  CHECK(oracle.query(never) == false);
  CHECK(oracle.state() == OracleState::Active);
  CHECK(oracle.query(never) == false);
  CHECK(oracle.state() == OracleState::Locked);
  CHECK(*oracle.lock_reason() == LockReason::BudgetExhausted);
  CHECK(oracle.queries_used() == 2);
  CHECK(oracle.rejections() == 2);
}

TEST_CASE("a null gapped query answers 0 at comfortable holdout sizes") {
  // alpha = 0.05 / 50 = 1e-3; the Hoeffding bound at h = 200 is e^{-25}.
  GenericHoldoutOracle oracle(null_data(1, 200, 9), BudgetSpec::make(50, 1, 0.05));
  const HypothesisTest test = GappedLossTest(make_linear_loss({1.0}), 0.5, "null-probe");
  CHECK(oracle.query(test) == false);
}

TEST_CASE("too-weak tests are refused without consuming budget") {
  GenericHoldoutOracle oracle(null_data(1, 10, 4), BudgetSpec::make(1000, 1, 0.05));
  const HypothesisTest test = GappedLossTest(make_linear_loss({1.0}), 0.5, "weak");
  CHECK_THROWS_AS(oracle.query(test), TestTooWeakError);
  CHECK(oracle.queries_used() == 0);
  CHECK(oracle.state() == OracleState::Active);
  CHECK(oracle.transcript().empty());

  SECTION("a correlation query without a calibration table is refused too") {
    GenericHoldoutOracle big(null_data(1, 1000, 4), BudgetSpec::make(10, 1, 0.05));
    CHECK_THROWS_AS(big.query(HypothesisTest(CorrelationTest({1.0}, 1.0))), TestTooWeakError);
  }

  SECTION("a calibration table certifies correlation queries") {
    CalibrationTable table;
    table.set(400, CalibrationEntry{0.0, 4.6e-5, 100'000});
    GenericHoldoutOracle with_table(null_data(1, 400, 4), BudgetSpec::make(10, 1, 0.05),
                                    OracleMode::StopOnConfirms, table);
    CHECK(with_table.query(HypothesisTest(CorrelationTest({1.0}, 1.0))) == false);
    CHECK(with_table.queries_used() == 1);
  }
}

TEST_CASE("query_batch validates everything up front") {
  GenericHoldoutOracle oracle(null_data(1, 60, 5), BudgetSpec::make(8, 2, 0.05));
  const std::vector<HypothesisTest> pair{
      GappedLossTest(LossFunction::constant(1.0), 0.5, "yes"),
      GappedLossTest(LossFunction::constant(-1.0), 0.5, "no")};

  SECTION("empty batch consumes nothing") {
    const auto bits = oracle.query_batch(std::span<const HypothesisTest>{});
    CHECK(bits.empty());
    CHECK(oracle.queries_used() == 0);
  }

  SECTION("bits come back in order") {
    const auto bits = oracle.query_batch(pair);
    REQUIRE(bits.size() == 2);
    CHECK(bits[0] == true);
    CHECK(bits[1] == false);
    CHECK(oracle.queries_used() == 2);
  }

  SECTION("oversized batches are refused whole") {
    const std::vector<HypothesisTest> nine(9, pair[1]);
    CHECK_THROWS_AS(oracle.query_batch(nine), SizeError);
    CHECK(oracle.queries_used() == 0);
  }

  SECTION("one weak member poisons the batch before any budget is spent") {
    GenericHoldoutOracle small(null_data(1, 10, 5), BudgetSpec::make(8, 2, 0.05));
    const std::vector<HypothesisTest> mixed{
        GappedLossTest(LossFunction::constant(1.0), 0.5, "fine"),
        GappedLossTest(make_linear_loss({1.0}), 0.5, "too-weak-at-h-10")};
    // Constant losses certify like any gapped test; at h=10 the family bound
    // e^{-10/8} exceeds alpha, so the whole batch is refused.
    CHECK_THROWS_AS(small.query_batch(mixed), TestTooWeakError);
    CHECK(small.queries_used() == 0);
  }

  SECTION("a batch keeps answering past the k-th confirmation, then locks") {
    const std::vector<HypothesisTest> three(3, pair[0]);
    const auto bits = oracle.query_batch(three);
    CHECK(bits == std::vector<bool>{true, true, true});
    CHECK(oracle.confirmations() == 2);  // saturated at k_max
    CHECK(oracle.queries_used() == 3);
    CHECK(*oracle.lock_reason() == LockReason::KReached);
    CHECK(oracle.transcript().size() == 3);
  }
}

TEST_CASE("complementary mode locks on rejections") {
  GenericHoldoutOracle oracle(null_data(1, 60, 6), BudgetSpec::make(8, 1, 0.05),
                              OracleMode::StopOnRejects);
  const HypothesisTest yes = GappedLossTest(LossFunction::constant(1.0), 0.5, "yes");
  const HypothesisTest no = GappedLossTest(LossFunction::constant(-1.0), 0.5, "no");
  CHECK(oracle.query(yes) == true);
  CHECK(oracle.state() == OracleState::Active);
  CHECK(oracle.query(no) == false);
  CHECK(oracle.state() == OracleState::Locked);
  CHECK(*oracle.lock_reason() == LockReason::KReached);
  CHECK(oracle.rejections() == 1);
}

TEST_CASE("transcript is an append-only hash+bit log") {
  // alpha = 0.05 / 8^4; h = 100 certifies at e^{-12.5}.
  GenericHoldoutOracle oracle(null_data(1, 100, 7), BudgetSpec::make(8, 4, 0.05));
  CHECK(oracle.transcript().empty());

  const HypothesisTest a = GappedLossTest(LossFunction::constant(1.0), 0.5, "a");
  const HypothesisTest b = GappedLossTest(LossFunction::constant(-1.0), 0.5, "b");
  std::vector<bool> returned;
  returned.push_back(oracle.query(a));
  returned.push_back(oracle.query(b));
  returned.push_back(oracle.query(a));

  const auto& log = oracle.transcript();
  REQUIRE(log.size() == 3);
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].query_index == i + 1);
    CHECK(log[i].bit == returned[i]);
    CHECK(log[i].test_hash.size() == 64);
  }
  CHECK(log[0].test_hash == test_hash(a));
  CHECK(log[0].test_hash == log[2].test_hash);
  CHECK(log[0].test_hash != log[1].test_hash);

  SECTION("hashes do not depend on the sealed data") {
    GenericHoldoutOracle other(null_data(1, 100, 999), BudgetSpec::make(8, 4, 0.05));
    other.query(a);
    CHECK(other.transcript()[0].test_hash == log[0].test_hash);
  }
}

TEST_CASE("naive disclosure returns the exact statistic, forever") {
  const Dataset holdout = null_data(1, 100, 4);
  CHECK(naive_disclosure_query(holdout, LossFunction::constant(0.25)) == 0.25);
  const auto loss = make_linear_loss({1.0});
  const double v1 = naive_disclosure_query(holdout, loss);
  const double v2 = naive_disclosure_query(holdout, loss);
  CHECK(v1 == v2);
  CHECK(v1 > -0.3);
  CHECK(v1 < 0.3);
  CHECK_THROWS_AS(naive_disclosure_query(Dataset(1), loss), EmptyDataError);
}

TEST_CASE("fresh split consumes the pool linearly") {
  const Dataset pool = null_data(1, 100, 8);
  const auto loss = make_linear_loss({1.0});
  auto [bit1, cursor1] = fresh_split_query(pool, 0, loss, 50);
  CHECK(cursor1 == 50);
  CHECK_FALSE(bit1);  // null chunk
  auto [bit2, cursor2] = fresh_split_query(pool, cursor1, loss, 50);
  CHECK(cursor2 == 100);
  CHECK_THROWS_AS(fresh_split_query(pool, cursor2, loss, 50), PoolExhaustedError);

  SECTION("an accepting chunk") {
    Dataset ones(1);
    for (int i = 0; i < 10; ++i) ones.add(Sample{{1.0}, 1.0});
    const auto [bit, next] = fresh_split_query(ones, 0, loss, 10);
    CHECK(bit);
    CHECK(next == 10);
  }
}

TEST_CASE("thresholdout baseline follows the similarity rule") {
  // Exploration mean loss 0.8; holdout mean loss 0.9 (difference 0.1).
  const Dataset exploration = one_dim({{0.8, 1.0}, {0.8, 1.0}});
  const Dataset holdout = one_dim({{0.9, 1.0}, {0.9, 1.0}});
  const auto loss = make_linear_loss({1.0});

  SECTION("similar answers come from the exploration set, free of charge") {
    ThresholdoutBaseline similar(holdout, exploration, 0.2, 0.0, 3, RngStream(1));
    CHECK(thresholdout_query(similar, loss) == Catch::Approx(0.8));
    CHECK(similar.overfit_budget() == 3);
  }

  SECTION("dissimilar answers cost budget and come from the holdout") {
    ThresholdoutBaseline strict(holdout, exploration, 0.05, 0.0, 2, RngStream(1));
    CHECK(thresholdout_query(strict, loss) == Catch::Approx(0.9));
    CHECK(strict.overfit_budget() == 1);
    CHECK(thresholdout_query(strict, loss) == Catch::Approx(0.9));
    CHECK(strict.overfit_budget() == 0);
    CHECK_THROWS_AS(thresholdout_query(strict, loss), OverfitBudgetExhaustedError);
  }

  SECTION("noise draws are stream-deterministic") {
    ThresholdoutBaseline a(holdout, exploration, 0.05, 0.1, 5, RngStream(42));
    ThresholdoutBaseline b(holdout, exploration, 0.05, 0.1, 5, RngStream(42));
    for (int i = 0; i < 5 && a.overfit_budget() > 0 && b.overfit_budget() > 0; ++i) {
      CHECK(thresholdout_query(a, loss) == thresholdout_query(b, loss));
    }
  }
}

TEST_CASE("estimate_confidence computes Hoeffding intervals") {
  Dataset fresh(1);
  for (int i = 0; i < 100; ++i) fresh.add(Sample{{0.0}, 0.0});
  const auto constant = LossFunction::constant(0.7);

  const ConfidenceEstimate est = estimate_confidence(constant, fresh, 0.95);
  CHECK(est.mean == Catch::Approx(0.7));
  CHECK(est.hi - est.mean == Catch::Approx(0.2716203).margin(1e-6));
  CHECK(est.mean - est.lo == Catch::Approx(0.2716203).margin(1e-6));

  SECTION("level 1 clamps to the loss range") {
    const ConfidenceEstimate full = estimate_confidence(constant, fresh, 1.0);
    CHECK(full.lo == -1.0);
    CHECK(full.hi == 1.0);
  }

  SECTION("doubling n shrinks the half-width by sqrt(2)") {
    Dataset doubled(1);
    for (int i = 0; i < 200; ++i) doubled.add(Sample{{0.0}, 0.0});
    const ConfidenceEstimate wide = estimate_confidence(constant, fresh, 0.95);
    const ConfidenceEstimate narrow = estimate_confidence(constant, doubled, 0.95);
    CHECK((wide.hi - wide.mean) / (narrow.hi - narrow.mean) ==
          Catch::Approx(std::sqrt(2.0)).epsilon(1e-12));
  }

  CHECK_THROWS_AS(estimate_confidence(constant, Dataset(1), 0.95), EmptyDataError);
  CHECK_THROWS_AS(estimate_confidence(constant, fresh, 0.0), DomainError);
}

TEST_CASE("mechanism adaptors expose the right response kinds") {
  const HypothesisTest gapped = GappedLossTest(LossFunction::constant(1.0), 0.5, "g");

  GenericHoldoutMechanism generic(
      GenericHoldoutOracle(null_data(1, 40, 10), BudgetSpec::make(2, 1, 0.05)));
  CHECK(std::holds_alternative<BitResponse>(generic.respond(gapped)));
  CHECK_FALSE(generic.active());
  CHECK(*generic.halt_cause() == MechanismHalt::KReached);

  NaiveDisclosureMechanism naive(null_data(1, 40, 10));
  CHECK(std::holds_alternative<ValueResponse>(naive.respond(gapped)));
  CHECK(naive.active());

  FreshSplitMechanism fresh(null_data(1, 40, 10), 20);
  CHECK(std::holds_alternative<BitResponse>(fresh.respond(gapped)));
  fresh.respond(gapped);
  CHECK_FALSE(fresh.active());
  CHECK(*fresh.halt_cause() == MechanismHalt::PoolExhausted);

  ThresholdoutMechanism thresh(
      ThresholdoutBaseline(null_data(1, 40, 10), null_data(1, 40, 11), 0.05, 0.0, 1, RngStream(1)));
  CHECK(std::holds_alternative<ThresholdoutValueResponse>(thresh.respond(gapped)));
}
