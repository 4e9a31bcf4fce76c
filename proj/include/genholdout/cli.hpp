#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "genholdout/analysts.hpp"
#include "genholdout/io.hpp"
#include "genholdout/mechanisms.hpp"
#include "genholdout/simharness.hpp"
#include "genholdout/testkit.hpp"

namespace genholdout {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitBoundViolation = 3;

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

struct CalibrateOptions {
  std::vector<std::size_t> s_values{1000};
  std::vector<std::size_t> k_values{1};
  double p0 = 0.05;
  std::string family = "gapped";  // gapped | correlation
  std::size_t replications = 100'000;
  std::uint64_t seed = 1;
  std::string out_path;  // optional JSON dump
  unsigned threads = 0;
};

/// Holdout sizing for a grid of budgets: the closed-form Hoeffding size for
/// the gapped family, or a doubling Monte Carlo scan against the calibration
/// table's upper bound for the correlation family.
inline int cmd_calibrate(const CalibrateOptions& opts, std::ostream& out, std::ostream& err) {
  if (opts.family != "gapped" && opts.family != "correlation") {
    err << "calibrate: family must be \"gapped\" or \"correlation\"\n";
    return kExitUsage;
  }
  if (opts.s_values.empty() || opts.k_values.empty()) {
    err << "calibrate: need at least one s and one k\n";
    return kExitUsage;
  }
  for (std::size_t s : opts.s_values) {
    for (std::size_t k : opts.k_values) {
      if (s < 1 || k < 1 || k > s) {
        err << "calibrate: invalid budget s=" << s << " k=" << k << " (need 1 <= k <= s)\n";
        return kExitUsage;
      }
    }
  }
  if (!(opts.p0 > 0.0) || !(opts.p0 < 1.0)) {
    err << "calibrate: p0 must lie in (0, 1)\n";
    return kExitUsage;
  }
  if (opts.family == "correlation" && opts.replications < 10'000) {
    err << "calibrate: correlation family needs at least 10000 replications\n";
    return kExitUsage;
  }

  constexpr std::size_t kScanCap = 1u << 22;
  CalibrationTable table;
  const RngStream rng(opts.seed);
  std::size_t next_stream = 0;
  const auto table_entry = [&](std::size_t n) -> const CalibrationEntry* {
    if (const auto* e = table.find(n)) return e;
    const CalibrationTable fresh =
        calibrate_correlation_null(n, 1, opts.replications, rng.child(next_stream++),
                                   opts.threads);
    table.set(n, *fresh.find(n));
    return table.find(n);
  };

  json grid = json::array();
  out << std::left << std::setw(10) << "family" << std::setw(10) << "s" << std::setw(6) << "k"
      << std::setw(16) << "alpha" << std::setw(10) << "h" << "\n";
  for (std::size_t s : opts.s_values) {
    for (std::size_t k : opts.k_values) {
      const double alpha = per_test_alpha(s, k, opts.p0);
      json row{{"s", s}, {"k", k}, {"p0", opts.p0}, {"alpha", alpha}};
      std::string h_text;
      if (opts.family == "gapped") {
        const std::size_t h = required_holdout_size(s, k, opts.p0);
        row["h"] = h;
        h_text = std::to_string(h);
      } else {
        // Doubling scan: the smallest power-of-two n whose exact-binomial
        // upper bound clears the per-test level.
        std::optional<std::size_t> found;
        for (std::size_t n = 1; n <= kScanCap; n *= 2) {
          if (table_entry(n)->upper99 <= alpha) {
            found = n;
            break;
          }
        }
        if (found) {
          row["h"] = *found;
          h_text = std::to_string(*found) + " (pow2 scan)";
        } else {
          row["h"] = nullptr;
          h_text = "> " + std::to_string(kScanCap);
          err << "calibrate: no n <= " << kScanCap << " certifies alpha for s=" << s
              << " k=" << k << " at R=" << opts.replications << "\n";
        }
      }
      grid.push_back(std::move(row));
      out << std::left << std::setw(10) << opts.family << std::setw(10) << s << std::setw(6) << k
          << std::setw(16) << alpha << std::setw(10) << h_text << "\n";
    }
  }

  if (!opts.out_path.empty()) {
    json root{{"family", opts.family}, {"p0", opts.p0}, {"prng_id", std::string(kPrngId)},
              {"grid", std::move(grid)}};
    if (opts.family == "correlation") {
      root["calibration"] = calibration_to_json(table, 1, opts.seed);
    }
    write_text_file(opts.out_path, root.dump(2) + "\n");
    out << "wrote " << opts.out_path << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;  ///< overrides the config seed
  unsigned threads = 0;               ///< affects speed only, never results
};

inline int cmd_simulate(const SimulateOptions& opts, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = load_config_file(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    cfg.validate();
  } catch (const Error& e) {
    err << "simulate: " << e.what() << "\n";
    return kExitUsage;
  }

  const auto outcomes = run_experiment(cfg, opts.threads);
  const EstimateSummary estimate = cfg.model.kind == ModelSpec::Kind::GlobalNull
                                       ? summarize(aggregate_fwer(cfg, outcomes))
                                       : summarize(aggregate_power(cfg, outcomes));

  const std::string csv = outcomes_csv(outcomes);
  const json result = result_json(cfg, estimate, csv);
  const std::filesystem::path dir(opts.out_dir);
  const auto json_path = dir / "result.json";
  const auto csv_path = dir / "replications.csv";
  write_text_file(json_path, result.dump(2) + "\n");
  write_text_file(csv_path, csv);

  out << estimate.kind << " rate " << estimate.rate << "  wilson95 [" << estimate.ci_lo << ", "
      << estimate.ci_hi << "]";
  if (estimate.bound) {
    out << "  bound " << *estimate.bound << " (+3 sigma_MC)  "
        << (estimate.bound_satisfied ? "SATISFIED" : "VIOLATED");
  }
  out << "\n";
  out << "holdout " << cfg.resolved_holdout_size() << "  alpha "
      << BudgetSpec::make(cfg.s_max, cfg.k_max, cfg.p0).alpha << "  replications "
      << cfg.replications << "\n";
  out << "wrote " << json_path.string() << "\n";
  out << "wrote " << csv_path.string() << "\n";

  if (estimate.bound && !estimate.bound_satisfied) {
    err << "simulate: declared bound check failed\n";
    return kExitBoundViolation;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

struct AttackOptions {
  std::size_t d = 1000;
  std::size_t n = 100;
  double p0 = 0.05;
  std::size_t trials = 1;
  std::uint64_t seed = 1;
  std::string out_path;  // optional JSON dump
};

struct AttackTrialResult {
  double naive_final_statistic = 0.0;
  bool naive_false_discovery = false;
  std::size_t naive_queries = 0;
  std::size_t generic_false_confirmations = 0;
  std::size_t generic_queries = 0;
  StopReason generic_stop = StopReason::AnalystStopped;
  bool generic_too_weak = false;
  std::vector<TranscriptEntry> generic_transcript;
};

/// One head-to-head trial of the combine-the-probes adversary: raw-value
/// disclosure versus the budgeted one-bit oracle, on independent draws of
/// the same global-null population.
inline AttackTrialResult run_attack_trial(std::size_t d, std::size_t n, double p0,
                                          const RngStream& trial_rng) {
  const DistributionModel model = DistributionModel::global_null(d);
  const Dataset no_exploration(d);
  const SessionLimits limits{1, d + 1};
  AttackTrialResult result;

  {
    NaiveDisclosureMechanism naive(sample_dataset(model, n, trial_rng.child(0)));
    FreedmanAdversary adversary(d, TestFamily::Correlation);
    const SessionResult session =
        run_session(adversary, naive, no_exploration, model, trial_rng.child(2), limits);
    result.naive_queries = session.queries;
    if (!session.history.empty()) {
      if (const auto* value = std::get_if<ValueResponse>(&session.history.back())) {
        result.naive_final_statistic = value->value;
      }
    }
    result.naive_false_discovery = !session.confirmed.empty();
  }

  {
    GenericHoldoutMechanism generic(GenericHoldoutOracle(
        sample_dataset(model, n, trial_rng.child(1)), BudgetSpec::make(d + 1, 1, p0)));
    FreedmanAdversary adversary(d, TestFamily::GappedLoss);
    try {
      const SessionResult session =
          run_session(adversary, generic, no_exploration, model, trial_rng.child(3), limits);
      result.generic_queries = session.queries;
      result.generic_stop = session.stop_reason;
      for (const auto& c : session.confirmed) {
        if (c.ground_truth_null) ++result.generic_false_confirmations;
      }
    } catch (const TestTooWeakError&) {
      result.generic_too_weak = true;
    }
    result.generic_transcript = generic.oracle().transcript();
  }
  return result;
}

inline int cmd_attack(const AttackOptions& opts, std::ostream& out, std::ostream& err) {
  if (opts.d < 1 || opts.n < 1 || opts.trials < 1) {
    err << "attack: d, n, and trials must all be >= 1\n";
    return kExitUsage;
  }
  if (!(opts.p0 > 0.0) || !(opts.p0 < 1.0)) {
    err << "attack: p0 must lie in (0, 1)\n";
    return kExitUsage;
  }

  const std::size_t s = opts.d + 1;
  const BudgetSpec budget = BudgetSpec::make(s, 1, opts.p0);
  const std::size_t required = required_holdout_size(s, 1, opts.p0);
  const double expected_stat = std::sqrt(2.0 * static_cast<double>(opts.d) /
                                         (static_cast<double>(opts.n) * 3.14159265358979323846));

  std::size_t naive_passes = 0;
  std::size_t generic_false = 0;
  double stat_sum = 0.0;
  AttackTrialResult last;
  const RngStream rng(opts.seed);
  for (std::size_t t = 0; t < opts.trials; ++t) {
    last = run_attack_trial(opts.d, opts.n, opts.p0, rng.child(t));
    naive_passes += last.naive_false_discovery ? 1 : 0;
    generic_false += last.generic_false_confirmations;
    stat_sum += last.naive_final_statistic;
  }
  const double naive_rate = static_cast<double>(naive_passes) / static_cast<double>(opts.trials);
  const double mean_stat = stat_sum / static_cast<double>(opts.trials);

  out << "adversary: " << (opts.d + 1) << " adaptive queries (d basis probes + combined probe), "
      << "d=" << opts.d << " n=h=" << opts.n << " trials=" << opts.trials << "\n";
  out << "budget ledger: s=" << s << " k=1 p0=" << opts.p0 << " alpha=" << budget.alpha
      << " required h=" << required << (opts.n >= required ? "" : "  (holdout undersized!)")
      << "\n";
  out << "expected combined statistic under value disclosure: " << expected_stat << "\n\n";

  out << std::left << std::setw(20) << "mechanism" << std::setw(12) << "queries" << std::setw(18)
      << "final statistic" << std::setw(22) << "outcome" << "\n";
  {
    std::ostringstream outcome;
    outcome << (last.naive_false_discovery ? "PASS (false discovery)" : "FAIL (rejected)");
    out << std::left << std::setw(20) << "naive_disclosure" << std::setw(12) << last.naive_queries
        << std::setw(18) << last.naive_final_statistic << std::setw(22) << outcome.str() << "\n";
  }
  {
    std::ostringstream outcome;
    if (last.generic_too_weak) {
      outcome << "refused (test too weak at h=" << opts.n << ")";
    } else {
      outcome << to_string(last.generic_stop) << ", " << last.generic_false_confirmations
              << " false confirmations";
    }
    out << std::left << std::setw(20) << "generic_holdout" << std::setw(12)
        << last.generic_queries << std::setw(18) << "1 bit/query" << std::setw(22)
        << outcome.str() << "\n";
  }
  if (opts.trials > 1) {
    out << "\nacross trials: naive false-discovery rate " << naive_rate << " (mean statistic "
        << mean_stat << "); generic false confirmations " << generic_false << "/" << opts.trials
        << "\n";
  }

  if (!opts.out_path.empty()) {
    json root{{"d", opts.d},
              {"n", opts.n},
              {"p0", opts.p0},
              {"trials", opts.trials},
              {"seed", opts.seed},
              {"prng_id", std::string(kPrngId)},
              {"expected_statistic", expected_stat},
              {"naive_false_discovery_rate", naive_rate},
              {"naive_mean_statistic", mean_stat},
              {"generic_false_confirmations", generic_false},
              {"generic_transcript", transcript_to_json(last.generic_transcript)}};
    write_text_file(opts.out_path, root.dump(2) + "\n");
    out << "wrote " << opts.out_path << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportOptions {
  std::vector<std::string> result_paths;
  std::string out_csv;          // optional merged CSV
  std::string format = "table"; // table | json | csv
};

namespace detail {

[[noreturn]] inline void schema_fail(const std::string& file, const std::string& what) {
  throw ConfigError("report: " + file + ": " + what);
}

inline const json& expect(const json& obj, const std::string& file, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) schema_fail(file, std::string("result file is missing \"") + key + "\"");
  return *it;
}

}  // namespace detail

inline int cmd_report(const ReportOptions& opts, std::ostream& out, std::ostream& err) {
  if (opts.result_paths.empty()) {
    err << "report: need at least one result file\n";
    return kExitUsage;
  }
  if (opts.format != "table" && opts.format != "json" && opts.format != "csv") {
    err << "report: format must be \"table\", \"json\", or \"csv\"\n";
    return kExitUsage;
  }

  json rows = json::array();
  std::string first_prng;
  bool prng_mismatch = false;
  try {
    for (const auto& path : opts.result_paths) {
      const json result = parse_json_text(read_text_file(path), path);
      if (!result.is_object()) detail::schema_fail(path, "expected a JSON object");
      const json& echo = detail::expect(result, path, "config_echo");
      const json& estimates = detail::expect(result, path, "estimates");
      const std::string prng =
          detail::expect(result, path, "prng_id").get<std::string>();
      if (first_prng.empty()) first_prng = prng;
      if (prng != first_prng || prng != kPrngId) prng_mismatch = true;

      const json& budgets = detail::expect(echo, path, "budgets");
      const json& ci = detail::expect(estimates, path, "ci");
      if (!ci.is_array() || ci.size() != 2) detail::schema_fail(path, "estimates.ci must be [lo, hi]");
      json row;
      row["file"] = path;
      row["kind"] = detail::expect(estimates, path, "kind");
      row["model"] = detail::expect(detail::expect(echo, path, "model"), path, "kind");
      row["d"] = detail::expect(detail::expect(echo, path, "model"), path, "d");
      row["mechanism"] = detail::expect(detail::expect(echo, path, "mechanism"), path, "kind");
      row["analyst"] = detail::expect(detail::expect(echo, path, "analyst"), path, "kind");
      row["s"] = detail::expect(budgets, path, "s");
      row["k"] = detail::expect(budgets, path, "k");
      row["p0"] = detail::expect(budgets, path, "p0");
      row["replications"] = detail::expect(echo, path, "replications");
      row["rate"] = detail::expect(estimates, path, "rate");
      row["ci_lo"] = ci[0];
      row["ci_hi"] = ci[1];
      row["bound"] = detail::expect(result, path, "bound");
      row["bound_satisfied"] = detail::expect(result, path, "bound_satisfied");
      row["prng_id"] = prng;
      rows.push_back(std::move(row));
    }
  } catch (const Error& e) {
    err << e.what() << "\n";
    return kExitUsage;
  } catch (const json::exception& e) {
    err << "report: malformed result file: " << e.what() << "\n";
    return kExitUsage;
  }

  std::ostringstream csv;
  csv << "file,kind,model,d,mechanism,analyst,s,k,p0,replications,rate,ci_lo,ci_hi,bound,"
         "bound_satisfied,prng_id\n";
  for (const auto& row : rows) {
    csv << row["file"].get<std::string>() << ',' << row["kind"].get<std::string>() << ','
        << row["model"].get<std::string>() << ',' << row["d"].get<std::size_t>() << ','
        << row["mechanism"].get<std::string>() << ',' << row["analyst"].get<std::string>() << ','
        << row["s"].get<std::size_t>() << ',' << row["k"].get<std::size_t>() << ','
        << row["p0"].dump() << ',' << row["replications"].get<std::size_t>() << ','
        << row["rate"].dump() << ',' << row["ci_lo"].dump() << ',' << row["ci_hi"].dump() << ','
        << row["bound"].dump() << ',' << (row["bound_satisfied"].get<bool>() ? "true" : "false")
        << ',' << row["prng_id"].get<std::string>() << '\n';
  }

  if (prng_mismatch) {
    out << "warning: result files carry mismatched prng_id values (this build: " << kPrngId
        << ")\n";
  }

  if (opts.format == "json") {
    out << rows.dump(2) << "\n";
  } else if (opts.format == "csv") {
    out << csv.str();
  } else {
    out << std::left << std::setw(7) << "kind" << std::setw(18) << "mechanism" << std::setw(15)
        << "analyst" << std::setw(8) << "s" << std::setw(5) << "k" << std::setw(10) << "rate"
        << std::setw(22) << "wilson95" << std::setw(10) << "bound" << std::setw(6) << "ok"
        << "\n";
    for (const auto& row : rows) {
      std::ostringstream ci;
      ci << "[" << row["ci_lo"].get<double>() << ", " << row["ci_hi"].get<double>() << "]";
      std::ostringstream bound;
      if (row["bound"].is_null()) {
        bound << "-";
      } else {
        bound << row["bound"].get<double>();
      }
      out << std::left << std::setw(7) << row["kind"].get<std::string>() << std::setw(18)
          << row["mechanism"].get<std::string>() << std::setw(15)
          << row["analyst"].get<std::string>() << std::setw(8) << row["s"].get<std::size_t>()
          << std::setw(5) << row["k"].get<std::size_t>() << std::setw(10)
          << row["rate"].get<double>() << std::setw(22) << ci.str() << std::setw(10)
          << bound.str() << std::setw(6)
          << (row["bound_satisfied"].get<bool>() ? "yes" : "NO") << "\n";
    }
  }

  if (!opts.out_csv.empty()) {
    write_text_file(opts.out_csv, csv.str());
    out << "wrote " << opts.out_csv << "\n";
  }
  return kExitOk;
}

}  // namespace genholdout
