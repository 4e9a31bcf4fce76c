#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "genholdout/cli.hpp"
#include "genholdout/rng.hpp"

namespace {

std::vector<std::size_t> parse_count_list(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string token =
        text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      if (token.empty() || token.find_first_not_of("0123456789") != std::string::npos)
        throw std::invalid_argument("not a count");
      out.push_back(std::stoull(token));
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "expected a comma-separated list of integers");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"generic-holdout: budgeted one-bit holdout validation and its Monte Carlo harness"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("genholdout 1.0.0 (prng: ") +
                                        std::string(genholdout::kPrngId) + ")");

  // calibrate ---------------------------------------------------------------
  auto* calibrate = app.add_subcommand("calibrate", "holdout sizing for a budget grid");
  std::string cal_s = "1000";
  std::string cal_k = "1";
  genholdout::CalibrateOptions cal;
  calibrate->add_option("--s", cal_s, "query budgets, comma-separated")->capture_default_str();
  calibrate->add_option("--k", cal_k, "confirmation budgets, comma-separated")
      ->capture_default_str();
  calibrate->add_option("--p0", cal.p0, "overall false-discovery target")->capture_default_str();
  calibrate->add_option("--family", cal.family, "test family: gapped | correlation")
      ->capture_default_str();
  calibrate->add_option("--replications", cal.replications,
                        "Monte Carlo replications (correlation family)")
      ->capture_default_str();
  calibrate->add_option("--seed", cal.seed, "root seed (correlation family)")
      ->capture_default_str();
  calibrate->add_option("--out", cal.out_path, "write the grid (and table) as JSON");
  calibrate->add_option("--threads", cal.threads, "worker threads (speed only)");

  // simulate ----------------------------------------------------------------
  auto* simulate = app.add_subcommand("simulate", "run a configured Monte Carlo experiment");
  genholdout::SimulateOptions sim;
  std::uint64_t sim_seed = 0;
  simulate->add_option("--config", sim.config_path, "experiment config JSON")->required();
  simulate->add_option("--out", sim.out_dir, "output directory")->capture_default_str();
  auto* seed_opt = simulate->add_option("--seed", sim_seed, "override the config seed");
  simulate->add_option("--threads", sim.threads, "worker threads (speed only, never results)");

  // attack ------------------------------------------------------------------
  auto* attack = app.add_subcommand(
      "attack", "combine-the-probes adversary vs naive disclosure and the generic holdout");
  genholdout::AttackOptions atk;
  attack->add_option("--d", atk.d, "feature dimension (basis probes)")->capture_default_str();
  attack->add_option("--n", atk.n, "holdout size for both mechanisms")->capture_default_str();
  attack->add_option("--p0", atk.p0, "overall false-discovery target")->capture_default_str();
  attack->add_option("--trials", atk.trials, "independent seeded trials")->capture_default_str();
  attack->add_option("--seed", atk.seed, "root seed")->capture_default_str();
  attack->add_option("--out", atk.out_path, "write the comparison as JSON");

  // report ------------------------------------------------------------------
  auto* report = app.add_subcommand("report", "merge result files into one summary");
  genholdout::ReportOptions rep;
  report->add_option("results", rep.result_paths, "result.json files")->required();
  report->add_option("--out", rep.out_csv, "write the merged rows as CSV");
  report->add_option("--format", rep.format, "stdout format: table | json | csv")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : genholdout::kExitUsage;
  }

  try {
    if (*calibrate) {
      cal.s_values = parse_count_list(cal_s, "--s");
      cal.k_values = parse_count_list(cal_k, "--k");
      return genholdout::cmd_calibrate(cal, std::cout, std::cerr);
    }
    if (*simulate) {
      if (seed_opt->count() > 0) sim.seed = sim_seed;
      return genholdout::cmd_simulate(sim, std::cout, std::cerr);
    }
    if (*attack) return genholdout::cmd_attack(atk, std::cout, std::cerr);
    if (*report) return genholdout::cmd_report(rep, std::cout, std::cerr);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return genholdout::kExitUsage;
  } catch (const genholdout::Error& e) {
    std::cerr << e.what() << "\n";
    return genholdout::kExitUsage;
  }
  return genholdout::kExitUsage;
}
