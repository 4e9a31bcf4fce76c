#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "genholdout/detail/sha256.hpp"
#include "genholdout/errors.hpp"
#include "genholdout/rng.hpp"
#include "genholdout/simharness.hpp"

namespace genholdout {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Enum names used by the file formats
// ---------------------------------------------------------------------------

inline const char* to_string(MechanismKind k) {
  switch (k) {
    case MechanismKind::GenericHoldout: return "generic_holdout";
    case MechanismKind::NaiveDisclosure: return "naive_disclosure";
    case MechanismKind::FreshSplit: return "fresh_split";
    case MechanismKind::Thresholdout: return "thresholdout";
  }
  return "unknown";
}

inline const char* to_string(AnalystKind k) {
  switch (k) {
    case AnalystKind::RandomSearch: return "random_search";
    case AnalystKind::Freedman: return "freedman";
    case AnalystKind::Planted: return "planted";
    case AnalystKind::ImmediateStop: return "immediate_stop";
  }
  return "unknown";
}

inline const char* to_string(OracleMode m) {
  return m == OracleMode::StopOnConfirms ? "stop_on_confirms" : "stop_on_rejects";
}

inline const char* to_string(TestFamily f) {
  return f == TestFamily::GappedLoss ? "gapped" : "correlation";
}

inline const char* to_string(ModelSpec::Kind k) {
  return k == ModelSpec::Kind::GlobalNull ? "global_null" : "planted_linear";
}

namespace detail {

[[noreturn]] inline void config_fail(const std::string& path, const std::string& message) {
  throw ConfigError("config: " + path + ": " + message);
}

inline const json& require_key(const json& obj, const std::string& path, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) config_fail(path, std::string("missing key \"") + key + "\"");
  return *it;
}

inline void reject_unknown_keys(const json& obj, const std::string& path,
                                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) config_fail(path, "expected an object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) config_fail(path, "unknown key \"" + item.key() + "\"");
  }
}

inline std::size_t as_count(const json& v, const std::string& path) {
  if (!v.is_number_unsigned()) config_fail(path, "expected a non-negative integer");
  return v.get<std::size_t>();
}

inline std::uint64_t as_u64(const json& v, const std::string& path) {
  if (!v.is_number_unsigned()) config_fail(path, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) config_fail(path, "expected a number");
  return v.get<double>();
}

inline std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) config_fail(path, "expected a string");
  return v.get<std::string>();
}

template <typename Enum, typename Pairs>
Enum parse_enum(const json& v, const std::string& path, const Pairs& pairs) {
  const std::string s = as_string(v, path);
  for (const auto& [name, value] : pairs) {
    if (s == name) return value;
  }
  config_fail(path, "unsupported value \"" + s + "\"");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment config file
// ---------------------------------------------------------------------------

inline ExperimentConfig config_from_json(const json& root) {
  using detail::as_count;
  using detail::as_number;
  using detail::as_string;
  using detail::as_u64;
  using detail::config_fail;
  using detail::parse_enum;
  using detail::reject_unknown_keys;
  using detail::require_key;

  reject_unknown_keys(root, "$",
                      {"model", "n_total", "holdout_size", "budgets", "mechanism", "analyst",
                       "replications", "seed", "prng_id"});
  ExperimentConfig cfg;

  const json& model = require_key(root, "$", "model");
  cfg.model.kind = parse_enum<ModelSpec::Kind>(
      require_key(model, "$.model", "kind"), "$.model.kind",
      std::initializer_list<std::pair<const char*, ModelSpec::Kind>>{
          {"global_null", ModelSpec::Kind::GlobalNull},
          {"planted_linear", ModelSpec::Kind::PlantedLinear}});
  if (cfg.model.kind == ModelSpec::Kind::GlobalNull) {
    reject_unknown_keys(model, "$.model", {"kind", "d"});
  } else {
    reject_unknown_keys(model, "$.model", {"kind", "d", "w_true", "mu", "sigma_y"});
  }
  cfg.model.d = as_count(require_key(model, "$.model", "d"), "$.model.d");
  if (cfg.model.kind == ModelSpec::Kind::PlantedLinear) {
    cfg.model.mu = as_number(require_key(model, "$.model", "mu"), "$.model.mu");
    if (model.contains("sigma_y")) cfg.model.sigma_y = as_number(model["sigma_y"], "$.model.sigma_y");
    if (model.contains("w_true")) {
      const json& w = model["w_true"];
      if (!w.is_array()) config_fail("$.model.w_true", "expected an array");
      std::vector<double> vec;
      vec.reserve(w.size());
      for (const auto& v : w) vec.push_back(as_number(v, "$.model.w_true[]"));
      cfg.model.w_true = std::move(vec);
    }
  }

  cfg.n_total = as_count(require_key(root, "$", "n_total"), "$.n_total");
  const json& holdout = require_key(root, "$", "holdout_size");
  if (holdout.is_string()) {
    if (holdout.get<std::string>() != "auto")
      config_fail("$.holdout_size", "expected an integer or \"auto\"");
    cfg.holdout_size = std::nullopt;
  } else {
    cfg.holdout_size = as_count(holdout, "$.holdout_size");
  }

  const json& budgets = require_key(root, "$", "budgets");
  reject_unknown_keys(budgets, "$.budgets", {"s", "k", "p0"});
  cfg.s_max = as_count(require_key(budgets, "$.budgets", "s"), "$.budgets.s");
  cfg.k_max = as_count(require_key(budgets, "$.budgets", "k"), "$.budgets.k");
  cfg.p0 = as_number(require_key(budgets, "$.budgets", "p0"), "$.budgets.p0");

  const json& mech = require_key(root, "$", "mechanism");
  reject_unknown_keys(mech, "$.mechanism", {"kind", "params"});
  cfg.mechanism = parse_enum<MechanismKind>(
      require_key(mech, "$.mechanism", "kind"), "$.mechanism.kind",
      std::initializer_list<std::pair<const char*, MechanismKind>>{
          {"generic_holdout", MechanismKind::GenericHoldout},
          {"naive_disclosure", MechanismKind::NaiveDisclosure},
          {"fresh_split", MechanismKind::FreshSplit},
          {"thresholdout", MechanismKind::Thresholdout}});
  if (mech.contains("params")) {
    const json& params = mech["params"];
    const std::string path = "$.mechanism.params";
    switch (cfg.mechanism) {
      case MechanismKind::GenericHoldout:
        reject_unknown_keys(params, path, {"mode"});
        if (params.contains("mode")) {
          cfg.mechanism_params.mode = parse_enum<OracleMode>(
              params["mode"], path + ".mode",
              std::initializer_list<std::pair<const char*, OracleMode>>{
                  {"stop_on_confirms", OracleMode::StopOnConfirms},
                  {"stop_on_rejects", OracleMode::StopOnRejects}});
        }
        break;
      case MechanismKind::NaiveDisclosure:
        reject_unknown_keys(params, path, {});
        break;
      case MechanismKind::FreshSplit:
        reject_unknown_keys(params, path, {"test_size"});
        cfg.mechanism_params.fresh_split_test_size =
            as_count(require_key(params, path, "test_size"), path + ".test_size");
        break;
      case MechanismKind::Thresholdout:
        reject_unknown_keys(params, path, {"similarity_threshold", "noise_scale", "overfit_budget"});
        if (params.contains("similarity_threshold"))
          cfg.mechanism_params.similarity_threshold =
              as_number(params["similarity_threshold"], path + ".similarity_threshold");
        if (params.contains("noise_scale"))
          cfg.mechanism_params.noise_scale = as_number(params["noise_scale"], path + ".noise_scale");
        if (params.contains("overfit_budget"))
          cfg.mechanism_params.overfit_budget =
              as_count(params["overfit_budget"], path + ".overfit_budget");
        break;
    }
  } else if (cfg.mechanism == MechanismKind::FreshSplit) {
    detail::config_fail("$.mechanism", "fresh_split requires params.test_size");
  }

  const json& analyst = require_key(root, "$", "analyst");
  reject_unknown_keys(analyst, "$.analyst", {"kind", "params"});
  cfg.analyst = parse_enum<AnalystKind>(
      require_key(analyst, "$.analyst", "kind"), "$.analyst.kind",
      std::initializer_list<std::pair<const char*, AnalystKind>>{
          {"random_search", AnalystKind::RandomSearch},
          {"freedman", AnalystKind::Freedman},
          {"planted", AnalystKind::Planted},
          {"immediate_stop", AnalystKind::ImmediateStop}});
  if (analyst.contains("params")) {
    const json& params = analyst["params"];
    const std::string path = "$.analyst.params";
    if (cfg.analyst == AnalystKind::Freedman) {
      reject_unknown_keys(params, path, {"family"});
      if (params.contains("family")) {
        cfg.analyst_params.freedman_family = parse_enum<TestFamily>(
            params["family"], path + ".family",
            std::initializer_list<std::pair<const char*, TestFamily>>{
                {"gapped", TestFamily::GappedLoss}, {"correlation", TestFamily::Correlation}});
      }
    } else {
      reject_unknown_keys(params, path, {});
    }
  }

  cfg.replications = as_count(require_key(root, "$", "replications"), "$.replications");
  cfg.seed = as_u64(require_key(root, "$", "seed"), "$.seed");

  const std::string prng = as_string(require_key(root, "$", "prng_id"), "$.prng_id");
  if (prng != kPrngId) {
    config_fail("$.prng_id", "file expects PRNG \"" + prng + "\" but this build provides \"" +
                                 std::string(kPrngId) + "\"");
  }

  cfg.validate();
  return cfg;
}

inline json config_to_json(const ExperimentConfig& cfg) {
  json model;
  model["kind"] = to_string(cfg.model.kind);
  model["d"] = cfg.model.d;
  if (cfg.model.kind == ModelSpec::Kind::PlantedLinear) {
    model["mu"] = cfg.model.mu;
    model["sigma_y"] = cfg.model.sigma_y;
    if (cfg.model.w_true) model["w_true"] = *cfg.model.w_true;
  }

  json mech;
  mech["kind"] = to_string(cfg.mechanism);
  switch (cfg.mechanism) {
    case MechanismKind::GenericHoldout:
      mech["params"] = json{{"mode", to_string(cfg.mechanism_params.mode)}};
      break;
    case MechanismKind::NaiveDisclosure:
      break;
    case MechanismKind::FreshSplit:
      mech["params"] = json{{"test_size", cfg.mechanism_params.fresh_split_test_size}};
      break;
    case MechanismKind::Thresholdout: {
      json params{{"similarity_threshold", cfg.mechanism_params.similarity_threshold},
                  {"noise_scale", cfg.mechanism_params.noise_scale}};
      if (cfg.mechanism_params.overfit_budget)
        params["overfit_budget"] = *cfg.mechanism_params.overfit_budget;
      mech["params"] = std::move(params);
      break;
    }
  }

  json analyst;
  analyst["kind"] = to_string(cfg.analyst);
  if (cfg.analyst == AnalystKind::Freedman && cfg.analyst_params.freedman_family) {
    analyst["params"] = json{{"family", to_string(*cfg.analyst_params.freedman_family)}};
  }

  json root;
  root["model"] = std::move(model);
  root["n_total"] = cfg.n_total;
  if (cfg.holdout_size) {
    root["holdout_size"] = *cfg.holdout_size;
  } else {
    root["holdout_size"] = "auto";
  }
  root["budgets"] = json{{"s", cfg.s_max}, {"k", cfg.k_max}, {"p0", cfg.p0}};
  root["mechanism"] = std::move(mech);
  root["analyst"] = std::move(analyst);
  root["replications"] = cfg.replications;
  root["seed"] = cfg.seed;
  root["prng_id"] = std::string(kPrngId);
  return root;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open \"" + path.string() + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write \"" + path.string() + "\"");
  out << content;
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports a byte offset; surface the line number too.
    std::size_t line = 1;
    const std::size_t limit = std::min<std::size_t>(e.byte, text.size());
    for (std::size_t i = 0; i < limit; ++i) {
      if (text[i] == '\n') ++line;
    }
    throw ConfigError(origin + ": JSON parse error at line " + std::to_string(line) + ": " +
                      e.what());
  }
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path) {
  return config_from_json(parse_json_text(read_text_file(path), path.string()));
}

// ---------------------------------------------------------------------------
// Result files
// ---------------------------------------------------------------------------

/// The common shape of a run's headline estimate: FWER or power.
struct EstimateSummary {
  std::string kind;  ///< "fwer" | "power"
  double rate = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 1.0;
  std::optional<double> bound;  ///< p0 for FWER runs, absent for power runs
  bool bound_satisfied = true;
  std::size_t events = 0;
  std::size_t replications = 0;
};

inline EstimateSummary summarize(const FwerEstimate& est) {
  EstimateSummary s;
  s.kind = "fwer";
  s.rate = est.false_discovery_rate;
  s.ci_lo = est.wilson_lo;
  s.ci_hi = est.wilson_hi;
  s.bound = est.theoretical_bound;
  s.bound_satisfied = est.bound_satisfied;
  s.events = est.events;
  s.replications = est.replications;
  return s;
}

inline EstimateSummary summarize(const PowerEstimate& est) {
  EstimateSummary s;
  s.kind = "power";
  s.rate = est.power;
  s.ci_lo = est.wilson_lo;
  s.ci_hi = est.wilson_hi;
  s.events = est.events;
  s.replications = est.replications;
  return s;
}

/// One CSV row per replication, in replication order.
inline std::string outcomes_csv(std::span<const ReplicationOutcome> outcomes) {
  std::ostringstream out;
  out << "rep_index,queries_used,confirmations,false_confirmations,stop_reason\n";
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    out << i << ',' << o.queries_used << ',' << o.confirmations << ',' << o.false_confirmations
        << ',' << to_string(o.stop_reason) << '\n';
  }
  return out.str();
}

inline json result_json(const ExperimentConfig& cfg, const EstimateSummary& estimate,
                        const std::string& csv) {
  json estimates;
  estimates["kind"] = estimate.kind;
  estimates["rate"] = estimate.rate;
  estimates["ci"] = json::array({estimate.ci_lo, estimate.ci_hi});
  estimates["events"] = estimate.events;
  estimates["replications"] = estimate.replications;

  json root;
  root["config_echo"] = config_to_json(cfg);
  root["prng_id"] = std::string(kPrngId);
  root["estimates"] = std::move(estimates);
  if (estimate.bound) {
    root["bound"] = *estimate.bound;
  } else {
    root["bound"] = nullptr;
  }
  root["bound_satisfied"] = estimate.bound_satisfied;
  root["transcript_digest"] = "sha256:" + detail::Sha256::hex_digest(csv);
  return root;
}

// ---------------------------------------------------------------------------
// Transcript audit export
// ---------------------------------------------------------------------------

/// The oracle's audit log as JSON: query indices, content hashes, bits.
/// Timestamps are deliberately absent so the export is deterministic.
inline json transcript_to_json(std::span<const TranscriptEntry> transcript) {
  json entries = json::array();
  for (const auto& e : transcript) {
    entries.push_back(
        json{{"query_index", e.query_index}, {"test_hash", e.test_hash}, {"bit", e.bit}});
  }
  return entries;
}

// ---------------------------------------------------------------------------
// Calibration table file
// ---------------------------------------------------------------------------

inline json calibration_to_json(const CalibrationTable& table, std::size_t d,
                                std::uint64_t seed) {
  json entries = json::array();
  for (const auto& [n, entry] : table.entries()) {
    entries.push_back(json{{"n", n},
                           {"p_hat", entry.p_hat},
                           {"upper99", entry.upper99},
                           {"replications", entry.replications}});
  }
  json root;
  root["family"] = "correlation";
  root["d"] = d;
  root["seed"] = seed;
  root["prng_id"] = std::string(kPrngId);
  root["entries"] = std::move(entries);
  return root;
}

}  // namespace genholdout
