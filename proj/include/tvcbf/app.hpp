#pragma once

// Command layer behind the CLI binary: config parsing, the scenario
// verification pipeline, closed-loop runs with their CSV/JSON artifacts, the
// Lipschitz estimation utility, and rate-composition tabulation. All
// subcommands share one exit-code convention:
//   0  everything passed
//   1  a required check failed, or a completed run breached its safety gate
//   2  malformed config, unknown scenario, or bad arguments
//   3  the simulation aborted at runtime
//
// Every command is deterministic given its config and seed. cmd_verify
// writes no files unless an output directory is set.

#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include <tvcbf/lipschitz.hpp>
#include <tvcbf/scenarios.hpp>

namespace tvcbf::app {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kBadConfig = 2,
  kRuntimeError = 3,
};

/// Parsed run/verify configuration. `scenario` names a registry entry;
/// `overrides` is forwarded to its builder. The dt fields, when set (from
/// CLI flags or config keys), replace the scenario's defaults before
/// validation.
struct RunConfig {
  std::string scenario;
  nlohmann::json overrides = nlohmann::json::object();
  std::optional<std::string> output_dir;
  unsigned seed = kDefaultSeed;
  double tol_b = 1e-3;
  std::optional<double> dt_sim;
  std::optional<double> dt_control;
};

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  for (const auto& item : j.items()) {
    const std::string& k = item.key();
    if (k != "scenario" && k != "overrides" && k != "output_dir" && k != "seed" && k != "tol_b" &&
        k != "dt_sim" && k != "dt_control")
      throw std::invalid_argument("config: unknown key '" + k + "'");
  }
  RunConfig c;
  if (!j.contains("scenario")) throw std::invalid_argument("config: missing 'scenario'");
  const auto& sc = j.at("scenario");
  if (sc.is_string()) {
    c.scenario = sc.get<std::string>();
  } else if (sc.is_object()) {
    for (const auto& item : sc.items())
      if (item.key() != "name" && item.key() != "overrides")
        throw std::invalid_argument("config: unknown scenario key '" + item.key() + "'");
    if (!sc.contains("name") || !sc.at("name").is_string())
      throw std::invalid_argument("config: inline scenario needs a string 'name'");
    c.scenario = sc.at("name").get<std::string>();
    if (sc.contains("overrides")) {
      if (!sc.at("overrides").is_object())
        throw std::invalid_argument("config: scenario overrides must be an object");
      c.overrides = sc.at("overrides");
    }
  } else {
    throw std::invalid_argument("config: 'scenario' must be a name or a {name, overrides} object");
  }
  if (j.contains("overrides")) {
    if (!j.at("overrides").is_object()) throw std::invalid_argument("config: 'overrides' must be an object");
    for (const auto& item : j.at("overrides").items()) c.overrides[item.key()] = item.value();
  }
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("seed")) c.seed = j.at("seed").get<unsigned>();
  if (j.contains("tol_b")) c.tol_b = j.at("tol_b").get<double>();
  if (j.contains("dt_sim")) c.dt_sim = j.at("dt_sim").get<double>();
  if (j.contains("dt_control")) c.dt_control = j.at("dt_control").get<double>();
  return c;
}

/// Runs every applicable verifier against a scenario: comparison-function
/// premises, equivariance of each barrier's family, the shiftable decrease
/// condition, the parameter-rate certificate, and the declared
/// under-approximation pairings. Checks on barriers flagged as heuristic
/// (expect_certified false) are reported but not required.
inline nlohmann::ordered_json verify_report(const scenarios::ScenarioSpec& spec, unsigned seed) {
  const Scenario& s = spec.scenario;
  if (spec.barrier_meta.size() != s.cbfs.size())
    throw std::logic_error("verify_report: barrier metadata does not match barrier count");

  nlohmann::ordered_json checks = nlohmann::ordered_json::array();
  const auto add = [&checks](const std::string& check, const std::string& subject, bool pass,
                             bool required, const std::string& detail) {
    nlohmann::ordered_json e;
    e["check"] = check;
    e["subject"] = subject;
    e["pass"] = pass;
    e["required"] = required;
    e["detail"] = detail;
    checks.push_back(std::move(e));
  };

  for (std::size_t i = 0; i < s.cbfs.size(); ++i) {
    const TimeVaryingCbf& B = s.cbfs[i];
    const scenarios::BarrierMeta& meta = spec.barrier_meta[i];

    const auto pair = verify_alpha_p(B.base.alpha, B.alpha_p, B.base.capacity);
    add("verify_class_ke", B.name + ".alpha", pair.alpha_report.pass, true,
        pair.alpha_report.message);
    add("verify_class_ke", B.name + ".alpha_p", pair.alpha_p_report.pass, true,
        pair.alpha_p_report.message);
    add("verify_alpha_p", B.name, pair.pass, true, pair.message);

    const auto equi = verify_equivariance(s.dynamics, B.family, 2000, seed);
    add("verify_equivariance", B.name + "." + B.family.name, equi.pass, true, equi.message);

    const auto shift = verify_shiftable(B.base, s.dynamics, meta.shiftable_samples, seed);
    add("verify_shiftable", B.name, shift.pass, meta.expect_certified, shift.message);

    TimeVaryingCbf probe = B;
    const auto rate = certify(probe, meta.ell_b, meta.ell_D, meta.cert_grid);
    add(rate.check, B.name, rate.pass, meta.expect_certified, rate.message);
  }

  Rng rng(seed);
  std::vector<Vector> samples;
  samples.reserve(static_cast<std::size_t>(spec.underapprox_samples));
  for (int k = 0; k < spec.underapprox_samples; ++k)
    samples.push_back(spec.underapprox_box.sample(rng));
  for (const auto& [bi, ci] : spec.underapprox_pairs) {
    const TimeVaryingCbf& B = s.cbfs.at(static_cast<std::size_t>(bi));
    const TvConstraint& c = s.constraints.at(static_cast<std::size_t>(ci));
    const auto ua = check_underapprox(B.base, c, B.offset, samples);
    add("check_underapprox", B.name + "<=" + c.name, ua.pass, true, ua.message);
  }

  bool all_required = true;
  for (const auto& e : checks)
    if (e.at("required").get<bool>() && !e.at("pass").get<bool>()) all_required = false;

  nlohmann::ordered_json rep;
  rep["scenario"] = s.name;
  rep["description"] = spec.description;
  rep["seed"] = seed;
  rep["pass"] = all_required;
  rep["checks"] = std::move(checks);
  return rep;
}

namespace detail {

inline void write_json(const std::string& dir, const std::string& filename,
                       const nlohmann::ordered_json& j) {
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/" + filename;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << j.dump(2) << "\n";
}

}  // namespace detail

inline int cmd_verify(const RunConfig& cfg, std::ostream& out) {
  scenarios::ScenarioSpec spec;
  try {
    spec = scenarios::make_scenario(cfg.scenario, cfg.overrides);
  } catch (const std::exception& e) {
    out << "config error: " << e.what() << "\n";
    return kBadConfig;
  }
  nlohmann::ordered_json rep;
  try {
    rep = verify_report(spec, cfg.seed);
  } catch (const std::exception& e) {
    out << "verification error: " << e.what() << "\n";
    return kRuntimeError;
  }
  for (const auto& e : rep.at("checks")) {
    const bool pass = e.at("pass").get<bool>();
    const bool required = e.at("required").get<bool>();
    out << (pass ? "[pass]" : required ? "[FAIL]" : "[warn]") << " "
        << e.at("check").get<std::string>() << " " << e.at("subject").get<std::string>() << ": "
        << e.at("detail").get<std::string>() << "\n";
  }
  const bool pass = rep.at("pass").get<bool>();
  out << "verify " << spec.scenario.name << ": " << (pass ? "PASS" : "FAIL") << "\n";
  if (cfg.output_dir)
    detail::write_json(*cfg.output_dir, spec.scenario.name + "_verify.json", rep);
  return pass ? kOk : kCheckFailed;
}

inline int cmd_run(const RunConfig& cfg, std::ostream& out) {
  scenarios::ScenarioSpec spec;
  try {
    spec = scenarios::make_scenario(cfg.scenario, cfg.overrides);
    if (cfg.dt_sim) spec.scenario.dt_sim = *cfg.dt_sim;
    if (cfg.dt_control) spec.scenario.dt_control = *cfg.dt_control;
    spec.scenario.validate();
  } catch (const std::exception& e) {
    out << "config error: " << e.what() << "\n";
    return kBadConfig;
  }

  const Scenario& s = spec.scenario;
  TrajectoryRecord record;
  std::string abort_reason;
  try {
    record = run_scenario(s);
  } catch (const ScenarioBlowup& e) {
    record = e.record;  // partial record up to the failure
    abort_reason = e.what();
  } catch (const std::exception& e) {
    out << "runtime error: " << e.what() << "\n";
    return kRuntimeError;
  }

  const std::string dir = cfg.output_dir.value_or(".");
  nlohmann::ordered_json summary = summary_json(s, record);
  if (!abort_reason.empty()) summary["aborted"] = abort_reason;
  try {
    std::filesystem::create_directories(dir);
    write_csv(record, dir + "/" + s.name + ".csv");
    detail::write_json(dir, s.name + "_summary.json", summary);
  } catch (const std::exception& e) {
    out << "output error: " << e.what() << "\n";
    return kRuntimeError;
  }
  out << "wrote " << dir << "/" << s.name << ".csv and " << dir << "/" << s.name
      << "_summary.json\n";
  if (!abort_reason.empty()) {
    out << "run " << s.name << ": ABORTED (" << abort_reason << ")\n";
    return kRuntimeError;
  }

  const bool min_b_ok =
      summary.at("min_B").is_null() || summary.at("min_B").get<double>() >= -cfg.tol_b;
  const bool feasible =
      summary.at("status_counts").at("infeasible_best_effort").get<std::size_t>() == 0;
  const bool safe = min_b_ok && feasible;
  out << "run " << s.name << ": rows=" << record.rows.size()
      << " min_B=" << summary.at("min_B").dump() << " min_h=" << summary.at("min_h").dump()
      << " worst_status=" << summary.at("worst_status").get<std::string>() << " "
      << (safe ? "PASS" : "FAIL") << "\n";
  return safe ? kOk : kCheckFailed;
}

/// Config: {"field": <field spec>, "box": {"lo": [...], "hi": [...]},
///          "mode": "global" | "boundary", "lambda": l, "epsilon": e,
///          "samples": n, "seed": s}. Boundary mode restricts sampling to
/// the band |field(x) + lambda| <= epsilon.
inline int cmd_lipschitz(const nlohmann::json& config, const std::optional<std::string>& output_dir,
                         std::ostream& out) {
  ScalarField phi;
  LipschitzRegion region;
  int n_samples = 20000;
  unsigned seed = kDefaultSeed;
  try {
    if (!config.is_object()) throw std::invalid_argument("config: expected a JSON object");
    phi = fields::make_field(config.at("field"));
    const auto& box = config.at("box");
    region.box = Box(scenarios::detail::to_vector(box.at("lo"), "lo"),
                     scenarios::detail::to_vector(box.at("hi"), "hi"));
    const std::string mode = config.value("mode", std::string("global"));
    if (mode == "boundary") {
      region = LipschitzRegion::boundary(region.box, config.at("lambda").get<double>(),
                                         config.at("epsilon").get<double>());
    } else if (mode != "global") {
      throw std::invalid_argument("config: mode must be 'global' or 'boundary'");
    }
    n_samples = config.value("samples", 20000);
    seed = config.value("seed", kDefaultSeed);
  } catch (const std::exception& e) {
    out << "config error: " << e.what() << "\n";
    return kBadConfig;
  }

  LipschitzEstimate est;
  try {
    est = estimate_lipschitz(phi, region, n_samples, seed);
  } catch (const std::exception& e) {
    out << "estimation error: " << e.what() << "\n";
    return kRuntimeError;
  }
  nlohmann::ordered_json rep;
  rep["field"] = phi.name;
  rep["mode"] = est.mode;
  rep["samples_used"] = est.samples_used;
  rep["raw_max"] = est.raw_max;
  rep["value"] = est.value;
  out << "lipschitz " << phi.name << " (" << est.mode << "): value=" << est.value
      << " raw_max=" << est.raw_max << " samples_used=" << est.samples_used << "\n";
  if (output_dir) detail::write_json(*output_dir, "lipschitz_" + phi.name + ".json", rep);
  return kOk;
}

/// Config: {"alpha": <fn spec>, "alpha_p": <fn spec>, "Lambda": A,
///          "decomposition_grid": n?, "s_max": s?, "knot_spacing": d?}.
/// Tabulates the merged rate function beta and reports its knots.
inline int cmd_beta(const nlohmann::json& config, const std::optional<std::string>& output_dir,
                    std::ostream& out) {
  ExtendedKeFn alpha, alpha_p;
  double A = 0.0;
  int grid = 1001;
  double s_max = std::numeric_limits<double>::quiet_NaN();
  double knot_spacing = 2e-5;
  try {
    if (!config.is_object()) throw std::invalid_argument("config: expected a JSON object");
    alpha = config.at("alpha").get<ExtendedKeFn>();
    alpha_p = config.at("alpha_p").get<ExtendedKeFn>();
    A = config.at("Lambda").get<double>();
    grid = config.value("decomposition_grid", 1001);
    s_max = config.value("s_max", s_max);
    knot_spacing = config.value("knot_spacing", 2e-5);
  } catch (const std::exception& e) {
    out << "config error: " << e.what() << "\n";
    return kBadConfig;
  }

  ExtendedKeFn beta;
  try {
    beta = compose_beta(alpha, alpha_p, A, grid, s_max, knot_spacing);
  } catch (const std::exception& e) {
    out << "composition error: " << e.what() << "\n";
    return kRuntimeError;
  }
  const auto& knots = beta.knots();
  out << "beta: " << knots.size() << " knots on [" << knots.front().first << ", "
      << knots.back().first << "], beta(0)=" << beta(0.0) << ", beta(" << knots.back().first
      << ")=" << knots.back().second << "\n";
  if (output_dir) {
    nlohmann::ordered_json rep;
    rep["alpha"] = nlohmann::json(alpha);
    rep["alpha_p"] = nlohmann::json(alpha_p);
    rep["Lambda"] = A;
    rep["beta"] = nlohmann::json(beta);
    detail::write_json(*output_dir, "beta.json", rep);
  }
  return kOk;
}

}  // namespace tvcbf::app
