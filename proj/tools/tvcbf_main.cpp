// Command-line front end. Subcommands:
//   verify     run the verification pipeline for a scenario and report checks
//   run        simulate a scenario, writing CSV and summary JSON artifacts
//   lipschitz  standalone Lipschitz constant estimator for a scalar field
//   beta       tabulate the merged rate function from an (alpha, alpha_p) pair
//
// Exit codes: 0 pass, 1 check/gate failure, 2 config error, 3 runtime error.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <tvcbf/app.hpp>

namespace {

int load_json(const std::string& path, nlohmann::json& out) {
  std::ifstream f(path);
  if (!f) {
    std::cout << "config error: cannot open '" << path << "'\n";
    return tvcbf::app::kBadConfig;
  }
  try {
    out = nlohmann::json::parse(f);
  } catch (const std::exception& e) {
    std::cout << "config error: " << e.what() << "\n";
    return tvcbf::app::kBadConfig;
  }
  return tvcbf::app::kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-varying control barrier functions: verification and simulation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string scenario_name;
  std::optional<std::string> out_dir;
  std::optional<unsigned> seed;
  std::optional<double> tol_b, dt_sim, dt_control;

  const auto add_scenario_opts = [&](CLI::App* sub) {
    auto* cfg = sub->add_option("--config", config_path, "JSON run config file");
    auto* name = sub->add_option("--scenario", scenario_name,
                                 "built-in scenario name (alternative to --config)");
    cfg->excludes(name);
    sub->add_option("--out", out_dir, "output directory for artifacts");
    sub->add_option("--seed", seed, "verification sampling seed");
  };

  CLI::App* verify = app.add_subcommand("verify", "check a scenario's certificates and premises");
  add_scenario_opts(verify);

  CLI::App* run = app.add_subcommand("run", "simulate a scenario and write CSV + summary");
  add_scenario_opts(run);
  run->add_option("--tol-b", tol_b, "barrier floor for the exit gate (default 1e-3)");
  run->add_option("--dt-sim", dt_sim, "integration step override");
  run->add_option("--dt-control", dt_control, "controller period override");

  CLI::App* lipschitz =
      app.add_subcommand("lipschitz", "estimate a field's Lipschitz constant by sampling");
  lipschitz->add_option("--config", config_path, "JSON estimator config file")->required();
  lipschitz->add_option("--out", out_dir, "output directory for the JSON report");

  CLI::App* beta = app.add_subcommand("beta", "tabulate the merged rate function");
  beta->add_option("--config", config_path, "JSON composition config file")->required();
  beta->add_option("--out", out_dir, "output directory for the JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? tvcbf::app::kOk : tvcbf::app::kBadConfig;
  }

  nlohmann::json config;
  if (verify->parsed() || run->parsed()) {
    if (!config_path.empty()) {
      if (const int rc = load_json(config_path, config)) return rc;
    } else if (!scenario_name.empty()) {
      config = {{"scenario", scenario_name}};
    } else {
      std::cout << "config error: pass --config FILE or --scenario NAME\n";
      return tvcbf::app::kBadConfig;
    }
    tvcbf::app::RunConfig rc;
    try {
      rc = tvcbf::app::parse_run_config(config);
    } catch (const std::exception& e) {
      std::cout << "config error: " << e.what() << "\n";
      return tvcbf::app::kBadConfig;
    }
    if (out_dir) rc.output_dir = *out_dir;
    if (seed) rc.seed = *seed;
    if (tol_b) rc.tol_b = *tol_b;
    if (dt_sim) rc.dt_sim = *dt_sim;
    if (dt_control) rc.dt_control = *dt_control;
    return verify->parsed() ? tvcbf::app::cmd_verify(rc, std::cout)
                            : tvcbf::app::cmd_run(rc, std::cout);
  }

  if (const int rc = load_json(config_path, config)) return rc;
  return lipschitz->parsed() ? tvcbf::app::cmd_lipschitz(config, out_dir, std::cout)
                             : tvcbf::app::cmd_beta(config, out_dir, std::cout);
}
