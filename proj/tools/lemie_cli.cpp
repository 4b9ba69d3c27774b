// Command-line front end: runs scenarios and sweeps from JSON configs,
// re-diagnoses persisted weight sets, and exports truth posteriors.
//
// Exit codes: 0 success, 2 when any estimator row failed, 3 on bad
// configuration or arguments.  LEMIE_WORKERS caps worker sampling threads.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lemie/diagnostics.hpp"
#include "lemie/experiments.hpp"
#include "lemie/mie.hpp"

namespace fs = std::filesystem;

namespace {

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  return nlohmann::json::parse(in);
}

/// Flag overrides shared by the config-driven subcommands.  Presence is
/// tracked through the CLI11 option objects so unset flags leave the config
/// untouched.
struct Overrides {
  CLI::Option* seed_opt = nullptr;
  CLI::Option* methods_opt = nullptr;
  CLI::Option* laplace_opt = nullptr;
  CLI::Option* chunk_opt = nullptr;
  std::uint64_t seed = 0;
  std::vector<std::string> methods;
  std::vector<int> laplace_types;
  long chunk_size = 8192;

  void attach(CLI::App* sub, bool full) {
    seed_opt = sub->add_option("--seed", seed, "Override the root RNG seed");
    if (!full) return;
    methods_opt = sub->add_option("--methods", methods,
                                  "Estimators to run (comma separated)")
                      ->delimiter(',');
    laplace_opt = sub->add_option("--laplace-types", laplace_types,
                                  "Laplace approximation types, subset of 1,2,3")
                      ->delimiter(',');
    chunk_opt = sub->add_option("--chunk-size", chunk_size,
                                "Likelihood evaluation chunk size");
  }

  void apply(lemie::ScenarioConfig& cfg) const {
    if (seed_opt != nullptr && *seed_opt) cfg.seed = seed;
    if (methods_opt != nullptr && *methods_opt) cfg.methods = methods;
    if (laplace_opt != nullptr && *laplace_opt) cfg.laplace.types = laplace_types;
    if (chunk_opt != nullptr && *chunk_opt) cfg.chunk_size = chunk_size;
  }
};

nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Importance-weighted posterior estimation on partitioned data"};
  app.require_subcommand(1);

  std::string config_path;
  std::string weights_path;
  std::string out_dir = "out";

  auto* run_cmd = app.add_subcommand("run", "Run one scenario end to end");
  run_cmd->add_option("config", config_path, "Scenario config JSON")->required();
  run_cmd->add_option("--out-dir", out_dir, "Output directory");
  Overrides run_over;
  run_over.attach(run_cmd, true);

  auto* sweep_cmd = app.add_subcommand(
      "sweep", "Run the scenario over the config's sweep grid");
  sweep_cmd->add_option("config", config_path, "Scenario config JSON with a sweep block")
      ->required();
  sweep_cmd->add_option("--out-dir", out_dir, "Output directory");
  Overrides sweep_over;
  sweep_over.attach(sweep_cmd, true);

  auto* diag_cmd = app.add_subcommand(
      "diagnose", "Recompute ESS and tail diagnostics for a saved weight set");
  diag_cmd->add_option("weights", weights_path, "weights CSV written by run")
      ->required();
  auto* diag_out = diag_cmd->add_option("--out-dir", out_dir,
                                        "Also write diagnose.json here");

  auto* truth_cmd = app.add_subcommand(
      "truth", "Export truth posterior draws and summaries for a config");
  truth_cmd->add_option("config", config_path, "Scenario config JSON")->required();
  truth_cmd->add_option("--out-dir", out_dir, "Output directory");
  Overrides truth_over;
  truth_over.attach(truth_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  try {
    if (run_cmd->parsed()) {
      lemie::ScenarioConfig cfg = lemie::parse_scenario_config(load_json(config_path));
      run_over.apply(cfg);
      const lemie::ScenarioResult res = lemie::run_scenario(cfg, out_dir);
      return res.any_failed ? 2 : 0;
    }

    if (sweep_cmd->parsed()) {
      const nlohmann::json j = load_json(config_path);
      lemie::ScenarioConfig cfg = lemie::parse_scenario_config(j);
      sweep_over.apply(cfg);
      if (!j.contains("sweep")) {
        throw std::invalid_argument(
            "sweep config needs a top-level sweep: {field, values} block");
      }
      const std::string field = j["sweep"].value("field", "m");
      const auto values = j["sweep"].at("values").get<std::vector<long>>();
      const lemie::ScenarioResult res = lemie::run_sweep(cfg, field, values, out_dir);
      return res.any_failed ? 2 : 0;
    }

    if (diag_cmd->parsed()) {
      fs::path sidecar(weights_path);
      sidecar.replace_extension(".json");
      const lemie::WeightedSampleSet ws = lemie::read_weighted_set(
          weights_path, fs::exists(sidecar) ? sidecar.string() : "");
      const lemie::DiagnosticsReport rep = lemie::diagnose_weights(ws);
      nlohmann::json out;
      out["ess"] = rep.ess;
      out["khat"] = finite_or_null(rep.khat);
      out["scheme"] = rep.scheme.empty() ? ws.scheme : rep.scheme;
      out["flags"] = rep.flags;
      out["draws"] = ws.draws.count();
      out["dim"] = ws.draws.dim();
      std::cout << out.dump(2) << std::endl;
      if (*diag_out) {
        fs::create_directories(out_dir);
        std::ofstream f((fs::path(out_dir) / "diagnose.json").string());
        f << out.dump(2) << "\n";
      }
      return 0;
    }

    if (truth_cmd->parsed()) {
      lemie::ScenarioConfig cfg = lemie::parse_scenario_config(load_json(config_path));
      truth_over.apply(cfg);
      lemie::write_truth(cfg, out_dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  }
  return 0;
}
