#pragma once

// Config-driven scenario runner: builds a dataset, partitions it, runs the
// pooling protocol, applies every requested estimator, scores each against
// the analytic (or long-chain) truth, and writes tidy results plus plot data.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace lemie {

struct LaplaceSettings {
  std::vector<int> types = {1};
  long count = 1000;
  bool pool_type1 = false;
};

struct TruthSettings {
  std::string kind = "analytic";  // "analytic" or "reference_chain"
  long count = 10000;             // scoring draws
  double chain_factor = 10.0;     // reference chain length vs local chains
};

struct KdeSettings {
  std::string kernel;              // "", "rect" or "normal"; "" = normal
  std::vector<double> bandwidth;   // empty = Silverman per dimension
};

/// Everything needed to reproduce one experiment.  `data` carries
/// model-specific generation knobs (e.g. positives for the Bernoulli model,
/// the observation mean/covariance for the MVN models, theta_true for
/// logistic regression); `frac_prior` optionally overrides the derived
/// fractionated prior for the consensus methods.
struct ScenarioConfig {
  std::string scenario = "scenario";
  std::string model = "beta_bernoulli";
  long n = 1000;
  int d = 1;
  int m = 1;
  std::string partition = "random";
  nlohmann::json prior;
  nlohmann::json data;
  nlohmann::json frac_prior;
  long n_per_worker = 1000;
  LaplaceSettings laplace;
  std::vector<std::string> methods;
  std::uint64_t seed = 1;
  TruthSettings truth;
  KdeSettings kde;
  long chunk_size = 8192;
  double sdpe_bandwidth_power = 1.0;
  bool dpe_recursive = false;
  bool save_weights = false;  // persist per-method weight sets next to results
};

ScenarioConfig parse_scenario_config(const nlohmann::json& j);
nlohmann::json scenario_config_json(const ScenarioConfig& cfg);

/// Tidy result record: one metric per row.  Metrics come from the fixed
/// vocabulary {err_mean, err_q025, err_q975, kl, ess, khat, failed}; a
/// "failed" row carries the reason in note and NaN values.
struct ResultRow {
  std::string scenario;
  std::string method;
  int m = 0;
  std::string metric;
  double value = 0.0;
  double se = 0.0;
  std::string note;
};

struct ScenarioResult {
  std::vector<ResultRow> rows;
  nlohmann::json manifest;
  bool any_failed = false;
};

/// Euclidean distance between an estimate and the truth vector.
double error_2norm(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth);

/// Runs one scenario and writes results.csv, diagnostics.csv, manifest.json,
/// transcript.jsonl and plot data under out_dir.  Estimator failures become
/// failed rows; the run continues.
ScenarioResult run_scenario(const ScenarioConfig& cfg, const std::string& out_dir);

/// Runs the config once per grid value of `field` ("m" or "n_per_worker"),
/// writing per-run outputs in subdirectories plus combined results and
/// per-metric curves at the top level.  Truth shared across runs is computed
/// once.
ScenarioResult run_sweep(const ScenarioConfig& base, const std::string& field,
                         const std::vector<long>& values,
                         const std::string& out_dir);

void write_results_csv(const std::vector<ResultRow>& rows,
                       const std::string& path);
std::vector<ResultRow> read_results_csv(const std::string& path);

/// Truth draws and summary for a config (posterior draws, mean, quantiles).
void write_truth(const ScenarioConfig& cfg, const std::string& out_dir);

}  // namespace lemie
