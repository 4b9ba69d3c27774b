// Python bindings for the main operations: scenario/sweep execution, truth
// export, and the weight diagnostics.  Configs and results cross the
// boundary as JSON strings; the package __init__ wraps them in dicts.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <stdexcept>
#include <string>
#include <vector>

#include "lemie/diagnostics.hpp"
#include "lemie/experiments.hpp"

namespace py = pybind11;

namespace {

nlohmann::json rows_json(const std::vector<lemie::ResultRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"scenario", r.scenario},
                   {"method", r.method},
                   {"m", r.m},
                   {"metric", r.metric},
                   {"value", r.value},
                   {"se", r.se},
                   {"note", r.note}});
  }
  return arr;
}

std::string result_json(const lemie::ScenarioResult& res) {
  nlohmann::json out;
  out["any_failed"] = res.any_failed;
  out["rows"] = rows_json(res.rows);
  out["manifest"] = res.manifest;
  return out.dump();
}

}  // namespace

PYBIND11_MODULE(_lemie, m) {
  m.doc() = "Importance-weighted posterior estimation on partitioned data";

  m.def("error_2norm", &lemie::error_2norm, py::arg("estimate"),
        py::arg("truth"),
        "Euclidean distance between an estimate and the truth vector.");

  m.def(
      "khat",
      [](const Eigen::VectorXd& log_weights, long tail_count) {
        const lemie::GpdFit fit = lemie::fit_gpd_khat(log_weights, tail_count);
        py::dict d;
        d["khat"] = fit.khat;
        d["sigma"] = fit.sigma_hat;
        d["tail_count"] = fit.tail_count;
        d["threshold"] = fit.threshold;
        d["fitted"] = fit.fitted;
        return d;
      },
      py::arg("log_weights"), py::arg("tail_count") = 0,
      "Generalised Pareto tail-shape fit over the largest importance "
      "weights; khat is NaN when fewer than five positive exceedances "
      "exist.");

  m.def(
      "ess_from_log_weights",
      [](const Eigen::VectorXd& log_weights) {
        if (log_weights.size() == 0) {
          throw std::invalid_argument("log_weights is empty");
        }
        const double mx = log_weights.maxCoeff();
        if (!std::isfinite(mx)) {
          throw std::invalid_argument("all log weights are -inf or NaN");
        }
        const Eigen::ArrayXd w = (log_weights.array() - mx).exp();
        const double s = w.sum();
        return s * s / (w * w).sum();
      },
      py::arg("log_weights"),
      "Effective sample size 1 / sum(normalised weights squared).");

  m.def(
      "_run_scenario_json",
      [](const std::string& config_json, const std::string& out_dir) {
        const lemie::ScenarioConfig cfg =
            lemie::parse_scenario_config(nlohmann::json::parse(config_json));
        return result_json(lemie::run_scenario(cfg, out_dir));
      },
      py::arg("config_json"), py::arg("out_dir"),
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "_run_sweep_json",
      [](const std::string& config_json, const std::string& field,
         const std::vector<long>& values, const std::string& out_dir) {
        const lemie::ScenarioConfig cfg =
            lemie::parse_scenario_config(nlohmann::json::parse(config_json));
        return result_json(lemie::run_sweep(cfg, field, values, out_dir));
      },
      py::arg("config_json"), py::arg("field"), py::arg("values"),
      py::arg("out_dir"), py::call_guard<py::gil_scoped_release>());

  m.def(
      "_write_truth_json",
      [](const std::string& config_json, const std::string& out_dir) {
        const lemie::ScenarioConfig cfg =
            lemie::parse_scenario_config(nlohmann::json::parse(config_json));
        lemie::write_truth(cfg, out_dir);
      },
      py::arg("config_json"), py::arg("out_dir"),
      py::call_guard<py::gil_scoped_release>());
}
