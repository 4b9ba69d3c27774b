#include "lemie/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace lemie {

std::string to_string(PriorFamily f) {
  switch (f) {
    case PriorFamily::beta: return "beta";
    case PriorFamily::mvn: return "mvn";
    case PriorFamily::niw: return "niw";
    case PriorFamily::mvn_iid: return "mvn_iid";
  }
  throw std::logic_error("unreachable");
}

double ModelSpec::log_lik_total(const Eigen::VectorXd& theta) const {
  double total = 0.0;
  for (int j = 0; j < num_parts; ++j) {
    const double v = log_lik_part(j, theta);
    if (std::isnan(v)) {
      throw std::runtime_error("log_lik_part returned NaN for part " + std::to_string(j));
    }
    total += v;
  }
  return total;
}

Eigen::VectorXd ModelSpec::log_lik_part_all(int j, const Eigen::MatrixXd& draws) const {
  Eigen::VectorXd out(draws.rows());
  if (log_lik_part_batch) {
    log_lik_part_batch(j, draws, out);
  } else {
    for (Eigen::Index k = 0; k < draws.rows(); ++k) {
      out[k] = log_lik_part(j, draws.row(k));
    }
  }
  for (Eigen::Index k = 0; k < out.size(); ++k) {
    if (std::isnan(out[k])) {
      throw std::runtime_error("log_lik_part returned NaN for part " + std::to_string(j));
    }
  }
  return out;
}

Eigen::VectorXd ModelSpec::log_lik_total_batch(const Eigen::MatrixXd& draws) const {
  Eigen::VectorXd total = Eigen::VectorXd::Zero(draws.rows());
  for (int j = 0; j < num_parts; ++j) total += log_lik_part_all(j, draws);
  return total;
}

Eigen::VectorXd ModelSpec::log_prior_batch(const Eigen::MatrixXd& draws) const {
  Eigen::VectorXd out(draws.rows());
  for (Eigen::Index k = 0; k < draws.rows(); ++k) out[k] = log_prior(draws.row(k));
  return out;
}

double log_unnorm_posterior(const ModelSpec& model, double loglik_total,
                            const Eigen::VectorXd& theta) {
  if (std::isnan(loglik_total)) {
    throw std::invalid_argument("log_unnorm_posterior: NaN log-likelihood");
  }
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (std::isnan(theta[i])) {
      throw std::invalid_argument("log_unnorm_posterior: NaN parameter");
    }
  }
  const double lp = model.log_prior(theta);
  if (std::isnan(lp)) {
    throw std::runtime_error("log_unnorm_posterior: model log_prior returned NaN");
  }
  if (lp == -std::numeric_limits<double>::infinity() ||
      loglik_total == -std::numeric_limits<double>::infinity()) {
    return -std::numeric_limits<double>::infinity();
  }
  return loglik_total + lp;
}

void validate_draws(const ParamDraws& d) {
  if (d.draws.rows() < 1) throw std::invalid_argument("ParamDraws: empty draw set");
  if (!d.draws.allFinite()) {
    throw std::invalid_argument("ParamDraws: non-finite draw coordinates");
  }
}

void write_draws_csv(const ParamDraws& d, const DrawSetMeta& meta,
                     const std::string& csv_path, const std::string& json_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path);
  csv << std::setprecision(17);
  for (Eigen::Index c = 0; c < d.dim(); ++c) {
    csv << (c ? "," : "") << "coord_" << c;
  }
  csv << "\n";
  for (Eigen::Index r = 0; r < d.count(); ++r) {
    for (Eigen::Index c = 0; c < d.dim(); ++c) {
      csv << (c ? "," : "") << d.draws(r, c);
    }
    csv << "\n";
  }
  nlohmann::json j;
  j["model"] = meta.model;
  j["part_id"] = meta.part_id;
  j["N"] = d.count();
  j["seed"] = d.seed;
  j["burnin"] = meta.burnin;
  j["source"] = d.source;
  std::ofstream js(json_path);
  if (!js) throw std::runtime_error("cannot write " + json_path);
  js << j.dump(2) << "\n";
}

ParamDraws read_draws_csv(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot read " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty draw csv: " + csv_path);
  const long dim = 1 + static_cast<long>(std::count(line.begin(), line.end(), ','));
  std::vector<double> values;
  long rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
    ++rows;
  }
  if (static_cast<long>(values.size()) != rows * dim) {
    throw std::runtime_error("ragged draw csv: " + csv_path);
  }
  ParamDraws d;
  d.draws.resize(rows, dim);
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < dim; ++c) d.draws(r, c) = values[r * dim + c];
  }
  return d;
}

}  // namespace lemie
