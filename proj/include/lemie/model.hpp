#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

#include "lemie/draws.hpp"

namespace lemie {

/// Prior family tag, used by fractionation and the conjugate samplers.
enum class PriorFamily { beta, mvn, niw, mvn_iid };

std::string to_string(PriorFamily f);

/// Model abstraction: a prior plus per-part log-likelihoods, everything in
/// log space.  log_prior and log_lik_part return -inf (never NaN) outside
/// support; log_lik_part(j, theta) reads only data part j, so the part
/// log-likelihoods sum to the full-data log-likelihood.
struct ModelSpec {
  int parameter_dim = 0;
  int num_parts = 0;
  PriorFamily prior_family = PriorFamily::mvn;
  std::string family_name;  // "beta_bernoulli", "mvn_known_sigma", "mvn_niw", "logistic"

  std::function<double(const Eigen::VectorXd&)> log_prior;
  std::function<double(int, const Eigen::VectorXd&)> log_lik_part;
  /// Optional fast path: fills out[k] = log_lik_part(j, draws.row(k)) for a
  /// whole draw matrix.  Falls back to the scalar function when empty.
  std::function<void(int, const Eigen::MatrixXd&, Eigen::Ref<Eigen::VectorXd>)>
      log_lik_part_batch;

  double log_lik_total(const Eigen::VectorXd& theta) const;
  /// Batched variant of log_lik_total over a draw matrix.
  Eigen::VectorXd log_lik_total_batch(const Eigen::MatrixXd& draws) const;
  /// log_lik_part for a whole draw matrix via the batch path when available.
  Eigen::VectorXd log_lik_part_all(int j, const Eigen::MatrixXd& draws) const;
  Eigen::VectorXd log_prior_batch(const Eigen::MatrixXd& draws) const;
};

/// loglik_total must be the sum over parts of log_lik_part(j, theta); returns
/// loglik_total + log_prior(theta), -inf outside support.  NaN input is a
/// contract violation.
double log_unnorm_posterior(const ModelSpec& model, double loglik_total,
                            const Eigen::VectorXd& theta);

}  // namespace lemie
