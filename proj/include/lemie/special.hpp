#pragma once

// Scalar special functions and log-domain helpers shared across modules.

#include <Eigen/Dense>

namespace lemie {

/// log(sum(exp(v))) with max subtraction; returns -inf for an empty or
/// all -inf input and never produces NaN from finite inputs.
double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v);

/// log of the Beta function.
double log_beta(double a, double b);

double digamma(double x);

/// Differential entropy of Beta(a, b) in nats.
double beta_entropy(double a, double b);

double beta_logpdf(double x, double a, double b);

/// Regularised incomplete beta function I_x(a, b).
double reg_inc_beta(double a, double b, double x);

/// Quantile of Beta(a, b) at probability p.
double beta_quantile(double a, double b, double p);

double normal_cdf(double x);

double normal_logpdf(double x, double mean, double sd);

/// Differential entropy of N(mean, cov) given log det(cov).
double mvn_entropy(int dim, double logdet_cov);

/// MVN log-density given the lower Cholesky factor of the covariance.
double mvn_logpdf_chol(const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::VectorXd& mean,
                       const Eigen::MatrixXd& chol_lower);

/// Multivariate-t log-density with scale matrix given by its lower Cholesky
/// factor and df degrees of freedom.
double mvt_logpdf_chol(const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::VectorXd& mean,
                       const Eigen::MatrixXd& scale_chol_lower, double df);

}  // namespace lemie
