#pragma once

// Local-posterior samplers for the four experiment model families.
// All draws are exact (conjugate or accept/reject); every sampler is a
// deterministic function of its inputs and the caller-provided stream.

#include <cstdint>
#include <utility>

#include <Eigen/Dense>

#include "lemie/draws.hpp"
#include "lemie/rng.hpp"

namespace lemie {

struct BetaParams {
  double a = 1.0;
  double b = 1.0;
};

/// Normal-inverse-Wishart parameters.  kappa = 0, nu = 0, Psi = 0 encodes the
/// uninformative prior; propriety requires nu > d-1 after updating.
struct NIWParams {
  Eigen::VectorXd mu0;
  double kappa = 0.0;
  Eigen::MatrixXd psi;
  double nu = 0.0;
};

struct PolyaGammaState {
  Eigen::VectorXd omega;
  Eigen::VectorXd theta;
};

/// N iid draws from Beta(a + successes, b + trials - successes).
ParamDraws sample_beta_posterior(const BetaParams& prior, long successes,
                                 long trials, long N, RngStream& rng);

BetaParams beta_posterior_params(const BetaParams& prior, long successes, long trials);

/// Conjugate MVN posterior moments for iid rows with known covariance.
/// proper_prior = false means the flat (uninformative) prior, giving
/// N(xbar, Sigma/n); n = 0 with a proper prior returns the prior.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> mvn_known_sigma_posterior_moments(
    const Eigen::VectorXd& prior_mu0, const Eigen::MatrixXd& prior_sigma0,
    bool proper_prior, const Eigen::MatrixXd& sigma_known,
    const Eigen::MatrixXd& data_part);

ParamDraws sample_mvn_known_sigma_posterior(
    const Eigen::VectorXd& prior_mu0, const Eigen::MatrixXd& prior_sigma0,
    bool proper_prior, const Eigen::MatrixXd& sigma_known,
    const Eigen::MatrixXd& data_part, long N, RngStream& rng);

/// Conjugate NIW update for iid MVN rows.
NIWParams niw_posterior_params(const NIWParams& prior, const Eigen::MatrixXd& data_part);

/// Lower-triangular Bartlett factor A with A*A^T ~ Wishart(I, df).
Eigen::MatrixXd wishart_bartlett_lower(int d, double df, RngStream& rng);

/// Draw from inverse-Wishart(psi, df) via a Bartlett Wishart draw inverted
/// with triangular solves.  Requires df > d - 1 and psi PD.
Eigen::MatrixXd inverse_wishart_draw(const Eigen::MatrixXd& psi, double df,
                                     RngStream& rng);

/// Exact NIW posterior draws over (mu, Sigma); each row stacks mu then the
/// p(p+1)/2 lower-triangular entries of Sigma in column-major order.
/// Raises a propriety error unless n_part + nu > d - 1 and the posterior
/// scale matrix is PD.
ParamDraws sample_niw_posterior(const NIWParams& prior,
                                const Eigen::MatrixXd& data_part, long N,
                                RngStream& rng);

/// (mu, Sigma) packed in the sample_niw_posterior layout.
Eigen::VectorXd niw_pack(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma);

/// Inverse of niw_pack; fills both triangles of sigma.  PD is not checked.
void niw_unpack(const Eigen::Ref<const Eigen::VectorXd>& theta, int d,
                Eigen::VectorXd& mu, Eigen::MatrixXd& sigma);

/// Exact draw from the Polya-Gamma distribution PG(b, c) for integer b >= 1,
/// computed as the sum of b independent PG(1, c) draws (alternating-series
/// accept/reject for each).
double polya_gamma_draw(int b, double c, RngStream& rng);

/// Gibbs sampler for Bayesian logistic regression with grouped binomial rows
/// (x_i, trials c_i, successes y_i) and a proper N(prior_mean, prior_cov)
/// prior.  Alternates omega_i ~ PG(c_i, x_i^T theta) with
/// theta ~ N(m_omega, V_omega), V_omega = (X^T Omega X + B^-1)^-1,
/// m_omega = V_omega (X^T kappa + B^-1 b), kappa_i = y_i - c_i/2.
/// Returns the iters - burnin retained draws.  init, when given, replaces the
/// default prior_mean starting point.
ParamDraws logistic_gibbs(const Eigen::MatrixXd& X, const Eigen::VectorXd& trials,
                          const Eigen::VectorXd& successes,
                          const Eigen::VectorXd& prior_mean,
                          const Eigen::MatrixXd& prior_cov, long iters,
                          long burnin, RngStream& rng,
                          const Eigen::VectorXd* init = nullptr);

}  // namespace lemie
