#pragma once

// Concrete model families: each builds a ModelSpec over a partitioned dataset
// (with cached per-part sufficient statistics and batched likelihood paths)
// and exposes its conjugate/analytic posterior where one exists.

#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lemie/dataset.hpp"
#include "lemie/model.hpp"
#include "lemie/samplers.hpp"

namespace lemie {

// ---------------------------------------------------------------------------
// Bernoulli outcomes with a Beta prior on the success probability.

struct BetaBernoulliFamily {
  BetaParams prior{1.0, 1.0};

  /// n rows with column "y"; the first `positives` rows are 1.
  static Dataset simulate(long n, long positives);

  ModelSpec spec(const PartitionedData& pd) const;

  /// (successes, trials) for one part, or the full data with part = -1.
  static std::pair<long, long> successes_trials(const PartitionedData& pd, int part = -1);

  BetaParams posterior(const PartitionedData& pd, int part = -1) const;
};

// ---------------------------------------------------------------------------
// iid MVN observations with known covariance; parameter is the mean.

struct MvnKnownSigmaFamily {
  Eigen::MatrixXd sigma;       // known observation covariance
  Eigen::VectorXd prior_mean;  // unused under the flat prior
  Eigen::MatrixXd prior_cov;
  bool proper_prior = false;

  static Dataset simulate(long n, const Eigen::VectorXd& mean,
                          const Eigen::MatrixXd& cov, RngStream& rng);

  ModelSpec spec(const PartitionedData& pd) const;

  /// Conjugate posterior (mean, covariance) for one part or the full data.
  std::pair<Eigen::VectorXd, Eigen::MatrixXd> posterior_moments(
      const PartitionedData& pd, int part = -1) const;
};

// ---------------------------------------------------------------------------
// iid MVN observations with unknown (mu, Sigma) under an NIW prior; the
// parameter vector is niw_pack(mu, Sigma).

struct MvnNiwFamily {
  NIWParams prior;  // kappa = nu = 0, psi = 0 encodes the uninformative prior

  static Dataset simulate(long n, const Eigen::VectorXd& mean,
                          const Eigen::MatrixXd& cov, RngStream& rng);

  ModelSpec spec(const PartitionedData& pd) const;

  NIWParams posterior(const PartitionedData& pd, int part = -1) const;

  int obs_dim() const { return static_cast<int>(prior.mu0.size()); }
};

// ---------------------------------------------------------------------------
// Logistic regression on binary predictors; rows carry (x, trials, successes)
// and parts regroup their rows by covariate pattern for the Gibbs sampler.

struct LogisticFamily {
  Eigen::VectorXd prior_mean;
  Eigen::MatrixXd prior_cov;

  /// n Bernoulli rows: intercept plus p-1 independent Bernoulli(1/2)
  /// predictors, outcome from the logistic model at theta_true.
  static Dataset simulate(long n, const Eigen::VectorXd& theta_true, RngStream& rng);

  ModelSpec spec(const PartitionedData& pd) const;

  /// Rows of one part (or all rows, part = -1) grouped by covariate pattern:
  /// returns (X, trials, successes) with one row per distinct pattern.
  static void grouped_design(const PartitionedData& pd, int part, Eigen::MatrixXd& X,
                             Eigen::VectorXd& trials, Eigen::VectorXd& successes);

  int param_dim() const { return static_cast<int>(prior_mean.size()); }
};

}  // namespace lemie
