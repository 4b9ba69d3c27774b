#pragma once

// Weight diagnostics (effective sample size, generalised-Pareto tail index)
// and the cross-entropy / KL machinery used to score an estimator's weighted
// draws against draws from the exact posterior.

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lemie/mie.hpp"

namespace lemie {

/// Effective sample size of a weighted draw set: 1 / sum(norm_weights^2).
/// The per-block scheme stores global effective weights (block weight times
/// block-normalised weight), so the same formula covers every scheme.
double ess(const WeightedSampleSet& ws);

/// Generalised-Pareto fit to the largest importance weights.  threshold is
/// the log-weight cut below the tail; sigma_hat is on the scale of weights
/// normalised by their maximum.  fitted = false means the tail was degenerate
/// (fewer than 5 positive exceedances) and khat/sigma_hat are NaN.
struct GpdFit {
  double khat = std::numeric_limits<double>::quiet_NaN();
  double sigma_hat = std::numeric_limits<double>::quiet_NaN();
  long tail_count = 0;
  double threshold = 0.0;
  bool fitted = false;
};

/// Tail-index estimate via the Zhang-Stephens profile-likelihood quadrature
/// over the default tail of ceil(min(0.2 N, 3 sqrt(N))) largest weights.
/// tail_count = 0 picks that rule; grid is the quadrature size.
GpdFit fit_gpd_khat(const Eigen::VectorXd& log_weights, long tail_count = 0,
                    int grid = 30);

/// Summary row for one weighting scheme: ESS, tail index, and threshold
/// flags ("khat>0.5", "khat>0.7", "gpd-no-fit").
struct DiagnosticsReport {
  double ess = 0.0;
  double khat = std::numeric_limits<double>::quiet_NaN();
  std::string scheme;
  std::vector<std::string> flags;
};

DiagnosticsReport diagnose_weights(const WeightedSampleSet& ws);

using LogDensityFn = std::function<double(const Eigen::RowVectorXd&)>;

/// Monte Carlo cross entropy -mean(log q) over draws from the truth, with
/// its standard error.  A zero density at any draw makes the estimate +inf
/// and sets the flag instead of throwing.
struct CrossEntropyResult {
  double estimate = 0.0;
  double se = 0.0;
  bool infinite = false;
};

CrossEntropyResult cross_entropy(const Eigen::MatrixXd& truth_draws,
                                 const LogDensityFn& log_density);

/// Cross entropy from already-evaluated log densities at the truth draws.
CrossEntropyResult cross_entropy_values(const Eigen::VectorXd& log_q);

/// KL(truth || q) = cross entropy minus the truth entropy, which callers
/// supply in closed form or as -mean(log pi) over the same draws.
double kl_divergence(const Eigen::MatrixXd& truth_draws,
                     const LogDensityFn& log_density, double entropy_of_truth,
                     double* se = nullptr, bool* infinite = nullptr);

/// Per-dimension Silverman rule-of-thumb bandwidths on the weighted draws,
/// with the effective sample size standing in for n.
Eigen::VectorXd silverman_bandwidth(const WeightedSampleSet& ws);

/// Kernel density scorer over a weighted draw set.  Scoring many points with
/// the one-dimensional rectangular kernel runs off sorted prefix sums; the
/// general case evaluates the kernel sum per point.
class KdeScorer {
 public:
  KdeScorer(const WeightedSampleSet& ws, DensityKernel kernel,
            Eigen::VectorXd bandwidth);

  double log_density(const Eigen::RowVectorXd& point) const;
  Eigen::VectorXd log_density_batch(const Eigen::MatrixXd& points) const;
  LogDensityFn fn() const;

 private:
  Eigen::MatrixXd draws_;
  Eigen::VectorXd log_norm_weights_;
  DensityKernel kernel_;
  Eigen::VectorXd bandwidth_;
  // 1-D rectangular fast path: draws sorted by coordinate with cumulative
  // weights alongside.
  bool fast_1d_ = false;
  std::vector<double> sorted_x_;
  std::vector<double> cum_w_;

  double rect_1d(double x) const;
};

}  // namespace lemie
