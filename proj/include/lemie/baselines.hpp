#pragma once

// The comparison methods: naive pooling, consensus pooling of local draws
// (plain and precision-weighted), prior fractionation for the methods that
// need it, and the two density-product samplers with their recursive
// pairwise variants.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lemie/draws.hpp"
#include "lemie/mie.hpp"
#include "lemie/model.hpp"
#include "lemie/samplers.hpp"

namespace lemie {

// Prior raised to the 1/M power, per family.  The local posteriors built on
// these multiply back to the single-node posterior.
BetaParams fractionate_beta(const BetaParams& prior, int m);

/// MVN: mean unchanged, covariance scaled by M.
void fractionate_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                     int m, Eigen::VectorXd& mean_out, Eigen::MatrixXd& cov_out);

/// NIW: nu becomes nu/M - ((M-1)/M) d - (M-1)/M (the inverse-Wishart
/// determinant exponent divided by M), psi and mu0 unchanged, kappa scaled
/// by 1/M.
NIWParams fractionate_niw(const NIWParams& prior, int d, int m);

/// True iff floor(n / M) > 2 d, the propriety condition for local posteriors
/// under the improper fractionated NIW prior with evenly-split data.
bool check_fractionated_propriety(int d, long n, int m);

enum class CmcVariant { cmc1, cmc2 };

/// Combines the h-th draws across parts: plain average (cmc1) or the
/// precision-weighted combination using per-part sample moments (cmc2,
/// diagonal fallback on singular covariances).  Parts are truncated to the
/// smallest count first.
ParamDraws cmc_pool(const std::vector<Eigen::MatrixXd>& local_sets,
                    CmcVariant variant, bool* fallback_used = nullptr);

struct DpeOptions {
  long iters = 0;        // 0 means one retained draw per pooled index, N-bar
  bool recursive = false;
  std::uint64_t seed = 0;
  double sdpe_bandwidth_power = 1.0;  // exponent on b in M / b^power
  std::function<bool(const Eigen::RowVectorXd&)> in_support;  // optional flag
};

struct DpeReport {
  std::string method;
  double acceptance_rate = 0.0;
  long proposals = 0;
  long accepted = 0;
  long out_of_support = 0;  // draws failing in_support (still retained)
  int stages = 1;           // > 1 in recursive mode
};

/// Kernel density product sampler: Metropolis-within-Gibbs over per-part
/// draw indices (j ascending, uniform proposals) with one retained draw of
/// theta per sweep from the selected mixture component, bandwidth shrinking
/// as sweep^(-1/(p+4)).  Recursive mode combines parts pairwise per stage
/// and recurses on the outputs.
ParamDraws ndpe_sample(const std::vector<Eigen::MatrixXd>& local_sets,
                       const DpeOptions& opts, DpeReport* report = nullptr);

/// Density product sampler with per-part normal approximations divided out:
/// same index sweep, but components are N(mu(h), Sigma(h)) with
/// Sigma(h) = (M / b I_p + (Sigma*)^-1)^-1 and weights corrected by the
/// fitted normals.  Falls back to diagonal part covariances when needed.
ParamDraws sdpe_sample(const std::vector<Eigen::MatrixXd>& local_sets,
                       const DpeOptions& opts, DpeReport* report = nullptr);

/// Unweighted mean of f over all pooled draws.
Eigen::VectorXd naive_estimate(const Eigen::MatrixXd& pooled,
                               const EstimandFn& f = nullptr);

void write_dpe_report(const DpeReport& report, const std::string& path);

}  // namespace lemie
