#pragma once

// Gaussian approximations built from the pooled local-posterior draws, used
// to enrich the weighting schemes with extra proposal components whose
// densities are known exactly.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lemie/draws.hpp"
#include "lemie/federation.hpp"
#include "lemie/mie.hpp"
#include "lemie/model.hpp"
#include "lemie/rng.hpp"

namespace lemie {

struct LaplaceApprox {
  int type_tag = 0;  // 1 precision-weighted, 2 pooled moments, 3 shrunk scatter
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd chol;       // lower triangular, chol * chol^T == sigma
  bool fallback_used = false; // some covariance was replaced by its diagonal
};

/// Per-part draw blocks of a run, in component order (parts only).
std::vector<Eigen::MatrixXd> local_blocks(const FederatedRun& run);

/// Sample mean and unbiased covariance of the rows of draws.
void row_moments(const Eigen::MatrixXd& draws, Eigen::VectorXd& mu,
                 Eigen::MatrixXd& sigma);

/// Inverse of a covariance matrix; a matrix that cannot be factored (or is
/// numerically singular) is replaced by the diagonal of its variances, which
/// sets fell_back.  A zero variance cannot be repaired and throws.
Eigen::MatrixXd robust_precision(const Eigen::MatrixXd& sigma, bool& fell_back);

/// Precision-weighted combination of per-part sample moments.  Parts whose
/// sample covariance is not invertible fall back to the diagonal of their
/// variances.  When pooled != nullptr it receives the deterministic pooled
/// combinations of the h-th draw of every part, h < min_j N_j.
LaplaceApprox laplace_type1(const std::vector<Eigen::MatrixXd>& local_sets,
                            Eigen::MatrixXd* pooled = nullptr);

/// Sample mean and covariance of all pooled draws taken together.
LaplaceApprox laplace_type2(const Eigen::MatrixXd& pooled_draws);

/// Pooled mean with a covariance shrunk toward psi: per-part centred scatter
/// plus psi, divided by N + nu - p - 1.
LaplaceApprox laplace_type3(const std::vector<Eigen::MatrixXd>& local_sets,
                            const Eigen::MatrixXd& psi, double nu);

/// laplace_type3 with psi = I_p and nu = p + 2.
LaplaceApprox laplace_type3(const std::vector<Eigen::MatrixXd>& local_sets);

ParamDraws laplace_sample(const LaplaceApprox& la, long n, RngStream& rng);

/// Exact normalised log-densities of la at each row of draws.
Eigen::VectorXd laplace_logpdf_batch(const LaplaceApprox& la,
                                     const Eigen::MatrixXd& draws);

/// 0.5 * log det(2 pi e Sigma).
double laplace_entropy(const LaplaceApprox& la);

void write_laplace_json(const LaplaceApprox& la, const std::string& path);
LaplaceApprox read_laplace_json(const std::string& path);

struct EnrichmentOptions {
  std::vector<int> types = {1};      // subset of {1,2,3}, in component order
  long draws_per_type = 1000;
  bool pool_type1 = false;           // deterministic pooled draws instead of
                                     // fresh ones for the type-1 component
  long chunk_size = 8192;
};

/// Builds the requested approximations from the run's part blocks, extends
/// the run with draws from each (one extra communication round), and returns
/// a view whose exact components carry the normalised Gaussian log-densities
/// and closed-form entropies.  Types drawing zero samples are dropped.  With
/// no types this is identical to build_mixture_view(run, model).
MixtureView enrich_with_laplace(FederatedRun& run, const ModelSpec& model,
                                const EnrichmentOptions& opts, std::uint64_t seed,
                                std::vector<LaplaceApprox>* out_approx = nullptr);

}  // namespace lemie
