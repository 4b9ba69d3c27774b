#include "lemie/laplace.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "lemie/special.hpp"

namespace lemie {

void row_moments(const Eigen::MatrixXd& draws, Eigen::VectorXd& mu,
                 Eigen::MatrixXd& sigma) {
  const double n = static_cast<double>(draws.rows());
  mu = draws.colwise().mean();
  const Eigen::MatrixXd centred = draws.rowwise() - mu.transpose();
  sigma = centred.transpose() * centred / (n - 1.0);
}

Eigen::MatrixXd robust_precision(const Eigen::MatrixXd& sigma, bool& fell_back) {
  const Eigen::MatrixXd sym = 0.5 * (sigma + sigma.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-12) {
    return llt.solve(Eigen::MatrixXd::Identity(sigma.rows(), sigma.cols()));
  }
  fell_back = true;
  Eigen::VectorXd var = sym.diagonal();
  for (Eigen::Index i = 0; i < var.size(); ++i) {
    if (!(var[i] > 0.0)) {
      throw std::runtime_error(
          "covariance has a zero-variance coordinate, diagonal fallback is singular");
    }
  }
  return var.cwiseInverse().asDiagonal();
}

namespace {

/// Symmetrise and factor; on failure retry with the diagonal alone.
void finalise(LaplaceApprox& la) {
  la.sigma = 0.5 * (la.sigma + la.sigma.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt(la.sigma);
  if (llt.info() == Eigen::Success) {
    la.chol = llt.matrixL();
    return;
  }
  Eigen::VectorXd var = la.sigma.diagonal();
  bool ok = true;
  for (Eigen::Index i = 0; i < var.size(); ++i) ok = ok && var[i] > 0.0;
  if (ok) {
    Eigen::MatrixXd diag = var.asDiagonal();
    Eigen::LLT<Eigen::MatrixXd> llt2(diag);
    if (llt2.info() == Eigen::Success) {
      la.sigma = diag;
      la.chol = llt2.matrixL();
      la.fallback_used = true;
      return;
    }
  }
  throw std::runtime_error("laplace type " + std::to_string(la.type_tag) +
                           ": covariance singular even after diagonal fallback");
}

void check_local_sets(const std::vector<Eigen::MatrixXd>& sets, int min_rows_extra) {
  if (sets.empty()) throw std::invalid_argument("laplace: no local draw sets");
  const Eigen::Index p = sets[0].cols();
  for (size_t j = 0; j < sets.size(); ++j) {
    if (sets[j].cols() != p) {
      throw std::invalid_argument("laplace: parameter dimension mismatch across parts");
    }
    if (sets[j].rows() < p + min_rows_extra) {
      throw std::invalid_argument("laplace: part " + std::to_string(j) +
                                  " has too few draws (need > parameter dimension)");
    }
  }
}

}  // namespace

std::vector<Eigen::MatrixXd> local_blocks(const FederatedRun& run) {
  std::vector<Eigen::MatrixXd> blocks;
  blocks.reserve(run.num_parts);
  for (int j = 0; j < run.num_parts; ++j) {
    blocks.push_back(run.pooled.draws.middleRows(run.block_offsets[j],
                                                 run.block_counts[j]));
  }
  return blocks;
}

LaplaceApprox laplace_type1(const std::vector<Eigen::MatrixXd>& local_sets,
                            Eigen::MatrixXd* pooled) {
  check_local_sets(local_sets, 1);
  const Eigen::Index p = local_sets[0].cols();
  LaplaceApprox la;
  la.type_tag = 1;

  std::vector<Eigen::MatrixXd> precisions(local_sets.size());
  Eigen::MatrixXd prec_sum = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd weighted_mean_sum = Eigen::VectorXd::Zero(p);
  for (size_t j = 0; j < local_sets.size(); ++j) {
    Eigen::VectorXd mu_j;
    Eigen::MatrixXd sigma_j;
    row_moments(local_sets[j], mu_j, sigma_j);
    precisions[j] = robust_precision(sigma_j, la.fallback_used);
    prec_sum += precisions[j];
    weighted_mean_sum += precisions[j] * mu_j;
  }

  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (prec_sum + prec_sum.transpose()));
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("laplace type 1: summed precision not positive definite");
  }
  la.sigma = llt.solve(Eigen::MatrixXd::Identity(p, p));
  la.mu = llt.solve(weighted_mean_sum);
  finalise(la);

  if (pooled != nullptr) {
    long nbar = local_sets[0].rows();
    for (const auto& s : local_sets) nbar = std::min<long>(nbar, s.rows());
    pooled->resize(nbar, p);
    for (long h = 0; h < nbar; ++h) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(p);
      for (size_t j = 0; j < local_sets.size(); ++j) {
        acc += precisions[j] * local_sets[j].row(h).transpose();
      }
      pooled->row(h) = llt.solve(acc).transpose();
    }
  }
  return la;
}

LaplaceApprox laplace_type2(const Eigen::MatrixXd& pooled_draws) {
  if (pooled_draws.rows() < pooled_draws.cols() + 1) {
    throw std::invalid_argument("laplace type 2: need more draws than dimensions");
  }
  LaplaceApprox la;
  la.type_tag = 2;
  row_moments(pooled_draws, la.mu, la.sigma);
  finalise(la);
  return la;
}

LaplaceApprox laplace_type3(const std::vector<Eigen::MatrixXd>& local_sets,
                            const Eigen::MatrixXd& psi, double nu) {
  if (local_sets.empty()) throw std::invalid_argument("laplace: no local draw sets");
  const Eigen::Index p = local_sets[0].cols();
  for (size_t j = 0; j < local_sets.size(); ++j) {
    if (local_sets[j].cols() != p) {
      throw std::invalid_argument("laplace: parameter dimension mismatch across parts");
    }
    if (local_sets[j].rows() < 1) {
      throw std::invalid_argument("laplace type 3: empty part draw set");
    }
  }
  if (psi.rows() != p || psi.cols() != p) {
    throw std::invalid_argument("laplace type 3: psi must be p x p");
  }
  long total = 0;
  for (const auto& s : local_sets) total += s.rows();
  const double denom = static_cast<double>(total) + nu - static_cast<double>(p) - 1.0;
  if (denom <= 0.0) {
    throw std::invalid_argument("laplace type 3: N + nu - p - 1 must be positive");
  }

  LaplaceApprox la;
  la.type_tag = 3;
  Eigen::MatrixXd scatter = psi;
  Eigen::VectorXd mean_sum = Eigen::VectorXd::Zero(p);
  for (const auto& s : local_sets) {
    const Eigen::RowVectorXd centre = s.colwise().mean();
    const Eigen::MatrixXd centred = s.rowwise() - centre;
    scatter += centred.transpose() * centred;
    mean_sum += s.colwise().sum().transpose();
  }
  la.sigma = scatter / denom;
  la.mu = mean_sum / static_cast<double>(total);
  finalise(la);
  return la;
}

LaplaceApprox laplace_type3(const std::vector<Eigen::MatrixXd>& local_sets) {
  if (local_sets.empty()) throw std::invalid_argument("laplace: no local draw sets");
  const Eigen::Index p = local_sets[0].cols();
  return laplace_type3(local_sets, Eigen::MatrixXd::Identity(p, p),
                       static_cast<double>(p) + 2.0);
}

ParamDraws laplace_sample(const LaplaceApprox& la, long n, RngStream& rng) {
  if (n < 0) throw std::invalid_argument("laplace_sample: negative draw count");
  ParamDraws d;
  d.source = "laplace:" + std::to_string(la.type_tag);
  d.draws.resize(n, la.mu.size());
  for (long h = 0; h < n; ++h) {
    d.draws.row(h) = rng.mvn_given_chol(la.mu, la.chol).transpose();
  }
  return d;
}

Eigen::VectorXd laplace_logpdf_batch(const LaplaceApprox& la,
                                     const Eigen::MatrixXd& draws) {
  const Eigen::Index p = la.mu.size();
  if (draws.cols() != p) {
    throw std::invalid_argument("laplace_logpdf_batch: dimension mismatch");
  }
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) logdet += std::log(la.chol(i, i));
  const double c = -0.5 * static_cast<double>(p) * std::log(2.0 * M_PI) - logdet;
  // Solve L z = (theta - mu) for all draws at once; logpdf = c - 0.5 |z|^2.
  Eigen::MatrixXd diffs = (draws.rowwise() - la.mu.transpose()).transpose();
  la.chol.triangularView<Eigen::Lower>().solveInPlace(diffs);
  return (c - 0.5 * diffs.colwise().squaredNorm().array()).transpose();
}

double laplace_entropy(const LaplaceApprox& la) {
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < la.chol.rows(); ++i) logdet += std::log(la.chol(i, i));
  return mvn_entropy(static_cast<int>(la.mu.size()), 2.0 * logdet);
}

void write_laplace_json(const LaplaceApprox& la, const std::string& path) {
  nlohmann::json j;
  j["type"] = la.type_tag;
  j["fallback_used"] = la.fallback_used;
  j["mu"] = std::vector<double>(la.mu.data(), la.mu.data() + la.mu.size());
  std::vector<double> sigma_rowmajor;
  sigma_rowmajor.reserve(la.sigma.size());
  for (Eigen::Index r = 0; r < la.sigma.rows(); ++r) {
    for (Eigen::Index c = 0; c < la.sigma.cols(); ++c) {
      sigma_rowmajor.push_back(la.sigma(r, c));
    }
  }
  j["sigma"] = sigma_rowmajor;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

LaplaceApprox read_laplace_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  in >> j;
  LaplaceApprox la;
  la.type_tag = j.at("type").get<int>();
  la.fallback_used = j.at("fallback_used").get<bool>();
  const auto mu = j.at("mu").get<std::vector<double>>();
  const auto sigma = j.at("sigma").get<std::vector<double>>();
  const Eigen::Index p = static_cast<Eigen::Index>(mu.size());
  if (sigma.size() != static_cast<size_t>(p * p)) {
    throw std::runtime_error("laplace json: sigma size does not match mu");
  }
  la.mu = Eigen::Map<const Eigen::VectorXd>(mu.data(), p);
  la.sigma.resize(p, p);
  for (Eigen::Index r = 0; r < p; ++r) {
    for (Eigen::Index c = 0; c < p; ++c) la.sigma(r, c) = sigma[r * p + c];
  }
  finalise(la);
  return la;
}

MixtureView enrich_with_laplace(FederatedRun& run, const ModelSpec& model,
                                const EnrichmentOptions& opts, std::uint64_t seed,
                                std::vector<LaplaceApprox>* out_approx) {
  if (run.num_components() != run.num_parts) {
    throw std::invalid_argument(
        "enrich_with_laplace: run already has non-part components");
  }
  for (int t : opts.types) {
    if (t < 1 || t > 3) {
      throw std::invalid_argument("enrich_with_laplace: types must be 1, 2 or 3");
    }
  }
  const auto blocks = local_blocks(run);

  std::vector<LaplaceApprox> approxes;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> extras;
  for (int t : opts.types) {
    Eigen::MatrixXd pooled_t1;
    LaplaceApprox la;
    Eigen::MatrixXd draws;
    if (t == 1) {
      la = laplace_type1(blocks, opts.pool_type1 ? &pooled_t1 : nullptr);
      if (opts.pool_type1) {
        const long n = std::min<long>(pooled_t1.rows(), opts.draws_per_type);
        draws = pooled_t1.topRows(n);
      }
    } else if (t == 2) {
      la = laplace_type2(run.pooled.draws);
    } else {
      la = laplace_type3(blocks);
    }
    if (draws.rows() == 0 && opts.draws_per_type > 0) {
      RngStream rng(seed, "laplace-draws", static_cast<std::uint64_t>(t));
      draws = laplace_sample(la, opts.draws_per_type, rng).draws;
    }
    if (draws.rows() == 0) continue;  // zero-count components contribute nothing
    approxes.push_back(la);
    extras.emplace_back("laplace:" + std::to_string(t), std::move(draws));
  }
  if (out_approx != nullptr) *out_approx = approxes;
  if (extras.empty()) return build_mixture_view(run, model);

  extend_with_proposal_draws(run, extras, model, opts.chunk_size);

  const long total = run.total_draws();
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(approxes.size()), total);
  std::vector<double> entropies(approxes.size());
  for (size_t i = 0; i < approxes.size(); ++i) {
    rows.row(static_cast<Eigen::Index>(i)) =
        laplace_logpdf_batch(approxes[i], run.pooled.draws).transpose();
    entropies[i] = laplace_entropy(approxes[i]);
  }
  return build_mixture_view(run, model, std::move(rows), std::move(entropies));
}

}  // namespace lemie
