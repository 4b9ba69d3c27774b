#include "lemie/models.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>

#include "lemie/special.hpp"

namespace lemie {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

// Per-chunk snapshot cache shared by the per-part batch closures: the pooled
// draw matrix is evaluated once per part, so draw-level quantities that do
// not depend on the part are computed once per chunk and reused.  Keyed on a
// content digest, not the data pointer: chunk buffers are freed between
// evaluations and the allocator happily hands the next chunk the same
// address.
inline std::uint64_t content_digest(const Eigen::MatrixXd& m) {
  std::uint64_t s = 14695981039346656037ULL;
  const double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    unsigned char b[8];
    std::memcpy(b, &p[i], 8);
    for (int k = 0; k < 8; ++k) {
      s ^= b[k];
      s *= 1099511628211ULL;
    }
  }
  return s;
}

template <typename Snap>
struct ChunkCache {
  std::mutex mu;
  std::shared_ptr<const Snap> snap;

  template <typename Make>
  std::shared_ptr<const Snap> get(const Eigen::MatrixXd& draws, Make make) {
    const std::uint64_t digest = content_digest(draws);
    std::lock_guard<std::mutex> lock(mu);
    if (!snap || snap->key != digest || snap->count != draws.rows()) {
      auto fresh = std::make_shared<Snap>();
      fresh->key = digest;
      fresh->count = draws.rows();
      make(*fresh, draws);
      snap = fresh;
    }
    return snap;
  }
};

Eigen::MatrixXd chol_lower_or_throw(const Eigen::MatrixXd& a, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error(std::string(what) + ": matrix not positive definite");
  }
  return llt.matrixL();
}

}  // namespace

// ---------------------------------------------------------------------------
// Beta-Bernoulli

Dataset BetaBernoulliFamily::simulate(long n, long positives) {
  if (positives < 0 || positives > n) {
    throw std::invalid_argument("BetaBernoulliFamily::simulate: bad positive count");
  }
  Dataset d;
  d.columns = {"y"};
  d.rows.resize(n, 1);
  for (long i = 0; i < n; ++i) d.rows(i, 0) = i < positives ? 1.0 : 0.0;
  return d;
}

std::pair<long, long> BetaBernoulliFamily::successes_trials(const PartitionedData& pd,
                                                            int part) {
  const Eigen::Index y = pd.data->column("y");
  long s = 0;
  long n = 0;
  const int lo = part < 0 ? 0 : part;
  const int hi = part < 0 ? pd.num_parts() : part + 1;
  for (int j = lo; j < hi; ++j) {
    for (int row : pd.part_rows[j]) {
      s += std::lround(pd.data->rows(row, y));
      ++n;
    }
  }
  return {s, n};
}

BetaParams BetaBernoulliFamily::posterior(const PartitionedData& pd, int part) const {
  const auto [s, n] = successes_trials(pd, part);
  return beta_posterior_params(prior, s, n);
}

namespace {
struct BetaSnap {
  std::uint64_t key = 0;
  Eigen::Index count = 0;
  Eigen::VectorXd log_lam, log_one_minus;
  std::vector<char> ok;
};
}  // namespace

ModelSpec BetaBernoulliFamily::spec(const PartitionedData& pd) const {
  const int m = pd.num_parts();
  std::vector<double> succ(m), trials(m);
  for (int j = 0; j < m; ++j) {
    const auto [s, n] = successes_trials(pd, j);
    succ[j] = static_cast<double>(s);
    trials[j] = static_cast<double>(n);
  }
  const double a = prior.a;
  const double b = prior.b;

  ModelSpec spec;
  spec.parameter_dim = 1;
  spec.num_parts = m;
  spec.prior_family = PriorFamily::beta;
  spec.family_name = "beta_bernoulli";
  spec.log_prior = [a, b](const Eigen::VectorXd& t) {
    // Unnormalised kernel (a-1) log lam + (b-1) log(1-lam); the constant
    // cancels from every weight and normalising-ratio estimate.
    const double lam = t[0];
    if (!(lam > 0.0 && lam < 1.0)) return -kInf;
    return (a - 1.0) * std::log(lam) + (b - 1.0) * std::log1p(-lam);
  };
  spec.log_lik_part = [succ, trials](int j, const Eigen::VectorXd& t) {
    const double lam = t[0];
    if (!(lam > 0.0 && lam < 1.0)) return -kInf;
    return succ[j] * std::log(lam) + (trials[j] - succ[j]) * std::log1p(-lam);
  };
  auto cache = std::make_shared<ChunkCache<BetaSnap>>();
  spec.log_lik_part_batch = [succ, trials, cache](int j, const Eigen::MatrixXd& draws,
                                                  Eigen::Ref<Eigen::VectorXd> out) {
    auto snap = cache->get(draws, [](BetaSnap& s, const Eigen::MatrixXd& dr) {
      const Eigen::Index n = dr.rows();
      s.log_lam.resize(n);
      s.log_one_minus.resize(n);
      s.ok.resize(n);
      for (Eigen::Index k = 0; k < n; ++k) {
        const double lam = dr(k, 0);
        if (lam > 0.0 && lam < 1.0) {
          s.ok[k] = 1;
          s.log_lam[k] = std::log(lam);
          s.log_one_minus[k] = std::log1p(-lam);
        } else {
          s.ok[k] = 0;
          s.log_lam[k] = 0.0;
          s.log_one_minus[k] = 0.0;
        }
      }
    });
    const double sj = succ[j];
    const double fj = trials[j] - succ[j];
    for (Eigen::Index k = 0; k < draws.rows(); ++k) {
      out[k] = snap->ok[k] ? sj * snap->log_lam[k] + fj * snap->log_one_minus[k] : -kInf;
    }
  };
  return spec;
}

// ---------------------------------------------------------------------------
// MVN with known covariance

Dataset MvnKnownSigmaFamily::simulate(long n, const Eigen::VectorXd& mean,
                                      const Eigen::MatrixXd& cov, RngStream& rng) {
  const Eigen::Index d = mean.size();
  const Eigen::MatrixXd chol = chol_lower_or_throw(cov, "MvnKnownSigmaFamily::simulate");
  Dataset out;
  out.columns.resize(d);
  for (Eigen::Index c = 0; c < d; ++c) out.columns[c] = "x" + std::to_string(c + 1);
  out.rows.resize(n, d);
  for (long i = 0; i < n; ++i) {
    out.rows.row(i) = rng.mvn_given_chol(mean, chol).transpose();
  }
  return out;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> MvnKnownSigmaFamily::posterior_moments(
    const PartitionedData& pd, int part) const {
  Eigen::MatrixXd rows = part < 0 ? pd.data->rows : pd.part_matrix(part);
  return mvn_known_sigma_posterior_moments(prior_mean, prior_cov, proper_prior,
                                           sigma, rows);
}

namespace {
struct MvnSnap {
  std::uint64_t key = 0;
  Eigen::Index count = 0;
  Eigen::VectorXd quad;  // mu^T Sigma^-1 mu per draw
};
}  // namespace

ModelSpec MvnKnownSigmaFamily::spec(const PartitionedData& pd) const {
  const int m = pd.num_parts();
  const Eigen::Index d = sigma.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("MvnKnownSigmaFamily: known covariance not PD");
  }
  const Eigen::MatrixXd sigma_inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
  const double logdet =
      2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();

  // Per part: count, Sigma^-1 * sum(x), and the quadratic data term.
  std::vector<double> nj(m), cst(m);
  std::vector<Eigen::VectorXd> shift(m);
  for (int j = 0; j < m; ++j) {
    const Eigen::MatrixXd rows = pd.part_matrix(j);
    nj[j] = static_cast<double>(rows.rows());
    shift[j] = sigma_inv * rows.colwise().sum().transpose();
    double quad_data = 0.0;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      quad_data += rows.row(i) * sigma_inv * rows.row(i).transpose();
    }
    cst[j] = -0.5 * nj[j] * (d * kLogTwoPi + logdet) - 0.5 * quad_data;
  }

  const bool proper = proper_prior;
  Eigen::VectorXd pm = prior_mean;
  Eigen::MatrixXd pchol;
  if (proper) pchol = chol_lower_or_throw(prior_cov, "MvnKnownSigmaFamily prior");

  ModelSpec spec;
  spec.parameter_dim = static_cast<int>(d);
  spec.num_parts = m;
  spec.prior_family = PriorFamily::mvn;
  spec.family_name = "mvn_known_sigma";
  spec.log_prior = [proper, pm, pchol](const Eigen::VectorXd& t) {
    return proper ? mvn_logpdf_chol(t, pm, pchol) : 0.0;
  };
  spec.log_lik_part = [nj, cst, shift, sigma_inv](int j, const Eigen::VectorXd& t) {
    return cst[j] + shift[j].dot(t) - 0.5 * nj[j] * t.dot(sigma_inv * t);
  };
  auto cache = std::make_shared<ChunkCache<MvnSnap>>();
  spec.log_lik_part_batch = [nj, cst, shift, sigma_inv, cache](
                                int j, const Eigen::MatrixXd& draws,
                                Eigen::Ref<Eigen::VectorXd> out) {
    auto snap = cache->get(draws, [&sigma_inv](MvnSnap& s, const Eigen::MatrixXd& dr) {
      s.quad = ((dr * sigma_inv).array() * dr.array()).rowwise().sum();
    });
    out = (cst[j] - 0.5 * nj[j] * snap->quad.array() + (draws * shift[j]).array())
              .matrix();
  };
  return spec;
}

// ---------------------------------------------------------------------------
// MVN with NIW prior

Dataset MvnNiwFamily::simulate(long n, const Eigen::VectorXd& mean,
                               const Eigen::MatrixXd& cov, RngStream& rng) {
  return MvnKnownSigmaFamily::simulate(n, mean, cov, rng);
}

NIWParams MvnNiwFamily::posterior(const PartitionedData& pd, int part) const {
  Eigen::MatrixXd rows = part < 0 ? pd.data->rows : pd.part_matrix(part);
  return niw_posterior_params(prior, rows);
}

namespace {
struct NiwSnap {
  std::uint64_t key = 0;
  Eigen::Index count = 0;
  std::vector<char> ok;       // Sigma part PD
  Eigen::VectorXd logdet;     // log det Sigma
  Eigen::MatrixXd sigma_inv;  // row k: Sigma^-1 flattened (d*d)
  Eigen::MatrixXd sinv_mu;    // row k: Sigma^-1 mu
  Eigen::VectorXd quad;       // mu^T Sigma^-1 mu
};
}  // namespace

ModelSpec MvnNiwFamily::spec(const PartitionedData& pd) const {
  const int m = pd.num_parts();
  const int d = obs_dim();
  std::vector<double> nj(m);
  std::vector<Eigen::VectorXd> sum_x(m);
  std::vector<Eigen::VectorXd> scatter_flat(m);  // sum of x x^T, flattened
  for (int j = 0; j < m; ++j) {
    const Eigen::MatrixXd rows = pd.part_matrix(j);
    nj[j] = static_cast<double>(rows.rows());
    sum_x[j] = rows.colwise().sum().transpose();
    Eigen::MatrixXd s = rows.transpose() * rows;
    scatter_flat[j] = Eigen::Map<Eigen::VectorXd>(s.data(), d * d);
  }
  const NIWParams pr = prior;

  ModelSpec spec;
  spec.parameter_dim = d + d * (d + 1) / 2;
  spec.num_parts = m;
  spec.prior_family = PriorFamily::niw;
  spec.family_name = "mvn_niw";
  spec.log_prior = [pr, d](const Eigen::VectorXd& t) {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    niw_unpack(t, d, mu, sigma);
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) return -kInf;
    const double logdet =
        2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    // Joint NIW kernel |Sigma|^-((nu+d+2)/2) exp(-tr(Psi Sigma^-1)/2) exp(-kappa/2 ...)
    // (the improper kappa=0, Psi=0 setting keeps the same exponent).
    double lp = -0.5 * (pr.nu + d + 2.0) * logdet;
    if (pr.psi.size() > 0 && (pr.psi.array() != 0.0).any()) {
      lp -= 0.5 * llt.solve(pr.psi).trace();
    }
    if (pr.kappa > 0.0) {
      const Eigen::VectorXd diff = mu - pr.mu0;
      lp -= 0.5 * pr.kappa * diff.dot(llt.solve(diff));
    }
    return lp;
  };
  spec.log_lik_part = [nj, sum_x, scatter_flat, d](int j, const Eigen::VectorXd& t) {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    niw_unpack(t, d, mu, sigma);
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) return -kInf;
    const Eigen::MatrixXd sinv = llt.solve(Eigen::MatrixXd::Identity(d, d));
    const double logdet =
        2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    const Eigen::Map<const Eigen::VectorXd> sflat(sinv.data(), d * d);
    return -0.5 * nj[j] * (d * kLogTwoPi + logdet) -
           0.5 * (sflat.dot(scatter_flat[j]) - 2.0 * mu.dot(sinv * sum_x[j]) +
                  nj[j] * mu.dot(sinv * mu));
  };
  auto cache = std::make_shared<ChunkCache<NiwSnap>>();
  spec.log_lik_part_batch = [nj, sum_x, scatter_flat, d, cache](
                                int j, const Eigen::MatrixXd& draws,
                                Eigen::Ref<Eigen::VectorXd> out) {
    auto snap = cache->get(draws, [d](NiwSnap& s, const Eigen::MatrixXd& dr) {
      const Eigen::Index n = dr.rows();
      s.ok.resize(n);
      s.logdet.resize(n);
      s.sigma_inv.resize(n, d * d);
      s.sinv_mu.resize(n, d);
      s.quad.resize(n);
      Eigen::VectorXd mu;
      Eigen::MatrixXd sigma;
      for (Eigen::Index k = 0; k < n; ++k) {
        niw_unpack(dr.row(k), d, mu, sigma);
        Eigen::LLT<Eigen::MatrixXd> llt(sigma);
        if (llt.info() != Eigen::Success) {
          s.ok[k] = 0;
          continue;
        }
        s.ok[k] = 1;
        s.logdet[k] =
            2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
        const Eigen::MatrixXd sinv = llt.solve(Eigen::MatrixXd::Identity(d, d));
        s.sigma_inv.row(k) = Eigen::Map<const Eigen::VectorXd>(sinv.data(), d * d);
        const Eigen::VectorXd sm = sinv * mu;
        s.sinv_mu.row(k) = sm.transpose();
        s.quad[k] = mu.dot(sm);
      }
    });
    for (Eigen::Index k = 0; k < draws.rows(); ++k) {
      if (!snap->ok[k]) {
        out[k] = -kInf;
        continue;
      }
      out[k] = -0.5 * nj[j] * (d * kLogTwoPi + snap->logdet[k]) -
               0.5 * (snap->sigma_inv.row(k).dot(scatter_flat[j]) -
                      2.0 * snap->sinv_mu.row(k).dot(sum_x[j]) +
                      nj[j] * snap->quad[k]);
    }
  };
  return spec;
}

// ---------------------------------------------------------------------------
// Logistic regression

Dataset LogisticFamily::simulate(long n, const Eigen::VectorXd& theta_true,
                                 RngStream& rng) {
  const Eigen::Index p = theta_true.size();
  Dataset out;
  out.columns.resize(p + 2);
  for (Eigen::Index c = 0; c < p; ++c) out.columns[c] = "x" + std::to_string(c + 1);
  out.columns[p] = "trials";
  out.columns[p + 1] = "successes";
  out.rows.resize(n, p + 2);
  for (long i = 0; i < n; ++i) {
    out.rows(i, 0) = 1.0;  // intercept
    for (Eigen::Index c = 1; c < p; ++c) {
      out.rows(i, c) = rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    const double eta = out.rows.row(i).head(p) * theta_true;
    const double prob = 1.0 / (1.0 + std::exp(-eta));
    out.rows(i, p) = 1.0;
    out.rows(i, p + 1) = rng.uniform() < prob ? 1.0 : 0.0;
  }
  return out;
}

void LogisticFamily::grouped_design(const PartitionedData& pd, int part,
                                    Eigen::MatrixXd& X, Eigen::VectorXd& trials,
                                    Eigen::VectorXd& successes) {
  const Eigen::Index cols = pd.data->num_columns();
  const Eigen::Index p = cols - 2;
  std::map<std::vector<double>, std::pair<double, double>> groups;
  const int lo = part < 0 ? 0 : part;
  const int hi = part < 0 ? pd.num_parts() : part + 1;
  for (int j = lo; j < hi; ++j) {
    for (int row : pd.part_rows[j]) {
      std::vector<double> key(p);
      for (Eigen::Index c = 0; c < p; ++c) key[c] = pd.data->rows(row, c);
      auto& acc = groups[key];
      acc.first += pd.data->rows(row, p);
      acc.second += pd.data->rows(row, p + 1);
    }
  }
  const Eigen::Index g = static_cast<Eigen::Index>(groups.size());
  X.resize(g, p);
  trials.resize(g);
  successes.resize(g);
  Eigen::Index r = 0;
  for (const auto& [key, acc] : groups) {
    for (Eigen::Index c = 0; c < p; ++c) X(r, c) = key[c];
    trials[r] = acc.first;
    successes[r] = acc.second;
    ++r;
  }
}

ModelSpec LogisticFamily::spec(const PartitionedData& pd) const {
  const int m = pd.num_parts();
  std::vector<Eigen::MatrixXd> xs(m);
  std::vector<Eigen::VectorXd> cs(m), ys(m);
  for (int j = 0; j < m; ++j) grouped_design(pd, j, xs[j], cs[j], ys[j]);
  const Eigen::VectorXd pm = prior_mean;
  const Eigen::MatrixXd pchol = chol_lower_or_throw(prior_cov, "LogisticFamily prior");

  ModelSpec spec;
  spec.parameter_dim = param_dim();
  spec.num_parts = m;
  spec.prior_family = PriorFamily::mvn_iid;
  spec.family_name = "logistic";
  spec.log_prior = [pm, pchol](const Eigen::VectorXd& t) {
    return mvn_logpdf_chol(t, pm, pchol);
  };
  auto part_loglik = [xs, cs, ys](int j, const Eigen::VectorXd& t) {
    const Eigen::VectorXd eta = xs[j] * t;
    double total = 0.0;
    for (Eigen::Index g = 0; g < eta.size(); ++g) {
      const double e = eta[g];
      const double softplus = e > 0.0 ? e + std::log1p(std::exp(-e))
                                      : std::log1p(std::exp(e));
      total += ys[j][g] * e - cs[j][g] * softplus;
    }
    return total;
  };
  spec.log_lik_part = part_loglik;
  spec.log_lik_part_batch = [xs, cs, ys](int j, const Eigen::MatrixXd& draws,
                                         Eigen::Ref<Eigen::VectorXd> out) {
    const Eigen::MatrixXd eta = draws * xs[j].transpose();  // N x G
    for (Eigen::Index k = 0; k < eta.rows(); ++k) {
      double total = 0.0;
      for (Eigen::Index g = 0; g < eta.cols(); ++g) {
        const double e = eta(k, g);
        const double softplus = e > 0.0 ? e + std::log1p(std::exp(-e))
                                        : std::log1p(std::exp(e));
        total += ys[j][g] * e - cs[j][g] * softplus;
      }
      out[k] = total;
    }
  };
  return spec;
}

}  // namespace lemie
