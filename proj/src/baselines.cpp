#include "lemie/baselines.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "lemie/laplace.hpp"
#include "lemie/rng.hpp"
#include "lemie/special.hpp"

namespace lemie {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

long common_count(const std::vector<Eigen::MatrixXd>& sets, const char* what) {
  if (sets.empty()) throw std::invalid_argument(std::string(what) + ": no draw sets");
  const Eigen::Index p = sets[0].cols();
  long nbar = sets[0].rows();
  for (const auto& s : sets) {
    if (s.cols() != p) {
      throw std::invalid_argument(std::string(what) + ": dimension mismatch");
    }
    if (s.rows() < 1) throw std::invalid_argument(std::string(what) + ": empty part");
    nbar = std::min<long>(nbar, s.rows());
  }
  return nbar;
}

/// Gaussian log-density from a Cholesky factor, reused across many points.
struct GaussEval {
  Eigen::VectorXd mu;
  Eigen::MatrixXd chol;
  double norm_const = 0.0;

  void set(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    mu = mean;
    Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(sym);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
      Eigen::MatrixXd diag = sym.diagonal().asDiagonal();
      llt.compute(diag);
      if (llt.info() != Eigen::Success) {
        throw std::runtime_error("gaussian evaluator: singular covariance");
      }
    }
    chol = llt.matrixL();
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < chol.rows(); ++i) logdet += std::log(chol(i, i));
    norm_const = -0.5 * static_cast<double>(mu.size()) * kLogTwoPi - logdet;
  }

  double logpdf(const Eigen::VectorXd& x) const {
    Eigen::VectorXd z = x - mu;
    chol.triangularView<Eigen::Lower>().solveInPlace(z);
    return norm_const - 0.5 * z.squaredNorm();
  }
};

}  // namespace

BetaParams fractionate_beta(const BetaParams& prior, int m) {
  if (m < 1) throw std::invalid_argument("fractionate_beta: m must be >= 1");
  BetaParams out;
  out.a = (prior.a - 1.0) / static_cast<double>(m) + 1.0;
  out.b = (prior.b - 1.0) / static_cast<double>(m) + 1.0;
  return out;
}

void fractionate_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                     int m, Eigen::VectorXd& mean_out, Eigen::MatrixXd& cov_out) {
  if (m < 1) throw std::invalid_argument("fractionate_mvn: m must be >= 1");
  mean_out = mean;
  cov_out = static_cast<double>(m) * cov;
}

NIWParams fractionate_niw(const NIWParams& prior, int d, int m) {
  if (m < 1) throw std::invalid_argument("fractionate_niw: m must be >= 1");
  NIWParams out = prior;
  const double md = static_cast<double>(m);
  out.nu = prior.nu / md - (md - 1.0) / md * static_cast<double>(d) - (md - 1.0) / md;
  out.kappa = prior.kappa / md;
  return out;
}

bool check_fractionated_propriety(int d, long n, int m) {
  if (m < 1) return false;
  return (n / m) > 2L * d;
}

ParamDraws cmc_pool(const std::vector<Eigen::MatrixXd>& local_sets,
                    CmcVariant variant, bool* fallback_used) {
  const long nbar = common_count(local_sets, "cmc_pool");
  const Eigen::Index p = local_sets[0].cols();
  const int m = static_cast<int>(local_sets.size());
  if (fallback_used != nullptr) *fallback_used = false;

  ParamDraws out;
  out.source = variant == CmcVariant::cmc1 ? "cmc1" : "cmc2";
  out.draws.resize(nbar, p);

  if (variant == CmcVariant::cmc1) {
    out.draws.setZero();
    for (const auto& s : local_sets) out.draws += s.topRows(nbar);
    out.draws /= static_cast<double>(m);
    return out;
  }

  bool fell_back = false;
  std::vector<Eigen::MatrixXd> precisions(m);
  Eigen::MatrixXd prec_sum = Eigen::MatrixXd::Zero(p, p);
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd mu_j;
    Eigen::MatrixXd sigma_j;
    row_moments(local_sets[j].topRows(nbar), mu_j, sigma_j);
    precisions[j] = robust_precision(sigma_j, fell_back);
    prec_sum += precisions[j];
  }
  if (fallback_used != nullptr) *fallback_used = fell_back;
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (prec_sum + prec_sum.transpose()));
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("cmc_pool: summed precision not positive definite");
  }
  for (long h = 0; h < nbar; ++h) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(p);
    for (int j = 0; j < m; ++j) {
      acc += precisions[j] * local_sets[j].row(h).transpose();
    }
    out.draws.row(h) = llt.solve(acc).transpose();
  }
  return out;
}

namespace {

/// One Metropolis-within-Gibbs run over the per-part draw indices.  The
/// kernel-product weights reduce to exp(-scatter / (2 v)) with scatter the
/// sum of squared distances of the selected draws to their average, so index
/// moves need only an O(p) scatter update.
struct IndexSweeper {
  const std::vector<Eigen::MatrixXd>* sets;
  long nbar = 0;
  std::vector<long> h;
  Eigen::VectorXd s1;     // sum over parts of the selected draw
  double s2 = 0.0;        // sum of squared norms
  double scatter = 0.0;

  void init(const std::vector<Eigen::MatrixXd>& local_sets, long count,
            RngStream& rng) {
    sets = &local_sets;
    nbar = count;
    const Eigen::Index p = local_sets[0].cols();
    h.resize(local_sets.size());
    s1 = Eigen::VectorXd::Zero(p);
    s2 = 0.0;
    for (size_t j = 0; j < local_sets.size(); ++j) {
      h[j] = rng.uniform_int(nbar);
      s1 += local_sets[j].row(h[j]).transpose();
      s2 += local_sets[j].row(h[j]).squaredNorm();
    }
    refresh();
  }

  void refresh() {
    const double m = static_cast<double>(sets->size());
    scatter = s2 - s1.squaredNorm() / m;
    if (scatter < 0.0) scatter = 0.0;  // roundoff guard
  }

  /// Scatter after replacing part j's index with prop, without committing.
  double propose(size_t j, long prop, Eigen::VectorXd& s1_new, double& s2_new) const {
    const double m = static_cast<double>(sets->size());
    const Eigen::VectorXd old_row = (*sets)[j].row(h[j]).transpose();
    const Eigen::VectorXd new_row = (*sets)[j].row(prop).transpose();
    s1_new = s1 - old_row + new_row;
    s2_new = s2 - old_row.squaredNorm() + new_row.squaredNorm();
    const double sc = s2_new - s1_new.squaredNorm() / m;
    return sc < 0.0 ? 0.0 : sc;
  }

  void commit(size_t j, long prop, const Eigen::VectorXd& s1_new, double s2_new) {
    h[j] = prop;
    s1 = s1_new;
    s2 = s2_new;
    refresh();
  }

  Eigen::VectorXd mean() const {
    return s1 / static_cast<double>(sets->size());
  }
};

ParamDraws ndpe_stage(const std::vector<Eigen::MatrixXd>& local_sets, long iters,
                      RngStream& rng, DpeReport& report) {
  const long nbar = common_count(local_sets, "ndpe_sample");
  if (iters <= 0) iters = nbar;
  const Eigen::Index p = local_sets[0].cols();
  const int m = static_cast<int>(local_sets.size());

  IndexSweeper sw;
  sw.init(local_sets, nbar, rng);
  ParamDraws out;
  out.source = "ndpe";
  out.draws.resize(iters, p);
  Eigen::VectorXd s1_new;
  double s2_new;
  for (long i = 1; i <= iters; ++i) {
    const double b = std::pow(static_cast<double>(i),
                              -1.0 / (static_cast<double>(p) + 4.0));
    const double v = b * b;
    for (int j = 0; j < m; ++j) {
      const long prop = rng.uniform_int(nbar);
      const double sc = sw.propose(j, prop, s1_new, s2_new);
      const double log_ratio = -(sc - sw.scatter) / (2.0 * v);
      report.proposals++;
      if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio) {
        sw.commit(j, prop, s1_new, s2_new);
        report.accepted++;
      }
    }
    const Eigen::VectorXd centre = sw.mean();
    for (Eigen::Index c = 0; c < p; ++c) {
      out.draws(i - 1, c) = centre[c] + b * rng.normal();
    }
  }
  return out;
}

ParamDraws sdpe_stage(const std::vector<Eigen::MatrixXd>& local_sets, long iters,
                      double bw_power, RngStream& rng, DpeReport& report) {
  const long nbar = common_count(local_sets, "sdpe_sample");
  if (iters <= 0) iters = nbar;
  const Eigen::Index p = local_sets[0].cols();
  const int m = static_cast<int>(local_sets.size());

  // Per-part fitted normals, their log-densities at every own draw, and the
  // precision-weighted target (mu*, Sigma*).
  std::vector<GaussEval> phi(m);
  Eigen::MatrixXd logphi(m, nbar);
  Eigen::MatrixXd prec_sum = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd prec_mu_sum = Eigen::VectorXd::Zero(p);
  bool fell_back = false;
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd mu_j;
    Eigen::MatrixXd sigma_j;
    row_moments(local_sets[j].topRows(nbar), mu_j, sigma_j);
    phi[j].set(mu_j, sigma_j);
    const Eigen::MatrixXd prec = robust_precision(sigma_j, fell_back);
    prec_sum += prec;
    prec_mu_sum += prec * mu_j;
    for (long k = 0; k < nbar; ++k) {
      logphi(j, k) = phi[j].logpdf(local_sets[j].row(k).transpose());
    }
  }
  Eigen::LLT<Eigen::MatrixXd> star(0.5 * (prec_sum + prec_sum.transpose()));
  if (star.info() != Eigen::Success) {
    throw std::runtime_error("sdpe_sample: summed precision not positive definite");
  }
  GaussEval target;  // N(mu*, Sigma*)
  target.set(star.solve(prec_mu_sum),
             star.solve(Eigen::MatrixXd::Identity(p, p)));

  IndexSweeper sw;
  sw.init(local_sets, nbar, rng);
  double sum_logphi = 0.0;
  for (int j = 0; j < m; ++j) sum_logphi += logphi(j, sw.h[j]);
  double log_target_at_mean = target.logpdf(sw.mean());

  ParamDraws out;
  out.source = "sdpe";
  out.draws.resize(iters, p);
  Eigen::VectorXd s1_new;
  double s2_new;
  for (long i = 1; i <= iters; ++i) {
    const double b = std::pow(static_cast<double>(i),
                              -1.0 / (static_cast<double>(p) + 4.0));
    const double v = std::pow(b, bw_power);
    for (int j = 0; j < m; ++j) {
      const long prop = rng.uniform_int(nbar);
      const double sc = sw.propose(j, prop, s1_new, s2_new);
      const double lt_new =
          target.logpdf(s1_new / static_cast<double>(m));
      const double log_ratio = -(sc - sw.scatter) / (2.0 * v) +
                               (lt_new - log_target_at_mean) -
                               (logphi(j, prop) - logphi(j, sw.h[j]));
      report.proposals++;
      if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio) {
        sum_logphi += logphi(j, prop) - logphi(j, sw.h[j]);
        sw.commit(j, prop, s1_new, s2_new);
        log_target_at_mean = lt_new;
        report.accepted++;
      }
    }
    // Component N(mu(h), Sigma(h)) with precision (M/v) I + (Sigma*)^-1.
    const Eigen::MatrixXd comp_prec =
        (static_cast<double>(m) / v) * Eigen::MatrixXd::Identity(p, p) + prec_sum;
    Eigen::LLT<Eigen::MatrixXd> comp(comp_prec);
    const Eigen::VectorXd rhs =
        (static_cast<double>(m) / v) * sw.mean() + prec_mu_sum;
    const Eigen::VectorXd mu_h = comp.solve(rhs);
    const Eigen::MatrixXd sigma_h = comp.solve(Eigen::MatrixXd::Identity(p, p));
    Eigen::LLT<Eigen::MatrixXd> chol_h(0.5 * (sigma_h + sigma_h.transpose()));
    out.draws.row(i - 1) = rng.mvn_given_chol(mu_h, chol_h.matrixL()).transpose();
  }
  return out;
}

using StageFn = std::function<ParamDraws(const std::vector<Eigen::MatrixXd>&, long,
                                         RngStream&, DpeReport&)>;

ParamDraws run_dpe(const std::vector<Eigen::MatrixXd>& local_sets,
                   const DpeOptions& opts, DpeReport* report, const char* label,
                   const StageFn& stage) {
  DpeReport rep;
  rep.method = label;
  ParamDraws result;
  if (!opts.recursive || local_sets.size() <= 2) {
    RngStream rng(opts.seed, label, 0, 0);
    result = stage(local_sets, opts.iters, rng, rep);
  } else {
    std::vector<Eigen::MatrixXd> level = local_sets;
    int stage_idx = 0;
    while (level.size() > 1) {
      std::vector<Eigen::MatrixXd> next;
      for (size_t at = 0; at < level.size(); at += 2) {
        if (at + 1 == level.size()) {
          next.push_back(level[at]);  // odd part passes through to the next stage
          continue;
        }
        RngStream rng(opts.seed, label, static_cast<std::uint64_t>(stage_idx),
                      static_cast<std::uint64_t>(at / 2));
        next.push_back(
            stage({level[at], level[at + 1]}, opts.iters, rng, rep).draws);
      }
      level = std::move(next);
      stage_idx++;
    }
    rep.stages = stage_idx;
    result.draws = level[0];
    result.source = label;
  }
  if (opts.in_support) {
    for (Eigen::Index r = 0; r < result.draws.rows(); ++r) {
      if (!opts.in_support(result.draws.row(r))) rep.out_of_support++;
    }
  }
  rep.acceptance_rate =
      rep.proposals > 0
          ? static_cast<double>(rep.accepted) / static_cast<double>(rep.proposals)
          : 0.0;
  if (report != nullptr) *report = rep;
  result.seed = opts.seed;
  return result;
}

}  // namespace

ParamDraws ndpe_sample(const std::vector<Eigen::MatrixXd>& local_sets,
                       const DpeOptions& opts, DpeReport* report) {
  return run_dpe(local_sets, opts, report, "ndpe",
                 [](const std::vector<Eigen::MatrixXd>& sets, long iters,
                    RngStream& rng, DpeReport& rep) {
                   return ndpe_stage(sets, iters, rng, rep);
                 });
}

ParamDraws sdpe_sample(const std::vector<Eigen::MatrixXd>& local_sets,
                       const DpeOptions& opts, DpeReport* report) {
  const double power = opts.sdpe_bandwidth_power;
  return run_dpe(local_sets, opts, report, "sdpe",
                 [power](const std::vector<Eigen::MatrixXd>& sets, long iters,
                         RngStream& rng, DpeReport& rep) {
                   return sdpe_stage(sets, iters, power, rng, rep);
                 });
}

Eigen::VectorXd naive_estimate(const Eigen::MatrixXd& pooled, const EstimandFn& f) {
  if (pooled.rows() < 1) throw std::invalid_argument("naive_estimate: no draws");
  if (!f) return pooled.colwise().mean().transpose();
  Eigen::VectorXd acc;
  for (Eigen::Index h = 0; h < pooled.rows(); ++h) {
    const Eigen::VectorXd val = f(pooled.row(h));
    if (acc.size() == 0) acc = Eigen::VectorXd::Zero(val.size());
    acc += val;
  }
  return acc / static_cast<double>(pooled.rows());
}

void write_dpe_report(const DpeReport& report, const std::string& path) {
  nlohmann::json j;
  j["method"] = report.method;
  j["acceptance_rate"] = report.acceptance_rate;
  j["proposals"] = report.proposals;
  j["accepted"] = report.accepted;
  j["out_of_support"] = report.out_of_support;
  j["stages"] = report.stages;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace lemie
