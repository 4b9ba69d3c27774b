#include "lemie/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "lemie/baselines.hpp"
#include "lemie/diagnostics.hpp"
#include "lemie/laplace.hpp"
#include "lemie/mie.hpp"
#include "lemie/models.hpp"
#include "lemie/special.hpp"

#ifndef LEMIE_GIT_DESCRIBE
#define LEMIE_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;

namespace lemie {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::vector<std::string> kKnownMethods = {
    "naive", "vanilla", "mie1",  "mie2",  "mie3", "lemie1", "lemie2",
    "lemie3", "cmc1",   "cmc2",  "ndpe",  "sdpe"};

std::uint64_t fnv64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Worker parallelism degree, from the LEMIE_WORKERS environment variable
/// (default 1).  Safe because every worker owns a named RNG stream whose
/// output does not depend on scheduling order.
int worker_threads() {
  const char* env = std::getenv("LEMIE_WORKERS");
  if (env == nullptr) return 1;
  const int v = std::atoi(env);
  return std::clamp(v, 1, 64);
}

/// Runs fn(j) for j in [0, parts), spread over worker_threads() threads.
/// Each j writes only its own slot, so no synchronisation beyond the work
/// queue is needed; the first exception wins and is rethrown.
template <typename Fn>
void for_each_part(int parts, Fn&& fn) {
  const int threads = std::min(worker_threads(), parts);
  if (threads <= 1) {
    for (int j = 0; j < parts; ++j) fn(j);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int j = next.fetch_add(1); j < parts; j = next.fetch_add(1)) {
        try {
          fn(j);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// value() that tolerates a null/absent object (config sections default to
/// null when a scenario file omits them).
template <typename T>
T jval(const nlohmann::json& j, const char* key, T def) {
  return j.is_object() ? j.value(key, def) : def;
}

Eigen::VectorXd json_vector(const nlohmann::json& j) {
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

Eigen::MatrixXd json_matrix(const nlohmann::json& j) {
  const size_t r = j.size();
  if (r == 0) return {};
  const size_t c = j[0].size();
  Eigen::MatrixXd m(r, c);
  for (size_t i = 0; i < r; ++i) {
    if (j[i].size() != c) throw std::invalid_argument("ragged matrix in config");
    for (size_t k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

/// Entropy of the standard Student-t with nu degrees of freedom.
double student_t_entropy(double nu) {
  return 0.5 * (nu + 1.0) * (digamma(0.5 * (nu + 1.0)) - digamma(0.5 * nu)) +
         0.5 * std::log(nu) + log_beta(0.5 * nu, 0.5);
}

/// Truth posterior summarised for scoring: draws, mean, marginal quantiles,
/// and whatever entropies are available in closed form.
struct TruthBundle {
  Eigen::MatrixXd draws;
  Eigen::VectorXd mean;
  Eigen::VectorXd q025;
  Eigen::VectorXd q975;
  double joint_entropy = kNaN;
  std::vector<double> marginal_entropy;  // per scored coordinate; may be empty
};

/// Model-family adapter: everything run_scenario needs, behind closures.
struct FamilyOps {
  ModelSpec spec;
  PartitionedData pd;
  long n_obs = 0;
  int score_head = 0;  // leading coordinates scored for KL; 0 = all
  std::function<Eigen::MatrixXd(int, long, RngStream&)> local_draws;
  std::function<Eigen::MatrixXd(int, long, RngStream&)> frac_draws;
  std::function<TruthBundle(const ScenarioConfig&)> make_truth;
  std::function<Eigen::MatrixXd(long, RngStream&)> vanilla_draws;
  std::function<bool(const Eigen::RowVectorXd&)> in_support;
  bool frac_ok = true;
  std::string frac_note;
};

void empirical_quantiles(const Eigen::MatrixXd& draws, TruthBundle& t) {
  const Eigen::Index p = draws.cols();
  t.q025.resize(p);
  t.q975.resize(p);
  std::vector<double> col(draws.rows());
  for (Eigen::Index d = 0; d < p; ++d) {
    for (Eigen::Index i = 0; i < draws.rows(); ++i) col[i] = draws(i, d);
    std::sort(col.begin(), col.end());
    const auto at = [&](double prob) {
      const double pos = prob * static_cast<double>(col.size() - 1);
      const size_t lo = static_cast<size_t>(pos);
      const double frac = pos - static_cast<double>(lo);
      return lo + 1 < col.size() ? col[lo] * (1.0 - frac) + col[lo + 1] * frac
                                 : col.back();
    };
    t.q025[d] = at(0.025);
    t.q975[d] = at(0.975);
  }
}

FamilyOps build_beta_ops(const ScenarioConfig& cfg) {
  FamilyOps ops;
  BetaParams prior;
  prior.a = jval(cfg.prior, "a", 1.0);
  prior.b = jval(cfg.prior, "b", 1.0);
  const long positives = jval(cfg.data, "positives", 1L);
  auto ds = std::make_shared<Dataset>(
      BetaBernoulliFamily::simulate(cfg.n, positives));
  const auto strategy = partition_strategy_from_string(cfg.partition);
  const Eigen::Index label =
      strategy == PartitionStrategy::by_label ? ds->column("y") : -1;
  ops.pd = partition_data(ds, cfg.m, strategy, cfg.seed, label);
  BetaBernoulliFamily fam;
  fam.prior = prior;
  ops.spec = fam.spec(ops.pd);
  ops.n_obs = cfg.n;
  ops.local_draws = [prior, pd = ops.pd](int j, long count, RngStream& rng) {
    const auto [s, t] = BetaBernoulliFamily::successes_trials(pd, j);
    return sample_beta_posterior(prior, s, t, count, rng).draws;
  };
  BetaParams fprior;
  if (!cfg.frac_prior.is_null() && !cfg.frac_prior.empty()) {
    fprior.a = cfg.frac_prior.value("a", 1.0);
    fprior.b = cfg.frac_prior.value("b", 1.0);
  } else {
    fprior = fractionate_beta(prior, cfg.m);
  }
  ops.frac_draws = [fprior, pd = ops.pd](int j, long count, RngStream& rng) {
    const auto [s, t] = BetaBernoulliFamily::successes_trials(pd, j);
    return sample_beta_posterior(fprior, s, t, count, rng).draws;
  };
  const BetaParams post = fam.posterior(ops.pd, -1);
  ops.make_truth = [post](const ScenarioConfig& c) {
    TruthBundle t;
    RngStream rng(c.seed, "truth");
    t.draws = sample_beta_posterior(post, 0, 0, c.truth.count, rng).draws;
    t.mean = Eigen::VectorXd::Constant(1, post.a / (post.a + post.b));
    t.joint_entropy = beta_entropy(post.a, post.b);
    t.marginal_entropy = {t.joint_entropy};
    empirical_quantiles(t.draws, t);
    return t;
  };
  ops.vanilla_draws = [post](long count, RngStream& rng) {
    return sample_beta_posterior(post, 0, 0, count, rng).draws;
  };
  ops.in_support = [](const Eigen::RowVectorXd& t) {
    return t[0] > 0.0 && t[0] < 1.0;
  };
  return ops;
}

/// Observation mean/covariance for the MVN families: taken from the config
/// when pinned, otherwise simulated per-scenario (diagonal variances from
/// Gamma(10,1), mean conditionally normal).
void mvn_observation_params(const ScenarioConfig& cfg, Eigen::VectorXd& mean,
                            Eigen::MatrixXd& cov) {
  const int d = cfg.d;
  if (cfg.data.contains("mean") && cfg.data.contains("cov")) {
    mean = json_vector(cfg.data["mean"]);
    cov = json_matrix(cfg.data["cov"]);
    if (mean.size() != d || cov.rows() != d || cov.cols() != d) {
      throw std::invalid_argument("observation mean/cov dimension mismatch");
    }
    return;
  }
  RngStream rng(cfg.seed, "data-params");
  cov = Eigen::MatrixXd::Zero(d, d);
  mean.resize(d);
  for (int i = 0; i < d; ++i) cov(i, i) = rng.gamma(10.0, 1.0);
  for (int i = 0; i < d; ++i) {
    mean[i] = std::sqrt(0.5 * cov(i, i)) * rng.normal();
  }
}

FamilyOps build_mvn_known_ops(const ScenarioConfig& cfg) {
  FamilyOps ops;
  Eigen::VectorXd obs_mean;
  Eigen::MatrixXd obs_cov;
  mvn_observation_params(cfg, obs_mean, obs_cov);
  RngStream data_rng(cfg.seed, "data");
  auto ds = std::make_shared<Dataset>(
      MvnKnownSigmaFamily::simulate(cfg.n, obs_mean, obs_cov, data_rng));
  ops.pd = partition_data(ds, cfg.m,
                          partition_strategy_from_string(cfg.partition),
                          cfg.seed);
  MvnKnownSigmaFamily fam;
  fam.sigma = obs_cov;
  fam.proper_prior = jval(cfg.prior, "proper", false);
  const int d = cfg.d;
  if (fam.proper_prior) {
    fam.prior_mean = cfg.prior.contains("mean") ? json_vector(cfg.prior["mean"])
                                                : Eigen::VectorXd::Zero(d);
    fam.prior_cov = cfg.prior.contains("cov")
                        ? json_matrix(cfg.prior["cov"])
                        : Eigen::MatrixXd::Identity(d, d);
  } else {
    fam.prior_mean = Eigen::VectorXd::Zero(d);
    fam.prior_cov = Eigen::MatrixXd::Zero(d, d);
  }
  ops.spec = fam.spec(ops.pd);
  ops.n_obs = cfg.n;
  ops.local_draws = [fam, pd = ops.pd](int j, long count, RngStream& rng) {
    return sample_mvn_known_sigma_posterior(fam.prior_mean, fam.prior_cov,
                                            fam.proper_prior, fam.sigma,
                                            pd.part_matrix(j), count, rng)
        .draws;
  };
  // A flat prior is a fixed point of fractionation; a proper prior has its
  // covariance scaled by M.
  MvnKnownSigmaFamily ffam = fam;
  if (fam.proper_prior) {
    Eigen::VectorXd fm;
    Eigen::MatrixXd fc;
    fractionate_mvn(fam.prior_mean, fam.prior_cov, cfg.m, fm, fc);
    ffam.prior_mean = fm;
    ffam.prior_cov = fc;
  }
  ops.frac_draws = [ffam, pd = ops.pd](int j, long count, RngStream& rng) {
    return sample_mvn_known_sigma_posterior(ffam.prior_mean, ffam.prior_cov,
                                            ffam.proper_prior, ffam.sigma,
                                            pd.part_matrix(j), count, rng)
        .draws;
  };
  const auto [post_mean, post_cov] = fam.posterior_moments(ops.pd, -1);
  Eigen::LLT<Eigen::MatrixXd> llt(post_cov);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("posterior covariance not positive definite");
  }
  const Eigen::MatrixXd chol = llt.matrixL();
  ops.make_truth = [post_mean, post_cov, chol, d](const ScenarioConfig& c) {
    TruthBundle t;
    RngStream rng(c.seed, "truth");
    t.draws.resize(c.truth.count, d);
    for (long i = 0; i < c.truth.count; ++i) {
      t.draws.row(i) = rng.mvn_given_chol(post_mean, chol).transpose();
    }
    t.mean = post_mean;
    double logdet = 0.0;
    for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(chol(i, i));
    t.joint_entropy = mvn_entropy(d, logdet);
    t.marginal_entropy.resize(d);
    for (int i = 0; i < d; ++i) {
      t.marginal_entropy[i] =
          0.5 * std::log(2.0 * M_PI * M_E * post_cov(i, i));
    }
    empirical_quantiles(t.draws, t);
    return t;
  };
  ops.vanilla_draws = [post_mean, chol](long count, RngStream& rng) {
    Eigen::MatrixXd out(count, post_mean.size());
    for (long i = 0; i < count; ++i) {
      out.row(i) = rng.mvn_given_chol(post_mean, chol).transpose();
    }
    return out;
  };
  ops.in_support = [](const Eigen::RowVectorXd&) { return true; };
  return ops;
}

FamilyOps build_mvn_niw_ops(const ScenarioConfig& cfg) {
  FamilyOps ops;
  Eigen::VectorXd obs_mean;
  Eigen::MatrixXd obs_cov;
  mvn_observation_params(cfg, obs_mean, obs_cov);
  RngStream data_rng(cfg.seed, "data");
  auto ds = std::make_shared<Dataset>(
      MvnNiwFamily::simulate(cfg.n, obs_mean, obs_cov, data_rng));
  ops.pd = partition_data(ds, cfg.m,
                          partition_strategy_from_string(cfg.partition),
                          cfg.seed);
  const int d = cfg.d;
  MvnNiwFamily fam;
  fam.prior.mu0 = cfg.prior.contains("mu0") ? json_vector(cfg.prior["mu0"])
                                            : Eigen::VectorXd::Zero(d);
  fam.prior.kappa = jval(cfg.prior, "kappa", 0.0);
  fam.prior.nu = jval(cfg.prior, "nu", 0.0);
  fam.prior.psi = cfg.prior.contains("psi") ? json_matrix(cfg.prior["psi"])
                                            : Eigen::MatrixXd::Zero(d, d);
  ops.spec = fam.spec(ops.pd);
  ops.n_obs = cfg.n;
  ops.score_head = d;  // KL scored on the mean block of the packed parameter
  ops.local_draws = [fam, pd = ops.pd](int j, long count, RngStream& rng) {
    return sample_niw_posterior(fam.prior, pd.part_matrix(j), count, rng).draws;
  };
  ops.frac_ok = check_fractionated_propriety(d, cfg.n, cfg.m);
  if (!ops.frac_ok) {
    ops.frac_note = "fractionated prior improper: floor(n/M) <= 2d";
  }
  const NIWParams fprior = fractionate_niw(fam.prior, d, cfg.m);
  ops.frac_draws = [fprior, pd = ops.pd](int j, long count, RngStream& rng) {
    return sample_niw_posterior(fprior, pd.part_matrix(j), count, rng).draws;
  };
  const NIWParams post = fam.posterior(ops.pd, -1);
  const Eigen::MatrixXd full = ops.pd.data->rows;
  ops.make_truth = [fam, full, post, d](const ScenarioConfig& c) {
    TruthBundle t;
    RngStream rng(c.seed, "truth");
    t.draws = sample_niw_posterior(fam.prior, full, c.truth.count, rng).draws;
    const Eigen::MatrixXd exp_sigma = post.psi / (post.nu - d - 1.0);
    t.mean = niw_pack(post.mu0, exp_sigma);
    // mu | x is multivariate-t: per-coordinate entropies are closed-form.
    const double df = post.nu - d + 1.0;
    t.marginal_entropy.resize(d);
    for (int i = 0; i < d; ++i) {
      const double scale2 = post.psi(i, i) / (post.kappa * df);
      t.marginal_entropy[i] = student_t_entropy(df) + 0.5 * std::log(scale2);
    }
    empirical_quantiles(t.draws, t);
    return t;
  };
  ops.vanilla_draws = [fam, full](long count, RngStream& rng) {
    return sample_niw_posterior(fam.prior, full, count, rng).draws;
  };
  ops.in_support = [d](const Eigen::RowVectorXd& theta) {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    niw_unpack(theta.transpose(), d, mu, sigma);
    return Eigen::LLT<Eigen::MatrixXd>(sigma).info() == Eigen::Success;
  };
  return ops;
}

FamilyOps build_logistic_ops(const ScenarioConfig& cfg) {
  FamilyOps ops;
  const int d = cfg.d;
  Eigen::VectorXd theta_true;
  if (cfg.data.contains("theta_true")) {
    theta_true = json_vector(cfg.data["theta_true"]);
    if (theta_true.size() != d) {
      throw std::invalid_argument("theta_true dimension mismatch");
    }
  } else {
    RngStream rng(cfg.seed, "data-params");
    theta_true.resize(d);
    for (int i = 0; i < d; ++i) theta_true[i] = 0.5 * rng.normal();
  }
  RngStream data_rng(cfg.seed, "data");
  auto ds = std::make_shared<Dataset>(
      LogisticFamily::simulate(cfg.n, theta_true, data_rng));
  ops.pd = partition_data(ds, cfg.m,
                          partition_strategy_from_string(cfg.partition),
                          cfg.seed);
  LogisticFamily fam;
  fam.prior_mean = Eigen::VectorXd::Zero(d);
  fam.prior_cov =
      jval(cfg.prior, "cov_scale", 100.0) * Eigen::MatrixXd::Identity(d, d);
  ops.spec = fam.spec(ops.pd);
  ops.n_obs = cfg.n;
  ops.local_draws = [fam, pd = ops.pd](int j, long count, RngStream& rng) {
    Eigen::MatrixXd X;
    Eigen::VectorXd trials, successes;
    LogisticFamily::grouped_design(pd, j, X, trials, successes);
    return logistic_gibbs(X, trials, successes, fam.prior_mean, fam.prior_cov,
                          2 * count, count, rng)
        .draws;
  };
  LogisticFamily ffam = fam;
  ffam.prior_cov = fam.prior_cov * static_cast<double>(cfg.m);
  ops.frac_draws = [ffam, pd = ops.pd](int j, long count, RngStream& rng) {
    Eigen::MatrixXd X;
    Eigen::VectorXd trials, successes;
    LogisticFamily::grouped_design(pd, j, X, trials, successes);
    return logistic_gibbs(X, trials, successes, ffam.prior_mean, ffam.prior_cov,
                          2 * count, count, rng)
        .draws;
  };
  ops.make_truth = [fam, pd = ops.pd](const ScenarioConfig& c) {
    TruthBundle t;
    Eigen::MatrixXd X;
    Eigen::VectorXd trials, successes;
    LogisticFamily::grouped_design(pd, -1, X, trials, successes);
    RngStream rng(c.seed, "truth");
    const long local_iters = 2 * c.n_per_worker;
    const long iters =
        static_cast<long>(c.truth.chain_factor * static_cast<double>(local_iters));
    const Eigen::MatrixXd chain =
        logistic_gibbs(X, trials, successes, fam.prior_mean, fam.prior_cov,
                       iters, iters / 2, rng)
            .draws;
    t.mean = chain.colwise().mean().transpose();
    const long stride = std::max<long>(1, chain.rows() / c.truth.count);
    const long kept = chain.rows() / stride;
    t.draws.resize(kept, chain.cols());
    for (long i = 0; i < kept; ++i) t.draws.row(i) = chain.row(i * stride);
    empirical_quantiles(t.draws, t);
    return t;  // no closed-form entropies: estimated from a split later
  };
  ops.vanilla_draws = [fam, pd = ops.pd](long count, RngStream& rng) {
    Eigen::MatrixXd X;
    Eigen::VectorXd trials, successes;
    LogisticFamily::grouped_design(pd, -1, X, trials, successes);
    return logistic_gibbs(X, trials, successes, fam.prior_mean, fam.prior_cov,
                          2 * count, count, rng)
        .draws;
  };
  ops.in_support = [](const Eigen::RowVectorXd&) { return true; };
  return ops;
}

FamilyOps build_family_ops(const ScenarioConfig& cfg) {
  if (cfg.model == "beta_bernoulli") return build_beta_ops(cfg);
  if (cfg.model == "mvn_known_sigma") return build_mvn_known_ops(cfg);
  if (cfg.model == "mvn_niw") return build_mvn_niw_ops(cfg);
  if (cfg.model == "logistic") return build_logistic_ops(cfg);
  throw std::invalid_argument("unknown model: " + cfg.model);
}

WeightedSampleSet uniform_ws(Eigen::MatrixXd draws, const std::string& scheme,
                             std::uint64_t seed) {
  WeightedSampleSet ws;
  const long n = draws.rows();
  ws.draws.draws = std::move(draws);
  ws.draws.source = scheme;
  ws.draws.seed = seed;
  ws.log_weights = Eigen::VectorXd::Zero(n);
  ws.norm_weights = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  ws.scheme = scheme;
  ws.component_q = Eigen::VectorXd::Ones(1);
  ws.log_chat = Eigen::VectorXd::Zero(1);
  ws.origin.assign(n, 0);
  return ws;
}

WeightedSampleSet slice_ws(const WeightedSampleSet& ws, int coord) {
  WeightedSampleSet out;
  out.draws.draws = ws.draws.draws.col(coord);
  out.draws.source = ws.draws.source;
  out.log_weights = ws.log_weights;
  out.norm_weights = ws.norm_weights;
  out.scheme = ws.scheme;
  out.component_q = ws.component_q;
  out.log_chat = ws.log_chat;
  out.origin = ws.origin;
  return out;
}

/// Weighted quantiles for many probabilities with a single sort.
std::vector<double> weighted_quantiles_multi(const Eigen::VectorXd& x,
                                             const Eigen::VectorXd& w,
                                             const std::vector<double>& probs) {
  std::vector<long> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0L);
  std::sort(idx.begin(), idx.end(),
            [&](long a, long b) { return x[a] < x[b]; });
  std::vector<double> out(probs.size());
  double cum = 0.0;
  size_t pi = 0;
  for (long r = 0; r < x.size() && pi < probs.size(); ++r) {
    cum += w[idx[r]];
    while (pi < probs.size() && cum >= probs[pi] - 1e-15) {
      out[pi++] = x[idx[r]];
    }
  }
  while (pi < probs.size()) out[pi++] = x[idx.back()];
  return out;
}

struct KlScore {
  double kl = kNaN;
  double se = kNaN;
  bool infinite = false;
};

/// KL(truth || method) via KDE scoring.  Joint KDE when the scored block is
/// the whole (at most 2-D) parameter and a closed-form entropy exists;
/// otherwise the sum of 1-D marginal KLs, with marginal truth entropies
/// closed-form where known and split-sample estimated where not.
KlScore score_kl(const WeightedSampleSet& ws, const FamilyOps& ops,
                 const TruthBundle& truth, const ScenarioConfig& cfg) {
  const int dim = static_cast<int>(ws.draws.dim());
  const int dims = ops.score_head > 0 ? ops.score_head : dim;
  KlScore out;

  const bool joint = dims == dim && dims <= 2 && std::isfinite(truth.joint_entropy);
  if (joint) {
    const DensityKernel kernel = cfg.kde.kernel == "rect"
                                     ? DensityKernel::rect
                                     : DensityKernel::normal;
    Eigen::VectorXd bw;
    if (!cfg.kde.bandwidth.empty()) {
      if (static_cast<int>(cfg.kde.bandwidth.size()) != dims) {
        throw std::invalid_argument("pinned bandwidth dimension mismatch");
      }
      bw = Eigen::VectorXd::Map(cfg.kde.bandwidth.data(), dims);
    } else {
      bw = silverman_bandwidth(ws);
    }
    const KdeScorer scorer(ws, kernel, bw);
    const CrossEntropyResult ce =
        cross_entropy_values(scorer.log_density_batch(truth.draws.leftCols(dims)));
    out.kl = ce.estimate - truth.joint_entropy;
    out.se = ce.se;
    out.infinite = ce.infinite;
    return out;
  }

  const bool closed = static_cast<int>(truth.marginal_entropy.size()) >= dims;
  const long half = truth.draws.rows() / 2;
  double kl_sum = 0.0;
  double var_sum = 0.0;
  bool inf = false;
  for (int i = 0; i < dims; ++i) {
    const WeightedSampleSet wsi = slice_ws(ws, i);
    double bwi;
    if (!cfg.kde.bandwidth.empty() &&
        static_cast<int>(cfg.kde.bandwidth.size()) >= dims) {
      bwi = cfg.kde.bandwidth[i];
    } else {
      bwi = silverman_bandwidth(wsi)[0];
    }
    Eigen::VectorXd bv(1);
    bv << bwi;
    const KdeScorer scorer(wsi, DensityKernel::rect, bv);

    double h_i;
    Eigen::MatrixXd eval;  // truth draws the method is scored on
    if (closed) {
      h_i = truth.marginal_entropy[i];
      eval = truth.draws.col(i);
    } else {
      // First half fits a truth KDE, second half scores it; the method is
      // scored on the same second half so the entropy estimate cancels in
      // cross-method differences.
      WeightedSampleSet fit = uniform_ws(truth.draws.topRows(half).col(i),
                                         "truth", cfg.seed);
      const double tw = silverman_bandwidth(fit)[0];
      Eigen::VectorXd tb(1);
      tb << tw;
      const KdeScorer tscorer(fit, DensityKernel::rect, tb);
      eval = truth.draws.bottomRows(truth.draws.rows() - half).col(i);
      const CrossEntropyResult hce =
          cross_entropy_values(tscorer.log_density_batch(eval));
      if (hce.infinite) {
        inf = true;
        continue;
      }
      h_i = hce.estimate;
    }
    const CrossEntropyResult ce =
        cross_entropy_values(scorer.log_density_batch(eval));
    if (ce.infinite) {
      inf = true;
      continue;
    }
    kl_sum += ce.estimate - h_i;
    var_sum += ce.se * ce.se;
  }
  out.infinite = inf;
  out.kl = inf ? std::numeric_limits<double>::infinity() : kl_sum;
  out.se = inf ? std::numeric_limits<double>::infinity() : std::sqrt(var_sum);
  return out;
}

double quantile_error(const WeightedSampleSet& ws, const Eigen::VectorXd& truth_q,
                      double prob) {
  const int p = static_cast<int>(ws.draws.dim());
  Eigen::VectorXd err(p);
  for (int d = 0; d < p; ++d) {
    const std::vector<double> q = weighted_quantiles_multi(
        ws.draws.draws.col(d), ws.norm_weights, {prob});
    err[d] = q[0] - truth_q[d];
  }
  return err.norm();
}

void write_density_1d(const WeightedSampleSet& ws, const TruthBundle& truth,
                      const ScenarioConfig& cfg, const std::string& path) {
  const double lo = truth.q025[0] - 4.0 * (truth.q975[0] - truth.q025[0]);
  const double hi = truth.q975[0] + 4.0 * (truth.q975[0] - truth.q025[0]);
  double bw = cfg.kde.bandwidth.empty() ? silverman_bandwidth(ws)[0]
                                        : cfg.kde.bandwidth[0];
  Eigen::VectorXd bv(1);
  bv << bw;
  const KdeScorer scorer(ws, DensityKernel::rect, bv);
  std::ofstream out(path);
  out.precision(17);
  out << "# x density\n";
  const int grid = 200;
  for (int i = 0; i < grid; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / (grid - 1);
    Eigen::RowVectorXd pt(1);
    pt << x;
    const double ld = scorer.log_density(pt);
    out << x << " " << (std::isinf(ld) ? 0.0 : std::exp(ld)) << "\n";
  }
}

void write_contour_2d(const WeightedSampleSet& ws, const TruthBundle& truth,
                      const std::string& path) {
  const Eigen::VectorXd bw = silverman_bandwidth(ws);
  const KdeScorer scorer(ws, DensityKernel::normal, bw);
  std::ofstream out(path);
  out.precision(17);
  out << "# x y density\n";
  const int grid = 40;
  for (int ix = 0; ix < grid; ++ix) {
    for (int iy = 0; iy < grid; ++iy) {
      Eigen::RowVectorXd pt(2);
      const double sx = truth.q975[0] - truth.q025[0];
      const double sy = truth.q975[1] - truth.q025[1];
      pt << truth.q025[0] - sx + 3.0 * sx * ix / (grid - 1),
          truth.q025[1] - sy + 3.0 * sy * iy / (grid - 1);
      const double ld = scorer.log_density(pt);
      out << pt[0] << " " << pt[1] << " "
          << (std::isinf(ld) ? 0.0 : std::exp(ld)) << "\n";
    }
  }
}

void write_qq_1d(const WeightedSampleSet& ws, const TruthBundle& truth,
                 const ScenarioConfig& cfg, const std::string& path) {
  std::vector<double> probs;
  for (int i = 1; i <= 99; ++i) probs.push_back(0.01 * i);
  const std::vector<double> mq = weighted_quantiles_multi(
      ws.draws.draws.col(0), ws.norm_weights, probs);

  const double n_eff = ess(ws);
  double bw = cfg.kde.bandwidth.empty() ? silverman_bandwidth(ws)[0]
                                        : cfg.kde.bandwidth[0];
  Eigen::VectorXd bv(1);
  bv << bw;
  const KdeScorer mscorer(ws, DensityKernel::rect, bv);
  WeightedSampleSet tws = uniform_ws(truth.draws.col(0), "truth", cfg.seed);
  const double tbw = cfg.kde.bandwidth.empty() ? silverman_bandwidth(tws)[0]
                                               : cfg.kde.bandwidth[0];
  Eigen::VectorXd tbv(1);
  tbv << tbw;
  const KdeScorer tscorer(tws, DensityKernel::rect, tbv);
  const std::vector<double> tq = weighted_quantiles_multi(
      tws.draws.draws.col(0), tws.norm_weights, probs);

  std::ofstream out(path);
  out.precision(17);
  out << "# prob truth_q method_q se\n";
  for (size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    Eigen::RowVectorXd mp(1), tp(1);
    mp << mq[i];
    tp << tq[i];
    const double fm = std::exp(mscorer.log_density(mp));
    const double ft = std::exp(tscorer.log_density(tp));
    const double vm = fm > 0.0 ? p * (1.0 - p) / (n_eff * fm * fm)
                               : std::numeric_limits<double>::infinity();
    const double vt =
        ft > 0.0 ? p * (1.0 - p) / (static_cast<double>(tws.draws.count()) * ft * ft)
                 : std::numeric_limits<double>::infinity();
    out << p << " " << tq[i] << " " << mq[i] << " " << std::sqrt(vm + vt)
        << "\n";
  }
}

void append_metric(std::vector<ResultRow>& rows, const ScenarioConfig& cfg,
                   const std::string& method, const std::string& metric,
                   double value, double se, const std::string& note = "") {
  rows.push_back({cfg.scenario, method, cfg.m, metric, value, se, note});
}

std::string csv_num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

ScenarioConfig parse_scenario_config(const nlohmann::json& j) {
  ScenarioConfig cfg;
  cfg.scenario = j.value("scenario", cfg.scenario);
  cfg.model = j.value("model", cfg.model);
  cfg.n = j.value("n", cfg.n);
  cfg.d = j.value("d", cfg.d);
  cfg.m = j.value("m", cfg.m);
  cfg.partition = j.value("partition", cfg.partition);
  if (j.contains("prior")) cfg.prior = j["prior"];
  if (j.contains("data")) cfg.data = j["data"];
  if (j.contains("frac_prior")) cfg.frac_prior = j["frac_prior"];
  cfg.n_per_worker = j.value("n_per_worker", cfg.n_per_worker);
  if (j.contains("laplace")) {
    const auto& l = j["laplace"];
    if (l.contains("types")) cfg.laplace.types = l["types"].get<std::vector<int>>();
    cfg.laplace.count = l.value("count", cfg.laplace.count);
    cfg.laplace.pool_type1 = l.value("pool_type1", cfg.laplace.pool_type1);
  }
  if (j.contains("methods")) cfg.methods = j["methods"].get<std::vector<std::string>>();
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("truth")) {
    const auto& t = j["truth"];
    cfg.truth.kind = t.value("kind", cfg.truth.kind);
    cfg.truth.count = t.value("count", cfg.truth.count);
    cfg.truth.chain_factor = t.value("chain_factor", cfg.truth.chain_factor);
  }
  if (j.contains("kde")) {
    const auto& k = j["kde"];
    cfg.kde.kernel = k.value("kernel", cfg.kde.kernel);
    if (k.contains("bandwidth")) {
      cfg.kde.bandwidth = k["bandwidth"].get<std::vector<double>>();
    }
  }
  cfg.chunk_size = j.value("chunk_size", cfg.chunk_size);
  cfg.sdpe_bandwidth_power = j.value("sdpe_bandwidth_power", cfg.sdpe_bandwidth_power);
  cfg.dpe_recursive = j.value("dpe_recursive", cfg.dpe_recursive);
  cfg.save_weights = j.value("save_weights", cfg.save_weights);
  return cfg;
}

nlohmann::json scenario_config_json(const ScenarioConfig& cfg) {
  nlohmann::json j;
  j["scenario"] = cfg.scenario;
  j["model"] = cfg.model;
  j["n"] = cfg.n;
  j["d"] = cfg.d;
  j["m"] = cfg.m;
  j["partition"] = cfg.partition;
  j["prior"] = cfg.prior;
  j["data"] = cfg.data;
  j["frac_prior"] = cfg.frac_prior;
  j["n_per_worker"] = cfg.n_per_worker;
  j["laplace"] = {{"types", cfg.laplace.types},
                  {"count", cfg.laplace.count},
                  {"pool_type1", cfg.laplace.pool_type1}};
  j["methods"] = cfg.methods;
  j["seed"] = cfg.seed;
  j["truth"] = {{"kind", cfg.truth.kind},
                {"count", cfg.truth.count},
                {"chain_factor", cfg.truth.chain_factor}};
  j["kde"] = {{"kernel", cfg.kde.kernel}, {"bandwidth", cfg.kde.bandwidth}};
  j["chunk_size"] = cfg.chunk_size;
  j["sdpe_bandwidth_power"] = cfg.sdpe_bandwidth_power;
  j["dpe_recursive"] = cfg.dpe_recursive;
  j["save_weights"] = cfg.save_weights;
  return j;
}

double error_2norm(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
  if (estimate.size() != truth.size()) {
    throw std::invalid_argument("error_2norm: length mismatch");
  }
  return (estimate - truth).norm();
}

void write_results_csv(const std::vector<ResultRow>& rows,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "scenario,method,M,metric,value,se,note\n";
  for (const auto& r : rows) {
    out << r.scenario << "," << r.method << "," << r.m << "," << r.metric << ","
        << csv_num(r.value) << "," << csv_num(r.se) << "," << r.note << "\n";
  }
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty results file");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    ResultRow r;
    std::getline(ss, r.scenario, ',');
    std::getline(ss, r.method, ',');
    std::getline(ss, field, ',');
    r.m = std::stoi(field);
    std::getline(ss, r.metric, ',');
    std::getline(ss, field, ',');
    r.value = field == "nan" ? kNaN
              : field == "inf" ? std::numeric_limits<double>::infinity()
              : field == "-inf" ? -std::numeric_limits<double>::infinity()
                                : std::stod(field);
    std::getline(ss, field, ',');
    r.se = field == "nan" ? kNaN
           : field == "inf" ? std::numeric_limits<double>::infinity()
                            : std::stod(field);
    std::getline(ss, r.note);
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

ScenarioResult run_scenario_impl(const ScenarioConfig& cfg,
                                 const std::string& out_dir,
                                 const TruthBundle* shared_truth) {
  if (cfg.model != "beta_bernoulli" && cfg.model != "mvn_known_sigma" &&
      cfg.model != "mvn_niw" && cfg.model != "logistic") {
    throw std::invalid_argument("unknown model: " + cfg.model);
  }
  if (cfg.m < 1 || cfg.n < cfg.m || cfg.n_per_worker < 1) {
    throw std::invalid_argument("invalid scenario sizes");
  }
  for (const auto& m : cfg.methods) {
    if (std::find(kKnownMethods.begin(), kKnownMethods.end(), m) ==
        kKnownMethods.end()) {
      throw std::invalid_argument("unknown method: " + m);
    }
  }
  for (int t : cfg.laplace.types) {
    if (t < 1 || t > 3) throw std::invalid_argument("laplace types must be 1..3");
  }
  fs::create_directories(fs::path(out_dir) / "plots");

  ScenarioResult result;
  nlohmann::json& manifest = result.manifest;
  manifest["scenario"] = cfg.scenario;
  manifest["config"] = scenario_config_json(cfg);
  manifest["config_hash"] = hex64(fnv64(manifest["config"].dump()));
  manifest["git_describe"] = LEMIE_GIT_DESCRIBE;
  manifest["seed"] = cfg.seed;

  if (cfg.methods.empty()) {
    write_results_csv({}, (fs::path(out_dir) / "results.csv").string());
    std::ofstream d((fs::path(out_dir) / "diagnostics.csv").string());
    d << "scenario,method,M,ess,khat,kl,kl_se,err_mean,err_q025,err_q975\n";
    std::ofstream mo((fs::path(out_dir) / "manifest.json").string());
    mo << manifest.dump(2) << "\n";
    return result;
  }

  FamilyOps ops = build_family_ops(cfg);
  const TruthBundle truth = shared_truth ? *shared_truth : ops.make_truth(cfg);
  manifest["truth"] = {{"kind", cfg.truth.kind},
                       {"count", truth.draws.rows()},
                       {"mean", vector_json(truth.mean)}};

  const auto needs = [&](std::initializer_list<const char*> names) {
    for (const char* n : names) {
      if (std::find(cfg.methods.begin(), cfg.methods.end(), n) !=
          cfg.methods.end()) {
        return true;
      }
    }
    return false;
  };
  const bool need_fed =
      needs({"naive", "mie1", "mie2", "mie3", "lemie1", "lemie2", "lemie3"});
  const bool need_mie = needs({"mie1", "mie2", "mie3"});
  const bool need_lemie = needs({"lemie1", "lemie2", "lemie3"});
  const bool need_frac = needs({"cmc1", "cmc2", "ndpe", "sdpe"});

  FederatedRun run;
  FederatedRun lemie_run;
  MixtureView view;
  MixtureView lemie_view;
  const std::vector<ProtocolMessage>* transcript = nullptr;
  if (need_fed) {
    std::vector<ParamDraws> worker_draws(ops.pd.num_parts());
    for_each_part(ops.pd.num_parts(), [&](int j) {
      RngStream rng(cfg.seed, "worker", static_cast<std::uint64_t>(j));
      worker_draws[j].draws = ops.local_draws(j, cfg.n_per_worker, rng);
      worker_draws[j].source = "part-" + std::to_string(j);
      worker_draws[j].seed = cfg.seed;
    });
    run = run_in_out_in(worker_draws, ops.spec, cfg.chunk_size);
    transcript = &run.transcript;
    if (need_mie || needs({"naive"})) view = build_mixture_view(run, ops.spec);
    if (need_lemie) {
      EnrichmentOptions eo;
      eo.types = cfg.laplace.types;
      eo.draws_per_type = cfg.laplace.count;
      eo.pool_type1 = cfg.laplace.pool_type1;
      eo.chunk_size = cfg.chunk_size;
      if (need_mie || needs({"naive"})) {
        lemie_run = run;  // keep the plain run intact for the mie variants
        lemie_view = enrich_with_laplace(lemie_run, ops.spec, eo, cfg.seed);
        transcript = &lemie_run.transcript;
      } else {
        lemie_view = enrich_with_laplace(run, ops.spec, eo, cfg.seed);
        transcript = &run.transcript;
      }
    }
  }

  std::vector<Eigen::MatrixXd> frac_sets;
  std::string frac_error;
  if (need_frac) {
    if (!ops.frac_ok) {
      frac_error = ops.frac_note;
    } else {
      frac_sets.resize(ops.pd.num_parts());
      try {
        // With one part fractionation is the identity, so the "fractionated
        // worker" is the standard worker: reuse its stream and the consensus
        // methods reproduce the single-node draws exactly.
        const std::string frac_label = cfg.m == 1 ? "worker" : "frac-worker";
        for_each_part(ops.pd.num_parts(), [&](int j) {
          RngStream rng(cfg.seed, frac_label, static_cast<std::uint64_t>(j));
          frac_sets[j] = ops.frac_draws(j, cfg.n_per_worker, rng);
        });
      } catch (const std::exception& e) {
        frac_error = e.what();
        frac_sets.clear();
      }
    }
  }

  nlohmann::json failed = nlohmann::json::array();
  nlohmann::json dpe_reports = nlohmann::json::object();
  std::ofstream diag((fs::path(out_dir) / "diagnostics.csv").string());
  diag << "scenario,method,M,ess,khat,kl,kl_se,err_mean,err_q025,err_q975\n";
  diag.precision(17);

  for (const std::string& method : cfg.methods) {
    WeightedSampleSet ws;
    Eigen::VectorXd estimate;
    std::string note;
    try {
      if ((method == "cmc1" || method == "cmc2" || method == "ndpe" ||
           method == "sdpe") &&
          !frac_error.empty()) {
        throw std::runtime_error(frac_error);
      }
      if (method == "naive") {
        ws = uniform_ws(run.pooled.draws, "naive", cfg.seed);
        estimate = naive_estimate(ws.draws.draws);
      } else if (method == "vanilla") {
        RngStream rng(cfg.seed, "vanilla");
        ws = uniform_ws(ops.vanilla_draws(cfg.n_per_worker, rng), "vanilla",
                        cfg.seed);
        estimate = naive_estimate(ws.draws.draws);
      } else if (method == "mie1" || method == "lemie1") {
        const MieResult r =
            mie1_estimate(method == "mie1" ? view : lemie_view);
        ws = r.ws;
        estimate = r.estimate;
      } else if (method == "mie2" || method == "lemie2") {
        const MieResult r =
            mie2_estimate(method == "mie2" ? view : lemie_view);
        ws = r.ws;
        estimate = r.estimate;
      } else if (method == "mie3" || method == "lemie3") {
        const MieResult r =
            mie3_estimate(method == "mie3" ? view : lemie_view, cfg.seed);
        ws = r.ws;
        estimate = r.estimate;
      } else if (method == "cmc1" || method == "cmc2") {
        const ParamDraws pooled =
            cmc_pool(frac_sets,
                     method == "cmc1" ? CmcVariant::cmc1 : CmcVariant::cmc2);
        ws = uniform_ws(pooled.draws, method, cfg.seed);
        estimate = naive_estimate(ws.draws.draws);
      } else if (method == "ndpe" || method == "sdpe") {
        DpeOptions opts;
        opts.seed = cfg.seed;
        opts.recursive = cfg.dpe_recursive;
        opts.sdpe_bandwidth_power = cfg.sdpe_bandwidth_power;
        opts.in_support = ops.in_support;
        DpeReport rep;
        const ParamDraws pooled = method == "ndpe"
                                      ? ndpe_sample(frac_sets, opts, &rep)
                                      : sdpe_sample(frac_sets, opts, &rep);
        ws = uniform_ws(pooled.draws, method, cfg.seed);
        estimate = naive_estimate(ws.draws.draws);
        nlohmann::json jr;
        jr["method"] = rep.method;
        jr["acceptance_rate"] = rep.acceptance_rate;
        jr["proposals"] = rep.proposals;
        jr["accepted"] = rep.accepted;
        jr["out_of_support"] = rep.out_of_support;
        jr["stages"] = rep.stages;
        dpe_reports[method] = jr;
      } else {
        throw std::logic_error("unhandled method " + method);
      }
    } catch (const std::exception& e) {
      append_metric(result.rows, cfg, method, "failed", kNaN, kNaN, e.what());
      failed.push_back({{"method", method}, {"note", e.what()}});
      result.any_failed = true;
      continue;
    }

    try {
      const double em = error_2norm(estimate, truth.mean);
      const double eq025 = quantile_error(ws, truth.q025, 0.025);
      const double eq975 = quantile_error(ws, truth.q975, 0.975);
      const KlScore kl = score_kl(ws, ops, truth, cfg);
      const double es = ess(ws);
      const GpdFit gpd = fit_gpd_khat(ws.log_weights);

      append_metric(result.rows, cfg, method, "err_mean", em, 0.0);
      append_metric(result.rows, cfg, method, "err_q025", eq025, 0.0);
      append_metric(result.rows, cfg, method, "err_q975", eq975, 0.0);
      append_metric(result.rows, cfg, method, "kl", kl.kl, kl.se,
                    kl.infinite ? "zero-density-at-truth" : "");
      append_metric(result.rows, cfg, method, "ess", es, 0.0);
      append_metric(result.rows, cfg, method, "khat", gpd.khat, 0.0,
                    gpd.fitted ? "" : "gpd-no-fit");
      diag << cfg.scenario << "," << method << "," << cfg.m << ","
           << csv_num(es) << "," << csv_num(gpd.khat) << "," << csv_num(kl.kl)
           << "," << csv_num(kl.se) << "," << csv_num(em) << ","
           << csv_num(eq025) << "," << csv_num(eq975) << "\n";

      const fs::path plots = fs::path(out_dir) / "plots";
      if (ws.draws.dim() == 1) {
        write_density_1d(ws, truth, cfg, (plots / ("density_" + method + ".txt")).string());
        write_qq_1d(ws, truth, cfg, (plots / ("qq_" + method + ".txt")).string());
      } else if (ws.draws.dim() == 2) {
        write_contour_2d(ws, truth, (plots / ("contour_" + method + ".txt")).string());
      }
      if (cfg.save_weights) {
        const fs::path base = fs::path(out_dir) / ("weights_" + method);
        write_weighted_set(ws, base.string() + ".csv", base.string() + ".json");
      }
    } catch (const std::exception& e) {
      append_metric(result.rows, cfg, method, "failed", kNaN, kNaN,
                    std::string("scoring: ") + e.what());
      failed.push_back({{"method", method},
                        {"note", std::string("scoring: ") + e.what()}});
      result.any_failed = true;
    }
  }

  // Truth reference plots alongside the methods.
  {
    WeightedSampleSet tws = uniform_ws(truth.draws, "truth", cfg.seed);
    const fs::path plots = fs::path(out_dir) / "plots";
    if (truth.draws.cols() == 1) {
      write_density_1d(tws, truth, cfg, (plots / "density_truth.txt").string());
    } else if (truth.draws.cols() == 2) {
      write_contour_2d(tws, truth, (plots / "contour_truth.txt").string());
    }
  }

  if (transcript != nullptr) {
    write_transcript_jsonl(*transcript,
                           (fs::path(out_dir) / "transcript.jsonl").string());
    manifest["communication"] = {
        {"messages", transcript->size()},
        {"total_bytes", transcript_total_bytes(*transcript)},
        {"rounds", need_lemie ? 2 : 1},
        {"pooled_draws", run.total_draws()}};
  }
  manifest["failed"] = failed;
  if (!dpe_reports.empty()) manifest["dpe_reports"] = dpe_reports;

  write_results_csv(result.rows, (fs::path(out_dir) / "results.csv").string());
  std::ofstream mo((fs::path(out_dir) / "manifest.json").string());
  mo << manifest.dump(2) << "\n";
  return result;
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& cfg, const std::string& out_dir) {
  return run_scenario_impl(cfg, out_dir, nullptr);
}

ScenarioResult run_sweep(const ScenarioConfig& base, const std::string& field,
                         const std::vector<long>& values,
                         const std::string& out_dir) {
  if (field != "m" && field != "n_per_worker") {
    throw std::invalid_argument("sweep field must be m or n_per_worker");
  }
  if (values.empty()) throw std::invalid_argument("sweep needs grid values");
  fs::create_directories(out_dir);

  ScenarioResult combined;
  combined.manifest["scenario"] = base.scenario;
  combined.manifest["sweep_field"] = field;
  combined.manifest["sweep_values"] = values;
  combined.manifest["git_describe"] = LEMIE_GIT_DESCRIBE;
  nlohmann::json runs = nlohmann::json::array();

  // The truth does not depend on the partition count, so compute it once
  // when sweeping over M (the expensive case is the logistic reference
  // chain).  Sweeping draw counts changes the reference chain length, so
  // each run builds its own truth there.
  std::unique_ptr<TruthBundle> shared;
  if (field == "m") {
    ScenarioConfig probe = base;
    probe.m = static_cast<int>(values.front());
    FamilyOps ops = build_family_ops(probe);
    shared = std::make_unique<TruthBundle>(ops.make_truth(probe));
  }

  for (long v : values) {
    ScenarioConfig cfg = base;
    if (field == "m") {
      cfg.m = static_cast<int>(v);
    } else {
      cfg.n_per_worker = v;
    }
    const std::string sub =
        (fs::path(out_dir) / (field + std::to_string(v))).string();
    const ScenarioResult r = run_scenario_impl(cfg, sub, shared.get());
    combined.any_failed = combined.any_failed || r.any_failed;
    combined.rows.insert(combined.rows.end(), r.rows.begin(), r.rows.end());
    runs.push_back({{"value", v}, {"dir", sub}});
  }
  combined.manifest["runs"] = runs;

  write_results_csv(combined.rows, (fs::path(out_dir) / "results.csv").string());
  std::ofstream mo((fs::path(out_dir) / "manifest.json").string());
  mo << combined.manifest.dump(2) << "\n";

  // Per-metric curves: M (or N) against value and se, one file per
  // (metric, method).
  std::map<std::pair<std::string, std::string>, std::vector<const ResultRow*>>
      series;
  for (const auto& r : combined.rows) {
    if (r.metric == "failed") continue;
    series[{r.metric, r.method}].push_back(&r);
  }
  fs::create_directories(fs::path(out_dir) / "curves");
  for (auto& [key, rows] : series) {
    std::ofstream cf((fs::path(out_dir) / "curves" /
                      ("curve_" + key.first + "_" + key.second + ".txt"))
                         .string());
    cf.precision(17);
    cf << "# " << field << " value se\n";
    for (const ResultRow* r : rows) {
      cf << r->m << " " << csv_num(r->value) << " " << csv_num(r->se) << "\n";
    }
  }
  return combined;
}

void write_truth(const ScenarioConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  FamilyOps ops = build_family_ops(cfg);
  const TruthBundle truth = ops.make_truth(cfg);
  ParamDraws d;
  d.draws = truth.draws;
  d.source = "truth";
  d.seed = cfg.seed;
  DrawSetMeta meta;
  meta.model = cfg.model;
  meta.part_id = -1;
  write_draws_csv(d, meta, (fs::path(out_dir) / "truth_draws.csv").string(),
                  (fs::path(out_dir) / "truth_draws.json").string());
  nlohmann::json j;
  j["scenario"] = cfg.scenario;
  j["model"] = cfg.model;
  j["mean"] = vector_json(truth.mean);
  j["q025"] = vector_json(truth.q025);
  j["q975"] = vector_json(truth.q975);
  if (std::isfinite(truth.joint_entropy)) j["entropy"] = truth.joint_entropy;
  std::ofstream out((fs::path(out_dir) / "truth.json").string());
  out << j.dump(2) << "\n";
}

}  // namespace lemie
