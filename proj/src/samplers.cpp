#include "lemie/samplers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lemie/special.hpp"

namespace lemie {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kPiSq = kPi * kPi;

Eigen::VectorXd column_mean(const Eigen::MatrixXd& m) {
  return m.colwise().mean().transpose();
}

// Centered scatter matrix sum_i (x_i - xbar)(x_i - xbar)^T.
Eigen::MatrixXd scatter(const Eigen::MatrixXd& m, const Eigen::VectorXd& mean) {
  Eigen::MatrixXd centered = m.rowwise() - mean.transpose();
  return centered.transpose() * centered;
}

Eigen::MatrixXd chol_lower_or_throw(const Eigen::MatrixXd& a, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error(std::string(what) + ": matrix not positive definite");
  }
  return llt.matrixL();
}

}  // namespace

ParamDraws sample_beta_posterior(const BetaParams& prior, long successes,
                                 long trials, long N, RngStream& rng) {
  if (successes < 0 || successes > trials) {
    throw std::invalid_argument("sample_beta_posterior: need 0 <= successes <= trials");
  }
  if (N < 1) throw std::invalid_argument("sample_beta_posterior: N must be >= 1");
  const BetaParams post = beta_posterior_params(prior, successes, trials);
  ParamDraws out;
  out.draws.resize(N, 1);
  for (long h = 0; h < N; ++h) out.draws(h, 0) = rng.beta(post.a, post.b);
  return out;
}

BetaParams beta_posterior_params(const BetaParams& prior, long successes, long trials) {
  if (!(prior.a > 0.0) || !(prior.b > 0.0)) {
    throw std::invalid_argument("BetaParams: a and b must be positive");
  }
  return {prior.a + static_cast<double>(successes),
          prior.b + static_cast<double>(trials - successes)};
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> mvn_known_sigma_posterior_moments(
    const Eigen::VectorXd& prior_mu0, const Eigen::MatrixXd& prior_sigma0,
    bool proper_prior, const Eigen::MatrixXd& sigma_known,
    const Eigen::MatrixXd& data_part) {
  const Eigen::Index d = sigma_known.rows();
  Eigen::LLT<Eigen::MatrixXd> sigma_llt(sigma_known);
  if (sigma_llt.info() != Eigen::Success) {
    throw std::runtime_error("mvn_known_sigma: known covariance not positive definite");
  }
  const double n = static_cast<double>(data_part.rows());
  if (!proper_prior) {
    if (n == 0.0) {
      throw std::invalid_argument("mvn_known_sigma: flat prior with no data is improper");
    }
    return {column_mean(data_part), sigma_known / n};
  }
  if (n == 0.0) return {prior_mu0, prior_sigma0};
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd prior_prec =
      Eigen::LLT<Eigen::MatrixXd>(prior_sigma0).solve(id);
  const Eigen::MatrixXd lik_prec = n * sigma_llt.solve(id);
  const Eigen::MatrixXd post_cov =
      Eigen::LLT<Eigen::MatrixXd>(prior_prec + lik_prec).solve(id);
  const Eigen::VectorXd post_mean =
      post_cov * (prior_prec * prior_mu0 + lik_prec * column_mean(data_part));
  return {post_mean, post_cov};
}

ParamDraws sample_mvn_known_sigma_posterior(
    const Eigen::VectorXd& prior_mu0, const Eigen::MatrixXd& prior_sigma0,
    bool proper_prior, const Eigen::MatrixXd& sigma_known,
    const Eigen::MatrixXd& data_part, long N, RngStream& rng) {
  const auto [mean, cov] = mvn_known_sigma_posterior_moments(
      prior_mu0, prior_sigma0, proper_prior, sigma_known, data_part);
  const Eigen::MatrixXd chol = chol_lower_or_throw(cov, "mvn_known_sigma posterior");
  ParamDraws out;
  out.draws.resize(N, mean.size());
  for (long h = 0; h < N; ++h) {
    out.draws.row(h) = rng.mvn_given_chol(mean, chol).transpose();
  }
  return out;
}

NIWParams niw_posterior_params(const NIWParams& prior, const Eigen::MatrixXd& data_part) {
  const double n = static_cast<double>(data_part.rows());
  NIWParams post;
  post.kappa = prior.kappa + n;
  post.nu = prior.nu + n;
  if (n == 0.0) {
    post.mu0 = prior.mu0;
    post.psi = prior.psi;
    return post;
  }
  const Eigen::VectorXd xbar = column_mean(data_part);
  post.mu0 = (prior.kappa * prior.mu0 + n * xbar) / post.kappa;
  const Eigen::VectorXd diff = xbar - prior.mu0;
  post.psi = prior.psi + scatter(data_part, xbar) +
             (prior.kappa * n / post.kappa) * diff * diff.transpose();
  return post;
}

Eigen::MatrixXd wishart_bartlett_lower(int d, double df, RngStream& rng) {
  if (!(df > d - 1)) {
    throw std::invalid_argument("wishart_bartlett_lower: df must exceed d - 1");
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    a(i, i) = std::sqrt(rng.chi_square(df - i));
    for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  return a;
}

Eigen::MatrixXd inverse_wishart_draw(const Eigen::MatrixXd& psi, double df,
                                     RngStream& rng) {
  const int d = static_cast<int>(psi.rows());
  const Eigen::MatrixXd lpsi = chol_lower_or_throw(psi, "inverse_wishart_draw");
  const Eigen::MatrixXd a = wishart_bartlett_lower(d, df, rng);
  // With W = L^-T A A^T L^-1 ~ Wishart(psi^-1, df), the inverse is
  // G^T G for G = A^-1 L^T, both factors triangular.
  const Eigen::MatrixXd g =
      a.triangularView<Eigen::Lower>().solve(lpsi.transpose().eval());
  return g.transpose() * g;
}

namespace {

int vech_dim(int d) { return d * (d + 1) / 2; }

}  // namespace

ParamDraws sample_niw_posterior(const NIWParams& prior,
                                const Eigen::MatrixXd& data_part, long N,
                                RngStream& rng) {
  const int d = static_cast<int>(prior.mu0.size());
  const NIWParams post = niw_posterior_params(prior, data_part);
  if (!(post.nu > d - 1)) {
    throw std::runtime_error(
        "sample_niw_posterior: improper posterior, requires n_part + nu > d - 1 (have n_part + nu = " +
        std::to_string(post.nu) + ", d - 1 = " + std::to_string(d - 1) + ")");
  }
  if (!(post.kappa > 0.0)) {
    throw std::runtime_error("sample_niw_posterior: posterior kappa must be positive");
  }
  ParamDraws out;
  out.draws.resize(N, d + vech_dim(d));
  for (long h = 0; h < N; ++h) {
    const Eigen::MatrixXd sigma = inverse_wishart_draw(post.psi, post.nu, rng);
    const Eigen::MatrixXd chol =
        chol_lower_or_throw(sigma / post.kappa, "sample_niw_posterior mu|Sigma");
    const Eigen::VectorXd mu = rng.mvn_given_chol(post.mu0, chol);
    out.draws.row(h) = niw_pack(mu, sigma).transpose();
  }
  return out;
}

Eigen::VectorXd niw_pack(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
  const int d = static_cast<int>(mu.size());
  Eigen::VectorXd theta(d + vech_dim(d));
  theta.head(d) = mu;
  int k = d;
  for (int c = 0; c < d; ++c) {
    for (int r = c; r < d; ++r) theta[k++] = sigma(r, c);
  }
  return theta;
}

void niw_unpack(const Eigen::Ref<const Eigen::VectorXd>& theta, int d,
                Eigen::VectorXd& mu, Eigen::MatrixXd& sigma) {
  if (theta.size() != d + vech_dim(d)) {
    throw std::invalid_argument("niw_unpack: length mismatch");
  }
  mu = theta.head(d);
  sigma.resize(d, d);
  int k = d;
  for (int c = 0; c < d; ++c) {
    for (int r = c; r < d; ++r) {
      sigma(r, c) = theta[k];
      sigma(c, r) = theta[k];
      ++k;
    }
  }
}

// ---------------------------------------------------------------------------
// Polya-Gamma PG(1, c): alternating-series accept/reject sampler for the
// tilted Jacobi-type distribution J*(1, z) with z = |c|/2, PG(1,c) = J*/4
// (Windle 2013, Algorithm 6; series terms from Polson, Scott & Windle 2013).

namespace {

constexpr double kPgTrunc = 0.63661977236758134308;  // 2/pi, series crossover

double log_normal_cdf(double x) {
  if (x > -30.0) return std::log(0.5 * std::erfc(-x / std::sqrt(2.0)));
  // Asymptotic expansion for the deep lower tail.
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - 0.5 * std::log(2.0 * kPi) - std::log(-x) + std::log(series);
}

// Probability of proposing from the truncated-exponential piece (x > 2/pi)
// rather than the truncated inverse-Gaussian piece.
double pg_exp_piece_prob(double z) {
  const double t = kPgTrunc;
  const double big_k = 0.5 * z * z + 0.125 * kPiSq;
  const double log_a = std::log(4.0) - std::log(kPi) - z;
  const double kt = big_k * t;
  const double w = std::sqrt(0.5 * kPi);
  const double logf1 = log_a + log_normal_cdf(w * (t * z - 1.0)) + std::log(big_k) + kt;
  const double logf2 =
      log_a + 2.0 * z + log_normal_cdf(-w * (t * z + 1.0)) + std::log(big_k) + kt;
  const double m = std::max(logf1, logf2);
  if (m > 600.0) return 0.0;  // inverse-Gaussian piece carries all the mass
  const double q_over_p = std::exp(logf1) + std::exp(logf2);
  return 1.0 / (1.0 + q_over_p);
}

// log a_n(x) of the alternating series.
double pg_log_aterm(int n, double x) {
  const double np = n + 0.5;
  if (x <= kPgTrunc) {
    return std::log(kPi * np) + 1.5 * std::log(kPgTrunc / x) - 2.0 * np * np / x;
  }
  return std::log(kPi * np) - 0.5 * kPiSq * np * np * x;
}

double inverse_gaussian_draw(double mu, RngStream& rng) {
  const double u = rng.normal();
  const double v = u * u;
  double out = mu + 0.5 * mu * (mu * v - std::sqrt(4.0 * mu * v + mu * mu * v * v));
  if (rng.uniform() > mu / (mu + out)) out = mu * mu / out;
  return out;
}

// Gamma(1/2) truncated to (pi/2, inf), used for 1/X proposals below t.
double truncated_gamma_draw(RngStream& rng) {
  const double c = 0.5 * kPi;
  for (;;) {
    const double x = 2.0 * rng.exponential() + c;
    const double g = std::sqrt(0.5 * kPi / x);
    if (rng.uniform() <= g) return x;
  }
}

// Inverse-Gaussian(1/z, 1) conditioned on (0, t) (Windle 2013, Algorithm 4).
double truncated_inverse_gaussian_draw(double z, double t, RngStream& rng) {
  const double mu = 1.0 / z;
  if (mu > t) {
    for (;;) {
      const double x = 1.0 / truncated_gamma_draw(rng);
      if (std::log(rng.uniform()) < -0.5 * z * z * x) return x;
    }
  }
  for (;;) {
    const double x = inverse_gaussian_draw(mu, rng);
    if (x < t) return x;
  }
}

double pg1_draw(double z, double exp_piece_prob, double big_k, RngStream& rng) {
  for (;;) {
    double x;
    if (rng.uniform() < exp_piece_prob) {
      x = kPgTrunc + rng.exponential() / big_k;
    } else {
      x = truncated_inverse_gaussian_draw(z, kPgTrunc, rng);
    }
    double partial = std::exp(pg_log_aterm(0, x));
    const double u = rng.uniform() * partial;
    int n = 0;
    for (;;) {
      ++n;
      const double term = std::exp(pg_log_aterm(n, x));
      if (n % 2 == 1) {
        partial -= term;
        if (u <= partial) return 0.25 * x;
      } else {
        partial += term;
        if (u > partial) break;  // reject, back to the proposal step
      }
    }
  }
}

}  // namespace

double polya_gamma_draw(int b, double c, RngStream& rng) {
  if (b < 1) throw std::invalid_argument("polya_gamma_draw: b must be a positive integer");
  const double z = 0.5 * std::abs(c);
  const double big_k = 0.5 * z * z + 0.125 * kPiSq;
  const double p_exp = pg_exp_piece_prob(z);
  double total = 0.0;
  for (int i = 0; i < b; ++i) total += pg1_draw(z, p_exp, big_k, rng);
  return total;
}

ParamDraws logistic_gibbs(const Eigen::MatrixXd& X, const Eigen::VectorXd& trials,
                          const Eigen::VectorXd& successes,
                          const Eigen::VectorXd& prior_mean,
                          const Eigen::MatrixXd& prior_cov, long iters,
                          long burnin, RngStream& rng,
                          const Eigen::VectorXd* init) {
  const Eigen::Index g = X.rows();
  const Eigen::Index p = X.cols();
  if (trials.size() != g || successes.size() != g) {
    throw std::invalid_argument("logistic_gibbs: row count mismatch");
  }
  for (Eigen::Index i = 0; i < g; ++i) {
    if (successes[i] < 0 || successes[i] > trials[i] || trials[i] < 1) {
      throw std::invalid_argument("logistic_gibbs: need 0 <= successes <= trials");
    }
  }
  if (burnin < 0 || burnin >= iters) {
    throw std::invalid_argument("logistic_gibbs: need 0 <= burnin < iters");
  }
  Eigen::LLT<Eigen::MatrixXd> prior_llt(prior_cov);
  if (prior_llt.info() != Eigen::Success) {
    throw std::runtime_error("logistic_gibbs: prior covariance not positive definite");
  }
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(p, p);
  const Eigen::MatrixXd prior_prec = prior_llt.solve(id);
  const Eigen::VectorXd prior_shift = prior_prec * prior_mean;
  const Eigen::VectorXd kappa = successes - 0.5 * trials;
  const Eigen::VectorXd xtk_base = X.transpose() * kappa + prior_shift;

  Eigen::VectorXd theta = (init != nullptr) ? *init : prior_mean;
  if (theta.size() != p) {
    throw std::invalid_argument("logistic_gibbs: init dimension mismatch");
  }
  Eigen::VectorXd omega(g);
  ParamDraws out;
  out.draws.resize(iters - burnin, p);

  for (long it = 0; it < iters; ++it) {
    const Eigen::VectorXd eta = X * theta;
    for (Eigen::Index i = 0; i < g; ++i) {
      omega[i] = polya_gamma_draw(static_cast<int>(std::lround(trials[i])), eta[i], rng);
    }
    const Eigen::MatrixXd prec =
        X.transpose() * omega.asDiagonal() * X + prior_prec;
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("logistic_gibbs: conditional precision not positive definite");
    }
    const Eigen::VectorXd mean = llt.solve(xtk_base);
    // theta = mean + U^-1 z draws from N(mean, prec^-1).
    theta = mean + llt.matrixU().solve(rng.normal_vector(p));
    if (it >= burnin) out.draws.row(it - burnin) = theta.transpose();
  }
  return out;
}

}  // namespace lemie
