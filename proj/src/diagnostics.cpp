#include "lemie/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lemie/special.hpp"

namespace lemie {

double ess(const WeightedSampleSet& ws) {
  const double s = ws.norm_weights.squaredNorm();
  if (!(s > 0.0)) throw std::invalid_argument("ess: weights are all zero");
  return 1.0 / s;
}

GpdFit fit_gpd_khat(const Eigen::VectorXd& log_weights, long tail_count,
                    int grid) {
  const long n = log_weights.size();
  if (n < 25) throw std::invalid_argument("fit_gpd_khat: need at least 25 weights");
  if (grid < 2) throw std::invalid_argument("fit_gpd_khat: grid too small");
  if (log_weights.hasNaN()) {
    throw std::invalid_argument("fit_gpd_khat: log weights contain NaN");
  }
  if (tail_count <= 0) {
    tail_count = static_cast<long>(std::ceil(
        std::min(0.2 * static_cast<double>(n),
                 3.0 * std::sqrt(static_cast<double>(n)))));
  }
  tail_count = std::min(tail_count, n - 1);

  const double lw_max = log_weights.maxCoeff();
  std::vector<double> w(n);
  for (long i = 0; i < n; ++i) w[i] = std::exp(log_weights[i] - lw_max);
  std::sort(w.begin(), w.end());

  const double cut = w[n - tail_count - 1];
  GpdFit fit;
  fit.threshold = std::log(cut) + lw_max;

  std::vector<double> y;
  y.reserve(tail_count);
  for (long i = n - tail_count; i < n; ++i) {
    const double e = w[i] - cut;
    if (e > 0.0) y.push_back(e);
  }
  fit.tail_count = static_cast<long>(y.size());
  if (fit.tail_count < 5) return fit;  // degenerate tail, khat stays NaN

  // Zhang-Stephens profile-likelihood quadrature in theta = -xi / sigma.
  const long k = fit.tail_count;
  const double y_max = y.back();
  const double y_quart = y[static_cast<size_t>(
      std::max(0.0, std::floor(static_cast<double>(k) / 4.0 + 0.5) - 1.0))];
  const double kd = static_cast<double>(k);

  const double y_mean = Eigen::VectorXd::Map(y.data(), k).mean();
  Eigen::VectorXd theta(grid);
  Eigen::VectorXd loglik(grid);
  for (int j = 0; j < grid; ++j) {
    const double jj = static_cast<double>(j) + 0.5;
    theta[j] = 1.0 / y_max +
               (1.0 - std::sqrt(static_cast<double>(grid) / jj)) / (3.0 * y_quart);
    double xi = 0.0;
    for (double v : y) xi += std::log1p(-theta[j] * v);
    xi /= kd;
    // theta -> 0 is the exponential limit of the profile likelihood.
    loglik[j] = xi != 0.0 ? kd * (std::log(-theta[j] / xi) - xi - 1.0)
                          : kd * (-std::log(y_mean) - 1.0);
  }
  const double lmax = loglik.maxCoeff();
  const Eigen::ArrayXd wq = (loglik.array() - lmax).exp();
  const double theta_hat = (wq * theta.array()).sum() / wq.sum();

  double xi_hat = 0.0;
  for (double v : y) xi_hat += std::log1p(-theta_hat * v);
  xi_hat /= kd;
  fit.khat = xi_hat;
  fit.sigma_hat = std::abs(theta_hat) > 1e-300 ? -xi_hat / theta_hat : y_mean;
  fit.fitted = true;
  return fit;
}

DiagnosticsReport diagnose_weights(const WeightedSampleSet& ws) {
  DiagnosticsReport rep;
  rep.scheme = ws.scheme;
  rep.ess = ess(ws);
  const GpdFit fit = fit_gpd_khat(ws.log_weights);
  rep.khat = fit.khat;
  if (!fit.fitted) {
    rep.flags.push_back("gpd-no-fit");
  } else {
    if (fit.khat > 0.7) rep.flags.push_back("khat>0.7");
    if (fit.khat > 0.5) rep.flags.push_back("khat>0.5");
  }
  return rep;
}

CrossEntropyResult cross_entropy_values(const Eigen::VectorXd& log_q) {
  const long n = log_q.size();
  if (n < 2) throw std::invalid_argument("cross_entropy: need at least 2 draws");
  CrossEntropyResult out;
  for (long i = 0; i < n; ++i) {
    if (std::isnan(log_q[i])) {
      throw std::runtime_error("cross_entropy: density evaluated to NaN");
    }
    if (std::isinf(log_q[i]) && log_q[i] < 0.0) out.infinite = true;
  }
  if (out.infinite) {
    out.estimate = std::numeric_limits<double>::infinity();
    out.se = std::numeric_limits<double>::infinity();
    return out;
  }
  const Eigen::ArrayXd neg = -log_q.array();
  out.estimate = neg.mean();
  const double var = (neg - out.estimate).square().sum() / static_cast<double>(n - 1);
  out.se = std::sqrt(var / static_cast<double>(n));
  return out;
}

CrossEntropyResult cross_entropy(const Eigen::MatrixXd& truth_draws,
                                 const LogDensityFn& log_density) {
  if (!log_density) throw std::invalid_argument("cross_entropy: empty density");
  Eigen::VectorXd log_q(truth_draws.rows());
  for (Eigen::Index i = 0; i < truth_draws.rows(); ++i) {
    log_q[i] = log_density(truth_draws.row(i));
  }
  return cross_entropy_values(log_q);
}

double kl_divergence(const Eigen::MatrixXd& truth_draws,
                     const LogDensityFn& log_density, double entropy_of_truth,
                     double* se, bool* infinite) {
  const CrossEntropyResult ce = cross_entropy(truth_draws, log_density);
  if (se != nullptr) *se = ce.se;
  if (infinite != nullptr) *infinite = ce.infinite;
  return ce.estimate - entropy_of_truth;
}

Eigen::VectorXd silverman_bandwidth(const WeightedSampleSet& ws) {
  const Eigen::Index p = ws.draws.dim();
  const double n_eff = ess(ws);
  Eigen::VectorXd out(p);
  for (Eigen::Index d = 0; d < p; ++d) {
    const Eigen::ArrayXd x = ws.draws.draws.col(d).array();
    const Eigen::ArrayXd wgt = ws.norm_weights.array();
    const double mean = (wgt * x).sum();
    const double var = (wgt * (x - mean).square()).sum();
    const double sd = std::sqrt(std::max(var, 0.0));
    const double iqr = weighted_quantile(ws, static_cast<int>(d), 0.75) -
                       weighted_quantile(ws, static_cast<int>(d), 0.25);
    double a = sd;
    if (iqr > 0.0) a = std::min(a, iqr / 1.34);
    if (!(a > 0.0)) a = std::max(sd, iqr / 1.34);
    out[d] = std::max(0.9 * a * std::pow(n_eff, -0.2), 1e-12);
  }
  return out;
}

KdeScorer::KdeScorer(const WeightedSampleSet& ws, DensityKernel kernel,
                     Eigen::VectorXd bandwidth)
    : draws_(ws.draws.draws),
      kernel_(kernel),
      bandwidth_(std::move(bandwidth)) {
  if (bandwidth_.size() != draws_.cols()) {
    throw std::invalid_argument("kde scorer: bandwidth dimension mismatch");
  }
  if (bandwidth_.minCoeff() <= 0.0) {
    throw std::invalid_argument("kde scorer: bandwidth must be positive");
  }
  log_norm_weights_.resize(ws.norm_weights.size());
  for (Eigen::Index i = 0; i < ws.norm_weights.size(); ++i) {
    log_norm_weights_[i] = ws.norm_weights[i] > 0.0
                               ? std::log(ws.norm_weights[i])
                               : -std::numeric_limits<double>::infinity();
  }
  if (kernel_ == DensityKernel::rect && draws_.cols() == 1) {
    fast_1d_ = true;
    const long n = draws_.rows();
    std::vector<std::pair<double, double>> xs(n);
    for (long i = 0; i < n; ++i) xs[i] = {draws_(i, 0), ws.norm_weights[i]};
    std::sort(xs.begin(), xs.end());
    sorted_x_.resize(n);
    cum_w_.resize(n + 1);
    cum_w_[0] = 0.0;
    for (long i = 0; i < n; ++i) {
      sorted_x_[i] = xs[i].first;
      cum_w_[i + 1] = cum_w_[i] + xs[i].second;
    }
  }
}

double KdeScorer::rect_1d(double x) const {
  const double half = 0.5 * bandwidth_[0];
  const auto lo = std::lower_bound(sorted_x_.begin(), sorted_x_.end(), x - half);
  const auto hi = std::upper_bound(sorted_x_.begin(), sorted_x_.end(), x + half);
  const double mass = cum_w_[hi - sorted_x_.begin()] - cum_w_[lo - sorted_x_.begin()];
  return mass > 0.0 ? std::log(mass) - std::log(bandwidth_[0])
                    : -std::numeric_limits<double>::infinity();
}

double KdeScorer::log_density(const Eigen::RowVectorXd& point) const {
  if (point.size() != draws_.cols()) {
    throw std::invalid_argument("kde scorer: point dimension mismatch");
  }
  if (fast_1d_) return rect_1d(point[0]);
  const Eigen::Index p = draws_.cols();
  if (kernel_ == DensityKernel::rect) {
    double log_vol = 0.0;
    for (Eigen::Index d = 0; d < p; ++d) log_vol += std::log(bandwidth_[d]);
    double mass = 0.0;
    for (Eigen::Index h = 0; h < draws_.rows(); ++h) {
      bool inside = true;
      for (Eigen::Index d = 0; d < p; ++d) {
        if (std::abs(draws_(h, d) - point[d]) > 0.5 * bandwidth_[d]) {
          inside = false;
          break;
        }
      }
      if (inside) mass += std::exp(log_norm_weights_[h]);
    }
    return mass > 0.0 ? std::log(mass) - log_vol
                      : -std::numeric_limits<double>::infinity();
  }
  double log_norm = 0.0;
  for (Eigen::Index d = 0; d < p; ++d) {
    log_norm -= std::log(bandwidth_[d]) + 0.5 * std::log(2.0 * M_PI);
  }
  Eigen::VectorXd terms =
      ((draws_.rowwise() - point).array().rowwise() /
       bandwidth_.transpose().array())
          .square()
          .rowwise()
          .sum();
  terms = log_norm_weights_ + log_norm * Eigen::VectorXd::Ones(terms.size()) -
          0.5 * terms;
  return log_sum_exp(terms);
}

Eigen::VectorXd KdeScorer::log_density_batch(const Eigen::MatrixXd& points) const {
  Eigen::VectorXd out(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out[i] = log_density(points.row(i));
  }
  return out;
}

LogDensityFn KdeScorer::fn() const {
  // Captures a copy so the returned function outlives the scorer.
  return [scorer = *this](const Eigen::RowVectorXd& point) {
    return scorer.log_density(point);
  };
}

}  // namespace lemie
