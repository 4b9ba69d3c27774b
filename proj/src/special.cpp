#include "lemie/special.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lemie {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Continued fraction for the incomplete beta function (modified Lentz).
double beta_cont_frac(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 3e-14) break;
  }
  return h;
}
}  // namespace

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) return -kInf;
  if (v.hasNaN()) throw std::invalid_argument("log_sum_exp: +inf or NaN input");
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) {
    if (m == -kInf) return -kInf;
    throw std::invalid_argument("log_sum_exp: +inf or NaN input");
  }
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

double digamma(double x) {
  if (!(x > 0.0)) throw std::invalid_argument("digamma: requires x > 0");
  double result = 0.0;
  while (x < 12.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  result += std::log(x) - 0.5 * r -
            r2 * (1.0 / 12.0 - r2 * (1.0 / 120.0 - r2 * (1.0 / 252.0 -
                  r2 * (1.0 / 240.0 - r2 * (1.0 / 132.0)))));
  return result;
}

double beta_entropy(double a, double b) {
  return log_beta(a, b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b) +
         (a + b - 2.0) * digamma(a + b);
}

double beta_logpdf(double x, double a, double b) {
  if (x <= 0.0 || x >= 1.0) return -kInf;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta(a, b);
}

double reg_inc_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw std::invalid_argument("reg_inc_beta: requires a > 0 and b > 0");
  }
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(log_front) * beta_cont_frac(a, b, x) / a;
  }
  return 1.0 - std::exp(log_front) * beta_cont_frac(b, a, 1.0 - x) / b;
}

double beta_quantile(double a, double b, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("beta_quantile: p outside [0, 1]");
  }
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (reg_inc_beta(a, b, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLogTwoPi;
}

double mvn_entropy(int dim, double logdet_cov) {
  return 0.5 * (dim * (kLogTwoPi + 1.0) + logdet_cov);
}

double mvn_logpdf_chol(const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::VectorXd& mean,
                       const Eigen::MatrixXd& chol_lower) {
  const Eigen::Index d = x.size();
  const Eigen::VectorXd z =
      chol_lower.triangularView<Eigen::Lower>().solve(x - mean);
  const double half_logdet = chol_lower.diagonal().array().log().sum();
  return -0.5 * z.squaredNorm() - half_logdet - 0.5 * d * kLogTwoPi;
}

double mvt_logpdf_chol(const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::VectorXd& mean,
                       const Eigen::MatrixXd& scale_chol_lower, double df) {
  const double p = static_cast<double>(x.size());
  const Eigen::VectorXd z =
      scale_chol_lower.triangularView<Eigen::Lower>().solve(x - mean);
  const double half_logdet = scale_chol_lower.diagonal().array().log().sum();
  return std::lgamma(0.5 * (df + p)) - std::lgamma(0.5 * df) -
         0.5 * p * std::log(df * 3.14159265358979323846) - half_logdet -
         0.5 * (df + p) * std::log1p(z.squaredNorm() / df);
}

}  // namespace lemie
