#include <doctest.h>

#include <cmath>

#include "lemie/rng.hpp"
#include "lemie/samplers.hpp"

using namespace lemie;

TEST_CASE("beta posterior parameters and draws") {
  BetaParams prior{1.0, 1.0};
  const auto post = beta_posterior_params(prior, 1, 1000);
  CHECK(post.a == doctest::Approx(2.0));
  CHECK(post.b == doctest::Approx(1000.0));

  RngStream rng(101, "beta-post");
  const auto draws = sample_beta_posterior(prior, 1, 1000, 100000, rng);
  REQUIRE(draws.count() == 100000);
  REQUIRE(draws.dim() == 1);
  const double mean = draws.draws.col(0).mean();
  // Beta(2, 1000) mean = 2/1002
  CHECK(mean == doctest::Approx(2.0 / 1002.0).epsilon(0.02));

  // Fractional parameters: Beta(1.01, 0.01) prior with 0/9 observed gives
  // Beta(1.01, 9.01), mean 1.01/10.02.
  BetaParams frac{1.01, 0.01};
  const auto d2 = sample_beta_posterior(frac, 0, 9, 100000, rng);
  CHECK(d2.draws.col(0).mean() == doctest::Approx(1.01 / 10.02).epsilon(0.02));

  CHECK_THROWS_AS(sample_beta_posterior(prior, 5, 3, 10, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_beta_posterior(prior, -1, 3, 10, rng), std::invalid_argument);
}

TEST_CASE("gaussian known-covariance posterior") {
  SUBCASE("flat prior gives N(xbar, Sigma/n)") {
    Eigen::MatrixXd data(2, 1);
    data << 1.0, 3.0;
    Eigen::MatrixXd sigma(1, 1);
    sigma << 4.0;
    const auto [mu, cov] = mvn_known_sigma_posterior_moments(
        Eigen::VectorXd(), Eigen::MatrixXd(), false, sigma, data);
    CHECK(mu[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(cov(0, 0) == doctest::Approx(2.0).epsilon(1e-14));

    RngStream rng(7, "mvn-post");
    const auto draws = sample_mvn_known_sigma_posterior(
        Eigen::VectorXd(), Eigen::MatrixXd(), false, sigma, data, 100000, rng);
    const double m = draws.draws.col(0).mean();
    const double v = (draws.draws.col(0).array() - m).square().mean();
    CHECK(m == doctest::Approx(2.0).epsilon(0.02));
    CHECK(v == doctest::Approx(2.0).epsilon(0.05));
  }

  SUBCASE("proper prior combines precisions") {
    Eigen::VectorXd mu0(1);
    mu0 << 0.0;
    Eigen::MatrixXd s0(1, 1);
    s0 << 1.0;
    Eigen::MatrixXd sigma(1, 1);
    sigma << 1.0;
    Eigen::MatrixXd data(1, 1);
    data << 2.0;
    const auto [mu, cov] =
        mvn_known_sigma_posterior_moments(mu0, s0, true, sigma, data);
    CHECK(mu[0] == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(cov(0, 0) == doctest::Approx(0.5).epsilon(1e-13));
  }

  SUBCASE("no data with a proper prior returns the prior") {
    Eigen::VectorXd mu0(2);
    mu0 << 1.0, -1.0;
    Eigen::MatrixXd s0 = Eigen::MatrixXd::Identity(2, 2) * 3.0;
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd data(0, 2);
    const auto [mu, cov] =
        mvn_known_sigma_posterior_moments(mu0, s0, true, sigma, data);
    CHECK((mu - mu0).norm() == doctest::Approx(0.0));
    CHECK((cov - s0).norm() == doctest::Approx(0.0));
  }

  SUBCASE("no data with a flat prior is an error") {
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd data(0, 2);
    CHECK_THROWS_AS(mvn_known_sigma_posterior_moments(
                        Eigen::VectorXd(), Eigen::MatrixXd(), false, sigma, data),
                    std::invalid_argument);
  }
}

TEST_CASE("wishart bartlett factor has the right first moment") {
  RngStream rng(31, "wishart");
  const int d = 3;
  const double df = 8.0;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const Eigen::MatrixXd a = wishart_bartlett_lower(d, df, rng);
    acc += a * a.transpose();
  }
  acc /= n;
  // E[W] = df * I for Wishart(I, df).
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      CHECK(acc(i, j) == doctest::Approx(i == j ? df : 0.0).epsilon(0.05).scale(1.0));
    }
  }
  CHECK_THROWS_AS(wishart_bartlett_lower(3, 1.5, rng), std::invalid_argument);
}

TEST_CASE("inverse wishart mean") {
  RngStream rng(37, "invwishart");
  Eigen::MatrixXd psi(2, 2);
  psi << 2.0, 0.0, 0.0, 3.0;
  const double df = 10.0;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(2, 2);
  const int n = 20000;
  for (int i = 0; i < n; ++i) acc += inverse_wishart_draw(psi, df, rng);
  acc /= n;
  // E[IW(psi, df)] = psi / (df - d - 1) = psi / 7.
  CHECK(acc(0, 0) == doctest::Approx(2.0 / 7.0).epsilon(0.03));
  CHECK(acc(1, 1) == doctest::Approx(3.0 / 7.0).epsilon(0.03));
  CHECK(std::abs(acc(0, 1)) < 0.01);
}

TEST_CASE("niw posterior update and sampling") {
  RngStream rng(41, "niw");
  const int d = 2;
  const int n = 100;
  Eigen::MatrixXd data(n, d);
  for (int i = 0; i < n; ++i) {
    data(i, 0) = 1.0 + rng.normal();
    data(i, 1) = -0.5 + rng.normal();
  }
  const Eigen::VectorXd xbar = data.colwise().mean();

  NIWParams prior;  // uninformative: kappa = nu = 0, psi = 0
  prior.mu0 = Eigen::VectorXd::Zero(d);
  prior.psi = Eigen::MatrixXd::Zero(d, d);
  const auto post = niw_posterior_params(prior, data);
  CHECK(post.kappa == doctest::Approx(100.0));
  CHECK(post.nu == doctest::Approx(100.0));
  CHECK((post.mu0 - xbar).norm() < 1e-12);

  const auto draws = sample_niw_posterior(prior, data, 4000, rng);
  REQUIRE(draws.dim() == d + d * (d + 1) / 2);
  Eigen::VectorXd mu_mean = draws.draws.leftCols(d).colwise().mean();
  CHECK((mu_mean - xbar).norm() < 0.03);

  // Sigma marginal is IW(S, n); its mean is S / (n - d - 1).
  Eigen::MatrixXd centered = data.rowwise() - xbar.transpose();
  Eigen::MatrixXd scatter = centered.transpose() * centered;
  Eigen::VectorXd mu_tmp(d);
  Eigen::MatrixXd sig_tmp(d, d);
  Eigen::MatrixXd sig_acc = Eigen::MatrixXd::Zero(d, d);
  for (long k = 0; k < draws.count(); ++k) {
    niw_unpack(draws.draws.row(k).transpose(), d, mu_tmp, sig_tmp);
    sig_acc += sig_tmp;
  }
  sig_acc /= static_cast<double>(draws.count());
  const Eigen::MatrixXd expect = scatter / (n - d - 1);
  CHECK((sig_acc - expect).norm() / expect.norm() < 0.08);
}

TEST_CASE("niw propriety guard") {
  RngStream rng(43, "niw-guard");
  NIWParams prior;
  prior.mu0 = Eigen::VectorXd::Zero(2);
  prior.psi = Eigen::MatrixXd::Zero(2, 2);
  prior.nu = -2.25;
  Eigen::MatrixXd data(3, 2);
  data << 0.1, 0.2, -0.3, 0.4, 0.5, -0.1;
  // n + nu = 0.75 <= d - 1 = 1, so the posterior is improper.
  CHECK_THROWS_WITH_AS(sample_niw_posterior(prior, data, 10, rng),
                       doctest::Contains("n_part + nu"), std::runtime_error);
}

TEST_CASE("niw pack and unpack roundtrip") {
  Eigen::VectorXd mu(3);
  mu << 1.0, -2.0, 0.5;
  Eigen::MatrixXd sigma(3, 3);
  sigma << 2.0, 0.3, 0.1,
           0.3, 1.5, -0.2,
           0.1, -0.2, 1.0;
  const Eigen::VectorXd packed = niw_pack(mu, sigma);
  REQUIRE(packed.size() == 3 + 6);
  Eigen::VectorXd mu2(3);
  Eigen::MatrixXd sigma2(3, 3);
  niw_unpack(packed, 3, mu2, sigma2);
  CHECK((mu2 - mu).norm() == doctest::Approx(0.0));
  CHECK((sigma2 - sigma).norm() == doctest::Approx(0.0));
}

TEST_CASE("polya-gamma moments") {
  RngStream rng(53, "pg");
  const int n = 40000;

  SUBCASE("pg(1, 0)") {
    double sum = 0.0;
    double sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = polya_gamma_draw(1, 0.0, rng);
      sum += x;
      sumsq += x * x;
    }
    const double mean = sum / n;
    // E[PG(1,0)] = 1/4, Var[PG(1,0)] = 1/24.
    CHECK(mean == doctest::Approx(0.25).epsilon(0.01));
    CHECK(sumsq / n - mean * mean == doctest::Approx(1.0 / 24.0).epsilon(0.05));
  }

  SUBCASE("pg(1, c) tilted mean") {
    // E[PG(1,c)] = tanh(c/2) / (2c).
    double sum2 = 0.0;
    double sum6 = 0.0;
    double sumneg = 0.0;
    for (int i = 0; i < n; ++i) {
      sum2 += polya_gamma_draw(1, 2.0, rng);
      sum6 += polya_gamma_draw(1, 6.0, rng);
      sumneg += polya_gamma_draw(1, -2.0, rng);
    }
    CHECK(sum2 / n == doctest::Approx(std::tanh(1.0) / 4.0).epsilon(0.015));
    CHECK(sum6 / n == doctest::Approx(std::tanh(3.0) / 12.0).epsilon(0.015));
    // The distribution depends on c only through |c|.
    CHECK(sumneg / n == doctest::Approx(std::tanh(1.0) / 4.0).epsilon(0.015));
  }

  SUBCASE("pg(b, c) scales as a b-fold sum") {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += polya_gamma_draw(3, 1.0, rng);
    CHECK(sum / n == doctest::Approx(3.0 * std::tanh(0.5) / 2.0).epsilon(0.015));
  }

  SUBCASE("argument guards") {
    CHECK_THROWS_AS(polya_gamma_draw(0, 1.0, rng), std::invalid_argument);
  }
}

TEST_CASE("logistic gibbs sampler") {
  RngStream rng(61, "gibbs");

  SUBCASE("symmetric data centers the coefficient at zero") {
    Eigen::MatrixXd X(2, 1);
    X << 1.0, -1.0;
    Eigen::VectorXd trials(2);
    trials << 40.0, 40.0;
    Eigen::VectorXd successes(2);
    successes << 20.0, 20.0;
    Eigen::VectorXd b0(1);
    b0 << 0.0;
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(1, 1) * 100.0;
    const auto draws = logistic_gibbs(X, trials, successes, b0, B, 3000, 1000, rng);
    REQUIRE(draws.count() == 2000);
    CHECK(std::abs(draws.draws.col(0).mean()) < 0.08);
  }

  SUBCASE("lopsided data pushes the coefficient positive") {
    Eigen::MatrixXd X(1, 1);
    X << 1.0;
    Eigen::VectorXd trials(1);
    trials << 50.0;
    Eigen::VectorXd successes(1);
    successes << 45.0;
    Eigen::VectorXd b0(1);
    b0 << 0.0;
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(1, 1) * 100.0;
    const auto draws = logistic_gibbs(X, trials, successes, b0, B, 2000, 1000, rng);
    // MLE is log(45/5) = log 9; the posterior mean should be well above 1.
    CHECK(draws.draws.col(0).mean() > 1.0);
    CHECK(draws.draws.col(0).mean() < 4.0);
  }

  SUBCASE("custom starting point converges to the same region") {
    Eigen::MatrixXd X(1, 1);
    X << 1.0;
    Eigen::VectorXd trials(1);
    trials << 50.0;
    Eigen::VectorXd successes(1);
    successes << 45.0;
    Eigen::VectorXd b0(1);
    b0 << 0.0;
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(1, 1) * 100.0;
    Eigen::VectorXd start(1);
    start << 30.0;
    const auto draws =
        logistic_gibbs(X, trials, successes, b0, B, 2000, 1000, rng, &start);
    CHECK(draws.draws.col(0).mean() > 1.0);
    CHECK(draws.draws.col(0).mean() < 4.0);
  }

  SUBCASE("argument guards") {
    Eigen::MatrixXd X(1, 1);
    X << 1.0;
    Eigen::VectorXd trials(1);
    trials << 10.0;
    Eigen::VectorXd bad(1);
    bad << 12.0;
    Eigen::VectorXd ok(1);
    ok << 5.0;
    Eigen::VectorXd b0(1);
    b0 << 0.0;
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(1, 1);
    CHECK_THROWS_AS(logistic_gibbs(X, trials, bad, b0, B, 100, 10, rng),
                    std::invalid_argument);
    CHECK_THROWS_AS(logistic_gibbs(X, trials, ok, b0, B, 100, 100, rng),
                    std::invalid_argument);
  }
}
