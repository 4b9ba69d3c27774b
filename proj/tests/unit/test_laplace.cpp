#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

#include "lemie/laplace.hpp"
#include "lemie/models.hpp"
#include "lemie/rng.hpp"
#include "lemie/samplers.hpp"
#include "lemie/special.hpp"

using namespace lemie;

namespace {

Eigen::MatrixXd gaussian_cloud(long n, const Eigen::VectorXd& mu,
                               const Eigen::MatrixXd& sigma, std::uint64_t seed) {
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
  RngStream rng(seed, "cloud");
  Eigen::MatrixXd out(n, mu.size());
  for (long h = 0; h < n; ++h) {
    out.row(h) = rng.mvn_given_chol(mu, chol).transpose();
  }
  return out;
}

void sample_stats(const Eigen::MatrixXd& draws, Eigen::VectorXd& mu,
                  Eigen::MatrixXd& sigma) {
  mu = draws.colwise().mean();
  const Eigen::MatrixXd c = draws.rowwise() - mu.transpose();
  sigma = c.transpose() * c / static_cast<double>(draws.rows() - 1);
}

double gauss_kl(const Eigen::VectorXd& mu0, const Eigen::MatrixXd& s0,
                const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1) {
  // KL(N(mu0, s0) || N(mu1, s1)) in closed form.
  const Eigen::Index p = mu0.size();
  const Eigen::MatrixXd s1inv = s1.inverse();
  const Eigen::VectorXd d = mu1 - mu0;
  return 0.5 * ((s1inv * s0).trace() + d.dot(s1inv * d) - static_cast<double>(p) +
                std::log(s1.determinant()) - std::log(s0.determinant()));
}

}  // namespace

TEST_CASE("one part reduces the precision-weighted form to sample moments") {
  Eigen::VectorXd mu(2);
  mu << 1.0, -2.0;
  Eigen::MatrixXd sigma(2, 2);
  sigma << 2.0, 0.6, 0.6, 1.0;
  const Eigen::MatrixXd draws = gaussian_cloud(400, mu, sigma, 5);
  Eigen::VectorXd smu;
  Eigen::MatrixXd ssig;
  sample_stats(draws, smu, ssig);

  const auto la = laplace_type1({draws});
  CHECK((la.mu - smu).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((la.sigma - ssig).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((la.chol * la.chol.transpose() - la.sigma).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(!la.fallback_used);

  const auto la2 = laplace_type2(draws);
  CHECK((la2.mu - la.mu).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((la2.sigma - la.sigma).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("two parts with equal spread average means and halve covariance") {
  Eigen::VectorXd mu(2);
  mu << 0.5, 0.5;
  Eigen::MatrixXd sigma(2, 2);
  sigma << 1.0, 0.2, 0.2, 0.8;
  const Eigen::MatrixXd a = gaussian_cloud(300, mu, sigma, 9);
  Eigen::MatrixXd b = a;
  b.col(0).array() += 3.0;  // same shape, shifted mean
  const auto la = laplace_type1({a, b});

  Eigen::VectorXd mua, mub;
  Eigen::MatrixXd siga, sigb;
  sample_stats(a, mua, siga);
  sample_stats(b, mub, sigb);
  CHECK((la.mu - 0.5 * (mua + mub)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((la.sigma - 0.5 * siga).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("pooled type-1 draws match the full conjugate posterior") {
  RngStream data_rng(21, "data");
  Eigen::VectorXd mean(2);
  mean << 0.4, -0.3;
  Eigen::MatrixXd cov(2, 2);
  cov << 1.0, 0.3, 0.3, 0.5;
  MvnKnownSigmaFamily fam;
  fam.sigma = cov;
  fam.prior_mean = Eigen::VectorXd::Zero(2);
  fam.prior_cov = Eigen::MatrixXd::Identity(2, 2);
  fam.proper_prior = false;
  auto ds = std::make_shared<const Dataset>(
      MvnKnownSigmaFamily::simulate(600, mean, cov, data_rng));
  auto pd = partition_data(ds, 3, PartitionStrategy::random, 21);

  std::vector<Eigen::MatrixXd> blocks;
  for (int j = 0; j < 3; ++j) {
    RngStream rng(21, "local", static_cast<std::uint64_t>(j));
    blocks.push_back(sample_mvn_known_sigma_posterior(
                         fam.prior_mean, fam.prior_cov, false, cov,
                         pd.part_matrix(j), 6000, rng)
                         .draws);
  }
  Eigen::MatrixXd pooled;
  const auto la = laplace_type1(blocks, &pooled);
  CHECK(pooled.rows() == 6000);

  const auto [post_mu, post_cov] = mvn_known_sigma_posterior_moments(
      fam.prior_mean, fam.prior_cov, false, cov, ds->rows);
  // The combined moments hit the analytic posterior up to local-sampler noise.
  CHECK((la.mu - post_mu).cwiseAbs().maxCoeff() < 0.02);
  CHECK((la.sigma - post_cov).cwiseAbs().maxCoeff() < 0.002);
  Eigen::VectorXd pmu;
  Eigen::MatrixXd pcov;
  sample_stats(pooled, pmu, pcov);
  CHECK((pmu - post_mu).cwiseAbs().maxCoeff() < 0.02);
  CHECK((pcov - post_cov).cwiseAbs().maxCoeff() < 0.002);
}

TEST_CASE("rank-deficient part covariance falls back to its diagonal") {
  Eigen::MatrixXd degenerate(50, 2);
  RngStream rng(33, "line");
  for (int h = 0; h < 50; ++h) {
    const double x = rng.normal();
    degenerate(h, 0) = x;
    degenerate(h, 1) = 2.0 * x;  // perfectly correlated: singular covariance
  }
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(2);
  const Eigen::MatrixXd healthy =
      gaussian_cloud(50, mu, Eigen::MatrixXd::Identity(2, 2), 34);
  const auto la = laplace_type1({degenerate, healthy});
  CHECK(la.fallback_used);
  CHECK((la.chol * la.chol.transpose() - la.sigma).cwiseAbs().maxCoeff() < 1e-8);

  Eigen::MatrixXd flat(50, 2);
  flat.setZero();
  flat.col(0) = degenerate.col(0);  // second coordinate constant: no repair
  CHECK_THROWS_AS(laplace_type1({flat, healthy}), std::runtime_error);
}

TEST_CASE("pooled moments fail loudly on degenerate input") {
  Eigen::MatrixXd same(20, 2);
  same.rowwise() = Eigen::RowVector2d(1.0, 2.0);
  CHECK_THROWS_AS(laplace_type2(same), std::runtime_error);

  // Two symmetric clusters: mean zero, covariance n/(n-1) * m m^T + spread.
  Eigen::MatrixXd two(100, 1);
  two.topRows(50).setConstant(1.5);
  two.bottomRows(50).setConstant(-1.5);
  two.col(0) += Eigen::VectorXd::LinSpaced(100, -0.01, 0.01);
  const auto la = laplace_type2(two);
  CHECK(la.mu[0] == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(la.sigma(0, 0) > 2.25);  // inflated by the cluster separation
}

TEST_CASE("shrunk covariance follows the closed-form special cases") {
  Eigen::VectorXd mu(2);
  mu << 0.0, 1.0;
  Eigen::MatrixXd sigma(2, 2);
  sigma << 1.0, -0.2, -0.2, 0.6;
  const Eigen::MatrixXd draws = gaussian_cloud(200, mu, sigma, 41);
  Eigen::VectorXd smu;
  Eigen::MatrixXd ssig;
  sample_stats(draws, smu, ssig);

  // psi = 0, nu = p + 2: scatter / (N + 1) = (N - 1)/(N + 1) * sample cov.
  const auto la = laplace_type3({draws}, Eigen::MatrixXd::Zero(2, 2), 4.0);
  CHECK((la.sigma - ssig * (199.0 / 201.0)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((la.mu - smu).cwiseAbs().maxCoeff() < 1e-12);

  // Enormous psi: the prior term dominates.
  const double kappa = 1e12;
  const auto lap = laplace_type3({draws}, kappa * Eigen::MatrixXd::Identity(2, 2), 4.0);
  CHECK(lap.sigma(0, 0) == doctest::Approx(kappa / 201.0).epsilon(1e-6));

  // Separated parts: per-part centering removes the between-part spread.
  Eigen::MatrixXd far = draws;
  far.col(0).array() += 50.0;
  const auto l3 = laplace_type3({draws, far});
  const auto l2 = laplace_type2([&] {
    Eigen::MatrixXd all(400, 2);
    all << draws, far;
    return all;
  }());
  CHECK(l3.sigma.trace() < l2.sigma.trace());

  CHECK_THROWS_AS(laplace_type3({draws}, Eigen::MatrixXd::Zero(2, 2), -300.0),
                  std::invalid_argument);
}

TEST_CASE("log-density agrees with the direct quadratic form") {
  Eigen::VectorXd mu(3);
  mu << 0.2, -1.0, 4.0;
  Eigen::MatrixXd sigma(3, 3);
  sigma << 2.0, 0.5, 0.1, 0.5, 1.5, -0.3, 0.1, -0.3, 0.9;
  const auto la = laplace_type2(gaussian_cloud(500, mu, sigma, 47));

  const Eigen::MatrixXd pts = gaussian_cloud(40, mu, 4.0 * sigma, 48);
  const Eigen::VectorXd lp = laplace_logpdf_batch(la, pts);
  const Eigen::MatrixXd inv = la.sigma.inverse();
  for (int h = 0; h < 40; ++h) {
    const Eigen::VectorXd d = pts.row(h).transpose() - la.mu;
    const double direct = -0.5 * 3.0 * std::log(2.0 * M_PI) -
                          0.5 * std::log(la.sigma.determinant()) -
                          0.5 * d.dot(inv * d);
    CHECK(lp[h] == doctest::Approx(direct).epsilon(1e-8));
    CHECK(lp[h] ==
          doctest::Approx(mvn_logpdf_chol(pts.row(h).transpose(), la.mu, la.chol))
              .epsilon(1e-12));
  }
}

TEST_CASE("entropy matches the determinant formula") {
  Eigen::MatrixXd one(60, 1);
  one = gaussian_cloud(60, Eigen::VectorXd::Zero(1),
                       4.0 * Eigen::MatrixXd::Identity(1, 1), 51);
  const auto la = laplace_type2(one);
  const double expect = 0.5 * std::log(2.0 * M_PI * M_E * la.sigma(0, 0));
  CHECK(laplace_entropy(la) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("sampling and refitting recovers the construction") {
  Eigen::VectorXd mu(3);
  mu << 1.0, 2.0, 3.0;
  Eigen::MatrixXd sigma(3, 3);
  sigma << 1.0, 0.4, 0.0, 0.4, 2.0, 0.5, 0.0, 0.5, 1.5;
  const auto la = laplace_type2(gaussian_cloud(2000, mu, sigma, 57));
  RngStream rng(58, "laplace-draws");
  const long n = 20000;
  const auto redraw = laplace_sample(la, n, rng);
  const auto refit = laplace_type2(redraw.draws);
  for (int i = 0; i < 3; ++i) {
    const double se_mu = std::sqrt(la.sigma(i, i) / static_cast<double>(n));
    CHECK(std::abs(refit.mu[i] - la.mu[i]) < 4.0 * se_mu);
    for (int j = 0; j < 3; ++j) {
      const double se_s = std::sqrt((la.sigma(i, i) * la.sigma(j, j) +
                                     la.sigma(i, j) * la.sigma(i, j)) /
                                    static_cast<double>(n));
      CHECK(std::abs(refit.sigma(i, j) - la.sigma(i, j)) < 4.0 * se_s);
    }
  }
}

TEST_CASE("json round trip preserves the approximation") {
  Eigen::VectorXd mu(2);
  mu << 3.0, -1.0;
  Eigen::MatrixXd sigma(2, 2);
  sigma << 1.2, 0.3, 0.3, 0.7;
  auto la = laplace_type2(gaussian_cloud(300, mu, sigma, 61));
  la.type_tag = 2;
  write_laplace_json(la, "test_laplace_tmp.json");
  const auto back = read_laplace_json("test_laplace_tmp.json");
  CHECK(back.type_tag == la.type_tag);
  CHECK(back.fallback_used == la.fallback_used);
  CHECK((back.mu - la.mu).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.sigma - la.sigma).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.chol * back.chol.transpose() - back.sigma).cwiseAbs().maxCoeff() < 1e-8);
  std::remove("test_laplace_tmp.json");
}

TEST_CASE("enrichment adds exact components through a second round") {
  BetaBernoulliFamily fam;
  auto ds = std::make_shared<const Dataset>(BetaBernoulliFamily::simulate(80, 28));
  auto pd = partition_data(ds, 2, PartitionStrategy::random, 67);
  ModelSpec spec = fam.spec(pd);
  std::vector<ParamDraws> workers;
  for (int j = 0; j < 2; ++j) {
    const auto [sj, nj] = BetaBernoulliFamily::successes_trials(pd, j);
    RngStream rng(67, "local-sampler", static_cast<std::uint64_t>(j));
    workers.push_back(sample_beta_posterior(fam.prior, sj, nj, 3000, rng));
  }
  auto run = run_in_out_in(workers, spec);
  const size_t before = run.transcript.size();

  EnrichmentOptions opts;
  opts.types = {1, 2, 3};
  opts.draws_per_type = 800;
  std::vector<LaplaceApprox> approxes;
  const auto view = enrich_with_laplace(run, spec, opts, 71, &approxes);

  CHECK(approxes.size() == 3);
  CHECK(run.num_components() == 5);
  CHECK(run.total_draws() == 6000 + 3 * 800);
  CHECK(run.transcript.size() == before + 2 * 2);
  CHECK(run.transcript.back().round == 1);
  CHECK(run.block_labels[2] == "laplace:1");
  CHECK(run.block_labels[4] == "laplace:3");

  const auto r1 = mie1_estimate(view);
  const auto r2 = mie2_estimate(view);
  const auto r3 = mie3_estimate(view, 73);
  CHECK(r1.ws.scheme == "lemie1");
  CHECK(r2.ws.scheme == "lemie2");
  CHECK(r3.ws.scheme == "lemie3");

  const double truth = 29.0 / 82.0;  // Beta(1+28, 1+52) mean
  CHECK(r2.estimate[0] == doctest::Approx(truth).epsilon(0.02));

  // The exact components' normalising estimate targets log Z_pi itself.
  const double log_z = log_beta(29.0, 53.0);
  const auto chat = chat_log(view);
  for (int c = 2; c < 5; ++c) {
    CHECK(chat[c] == doctest::Approx(log_z).epsilon(0.05));
  }
}

TEST_CASE("no laplace draws leaves the run and estimates untouched") {
  BetaBernoulliFamily fam;
  auto ds = std::make_shared<const Dataset>(BetaBernoulliFamily::simulate(40, 10));
  auto pd = partition_data(ds, 2, PartitionStrategy::random, 79);
  ModelSpec spec = fam.spec(pd);
  std::vector<ParamDraws> workers;
  for (int j = 0; j < 2; ++j) {
    const auto [sj, nj] = BetaBernoulliFamily::successes_trials(pd, j);
    RngStream rng(79, "local-sampler", static_cast<std::uint64_t>(j));
    workers.push_back(sample_beta_posterior(fam.prior, sj, nj, 400, rng));
  }
  auto run = run_in_out_in(workers, spec);
  const auto plain = mie2_estimate(build_mixture_view(run, spec));

  EnrichmentOptions opts;
  opts.types = {1};
  opts.draws_per_type = 0;
  const auto view = enrich_with_laplace(run, spec, opts, 83);
  CHECK(run.num_components() == 2);
  const auto r = mie2_estimate(view);
  CHECK(r.ws.scheme == "mie2");
  CHECK(r.estimate[0] == plain.estimate[0]);

  EnrichmentOptions none;
  none.types = {};
  const auto view2 = enrich_with_laplace(run, spec, none, 83);
  CHECK(mie2_estimate(view2).estimate[0] == plain.estimate[0]);
}

TEST_CASE("exact-component divergence matches the gaussian closed form") {
  RngStream data_rng(91, "data");
  Eigen::VectorXd mean(2);
  mean << -0.2, 0.8;
  Eigen::MatrixXd cov(2, 2);
  cov << 0.8, 0.2, 0.2, 1.1;
  MvnKnownSigmaFamily fam;
  fam.sigma = cov;
  fam.prior_mean = Eigen::VectorXd::Zero(2);
  fam.prior_cov = Eigen::MatrixXd::Identity(2, 2);
  fam.proper_prior = false;
  auto ds = std::make_shared<const Dataset>(
      MvnKnownSigmaFamily::simulate(400, mean, cov, data_rng));
  auto pd = partition_data(ds, 2, PartitionStrategy::random, 91);
  ModelSpec spec = fam.spec(pd);
  std::vector<ParamDraws> workers;
  for (int j = 0; j < 2; ++j) {
    RngStream rng(91, "local", static_cast<std::uint64_t>(j));
    workers.push_back(sample_mvn_known_sigma_posterior(
        fam.prior_mean, fam.prior_cov, false, cov, pd.part_matrix(j), 15000, rng));
  }
  auto run = run_in_out_in(workers, spec);

  EnrichmentOptions opts;
  opts.types = {2};
  opts.draws_per_type = 15000;
  std::vector<LaplaceApprox> approxes;
  const auto view = enrich_with_laplace(run, spec, opts, 93, &approxes);
  const auto chat = chat_log(view);
  const double got = kl_hat_local(view, 2, chat);

  const auto [post_mu, post_cov] = mvn_known_sigma_posterior_moments(
      fam.prior_mean, fam.prior_cov, false, cov, ds->rows);
  const double expect = gauss_kl(approxes[0].mu, approxes[0].sigma, post_mu, post_cov);
  CHECK(got == doctest::Approx(expect).epsilon(0.15));
  CHECK(got > 0.0);
}
