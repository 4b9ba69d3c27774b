#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "lemie/baselines.hpp"
#include "lemie/draws.hpp"
#include "lemie/laplace.hpp"
#include "lemie/rng.hpp"
#include "lemie/samplers.hpp"

using namespace lemie;

namespace {

Eigen::MatrixXd cloud(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov,
                      long n, std::uint64_t seed, const char* tag) {
  RngStream rng(seed, tag);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  Eigen::MatrixXd out(n, mu.size());
  for (long i = 0; i < n; ++i) {
    out.row(i) = rng.mvn_given_chol(mu, llt.matrixL()).transpose();
  }
  return out;
}

Eigen::MatrixXd cloud1(double mu, double sd, long n, std::uint64_t seed,
                       const char* tag) {
  Eigen::VectorXd m(1);
  m << mu;
  Eigen::MatrixXd c(1, 1);
  c << sd * sd;
  return cloud(m, c, n, seed, tag);
}

}  // namespace

TEST_CASE("flat beta prior is a fixed point of fractionation") {
  BetaParams flat;  // a = b = 1
  for (int m : {1, 2, 5, 64}) {
    const BetaParams f = fractionate_beta(flat, m);
    CHECK(f.a == 1.0);
    CHECK(f.b == 1.0);
  }
}

TEST_CASE("beta fractionation divides the kernel exponents") {
  BetaParams prior;
  prior.a = 3.0;
  prior.b = 5.0;
  const BetaParams f = fractionate_beta(prior, 2);
  CHECK(f.a == doctest::Approx(2.0));
  CHECK(f.b == doctest::Approx(3.0));

  // Pointwise: the fractionated log-kernel difference between two points is
  // 1/m times the original difference, for any m.
  auto kernel_diff = [](const BetaParams& p, double t1, double t2) {
    return (p.a - 1.0) * (std::log(t1) - std::log(t2)) +
           (p.b - 1.0) * (std::log1p(-t1) - std::log1p(-t2));
  };
  for (int m : {1, 3, 7}) {
    const BetaParams g = fractionate_beta(prior, m);
    const double lhs = kernel_diff(g, 0.23, 0.81);
    const double rhs = kernel_diff(prior, 0.23, 0.81) / m;
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("mvn fractionation scales the covariance by m") {
  Eigen::VectorXd mu(2);
  mu << 1.0, -2.0;
  Eigen::MatrixXd cov(2, 2);
  cov << 2.0, 0.3, 0.3, 1.0;
  Eigen::VectorXd mu_f;
  Eigen::MatrixXd cov_f;
  fractionate_mvn(mu, cov, 4, mu_f, cov_f);
  CHECK(mu_f.isApprox(mu));
  CHECK(cov_f.isApprox(4.0 * cov));

  // Pointwise 1/m property of the log-density kernel (quadratic form halves).
  Eigen::VectorXd x1(2), x2(2);
  x1 << 0.5, 0.5;
  x2 << -1.0, 2.0;
  auto quad = [&](const Eigen::MatrixXd& c, const Eigen::VectorXd& x) {
    return -0.5 * (x - mu).dot(c.llt().solve(x - mu));
  };
  const double lhs = quad(cov_f, x1) - quad(cov_f, x2);
  const double rhs = (quad(cov, x1) - quad(cov, x2)) / 4.0;
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("niw fractionation matches the worked degrees-of-freedom example") {
  NIWParams prior;
  prior.mu0 = Eigen::VectorXd::Zero(2);
  prior.psi = Eigen::MatrixXd::Zero(2, 2);
  prior.nu = 0.0;
  prior.kappa = 0.0;
  const NIWParams f = fractionate_niw(prior, 2, 4);
  CHECK(f.nu == doctest::Approx(-2.25));
  CHECK(f.kappa == 0.0);
  CHECK(f.psi.isZero());
  CHECK(f.mu0.isZero());
}

TEST_CASE("niw fractionation divides the marginal covariance log-kernel") {
  // With psi = 0 and kappa = 0 the covariance marginal kernel is
  // |Sigma|^-(nu+d+1)/2, so fractionation must give nu* + d + 1 = (nu+d+1)/m.
  for (int d : {1, 2, 3}) {
    for (int m : {2, 4, 8}) {
      for (double nu : {0.0, 3.0, 7.5}) {
        NIWParams prior;
        prior.mu0 = Eigen::VectorXd::Zero(d);
        prior.psi = Eigen::MatrixXd::Zero(d, d);
        prior.nu = nu;
        const NIWParams f = fractionate_niw(prior, d, m);
        const double exponent = f.nu + d + 1.0;
        CHECK(exponent == doctest::Approx((nu + d + 1.0) / m).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("fractionated-prior propriety rule") {
  CHECK(check_fractionated_propriety(8, 10000, 64));
  CHECK_FALSE(check_fractionated_propriety(2, 16, 4));
  CHECK(check_fractionated_propriety(1, 3, 1));
}

TEST_CASE("single-part consensus pooling returns the draws unchanged") {
  const Eigen::MatrixXd a =
      cloud1(2.0, 1.5, 60, 11, "cmc-single") .eval();
  const ParamDraws one = cmc_pool({a}, CmcVariant::cmc1);
  CHECK(one.draws.isApprox(a));
  CHECK(one.source == "cmc1");
  bool fell_back = true;
  const ParamDraws two = cmc_pool({a}, CmcVariant::cmc2, &fell_back);
  CHECK_FALSE(fell_back);
  CHECK((two.draws - a).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(two.source == "cmc2");
}

TEST_CASE("weighted consensus pooling reproduces the precision-weighted moments") {
  // For draws pooled with their own sample precisions, the pooled sample mean
  // equals the precision-weighted mean exactly; the pooled covariance matches
  // the combined covariance up to cross-part sampling noise.
  const int m = 3;
  const long n = 500;
  std::vector<Eigen::MatrixXd> sets;
  Eigen::MatrixXd prec_sum = Eigen::MatrixXd::Zero(2, 2);
  Eigen::VectorXd prec_mu = Eigen::VectorXd::Zero(2);
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd mu(2);
    mu << 0.5 * j, 1.0 - 0.3 * j;
    Eigen::MatrixXd cov(2, 2);
    cov << 1.0 + 0.2 * j, 0.1 * j, 0.1 * j, 0.8;
    sets.push_back(cloud(mu, cov, n, 100 + j, "cmc-pool"));
    Eigen::VectorXd mu_hat;
    Eigen::MatrixXd cov_hat;
    row_moments(sets.back(), mu_hat, cov_hat);
    const Eigen::MatrixXd prec = cov_hat.llt().solve(Eigen::MatrixXd::Identity(2, 2));
    prec_sum += prec;
    prec_mu += prec * mu_hat;
  }
  const Eigen::VectorXd mu_star = prec_sum.llt().solve(prec_mu);
  const Eigen::MatrixXd sigma_star =
      prec_sum.llt().solve(Eigen::MatrixXd::Identity(2, 2));

  const ParamDraws pooled = cmc_pool(sets, CmcVariant::cmc2);
  REQUIRE(pooled.draws.rows() == n);
  Eigen::VectorXd pooled_mu;
  Eigen::MatrixXd pooled_cov;
  row_moments(pooled.draws, pooled_mu, pooled_cov);
  CHECK((pooled_mu - mu_star).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((pooled_cov - sigma_star).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("uneven part sizes are truncated to the shortest") {
  std::vector<Eigen::MatrixXd> sets = {
      cloud1(0.0, 1.0, 50, 1, "trunc-a"),
      cloud1(0.0, 1.0, 30, 2, "trunc-b"),
      cloud1(0.0, 1.0, 70, 3, "trunc-c"),
  };
  const ParamDraws avg = cmc_pool(sets, CmcVariant::cmc1);
  REQUIRE(avg.draws.rows() == 30);
  const Eigen::MatrixXd expect =
      (sets[0].topRows(30) + sets[1].topRows(30) + sets[2].topRows(30)) / 3.0;
  CHECK(avg.draws.isApprox(expect));
}

TEST_CASE("averaging consensus of a symmetric split recovers the centre") {
  std::vector<Eigen::MatrixXd> sets = {
      cloud1(-2.0, 0.7, 400, 5, "cmc1-left"),
      cloud1(2.0, 0.7, 400, 6, "cmc1-right"),
  };
  const ParamDraws avg = cmc_pool(sets, CmcVariant::cmc1);
  CHECK(avg.draws.col(0).mean() == doctest::Approx(0.0).epsilon(0.1));
  // Averaging halves the spread relative to each part.
  Eigen::VectorXd mu;
  Eigen::MatrixXd cov;
  row_moments(avg.draws, mu, cov);
  CHECK(std::sqrt(cov(0, 0)) == doctest::Approx(0.7 / std::sqrt(2.0)).epsilon(0.15));
}

TEST_CASE("index-walk smoothing of a single part keeps its mean") {
  const Eigen::MatrixXd a = cloud1(3.0, 1.0, 800, 21, "ndpe-single");
  DpeOptions opts;
  opts.seed = 99;
  DpeReport rep;
  const ParamDraws out = ndpe_sample({a}, opts, &rep);
  REQUIRE(out.draws.rows() == 800);
  CHECK(out.source == "ndpe");
  // With one part every index move leaves the product weight unchanged.
  CHECK(rep.acceptance_rate == 1.0);
  CHECK(rep.proposals == 800);
  CHECK(out.draws.col(0).mean() == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("index-walk consensus of two parts lands between them") {
  std::vector<Eigen::MatrixXd> sets = {
      cloud1(-1.0, 1.0, 600, 31, "ndpe-a"),
      cloud1(1.0, 1.0, 600, 32, "ndpe-b"),
  };
  DpeOptions opts;
  opts.seed = 7;
  DpeReport rep;
  const ParamDraws out = ndpe_sample(sets, opts, &rep);
  REQUIRE(out.draws.rows() == 600);
  // The index chain freezes as the bandwidth shrinks, so the consensus mean
  // is noisy; it must still land well inside the gap between the parts.
  CHECK(std::abs(out.draws.col(0).mean()) < 0.5);
  CHECK(rep.proposals == 2 * 600);
  CHECK(rep.accepted <= rep.proposals);
  CHECK(rep.acceptance_rate > 0.0);
  CHECK(rep.acceptance_rate <= 1.0);
  CHECK(rep.stages == 1);
}

TEST_CASE("out-of-support smoothed draws are counted, not dropped") {
  // Parts concentrated near zero on a (0,1)-supported parameter: gaussian
  // smoothing pushes some draws negative and the report must say how many.
  std::vector<Eigen::MatrixXd> sets = {
      cloud1(0.05, 0.02, 400, 41, "ndpe-edge-a"),
      cloud1(0.06, 0.02, 400, 42, "ndpe-edge-b"),
  };
  DpeOptions opts;
  opts.seed = 17;
  opts.in_support = [](const Eigen::RowVectorXd& t) {
    return t[0] > 0.0 && t[0] < 1.0;
  };
  DpeReport rep;
  const ParamDraws out = ndpe_sample(sets, opts, &rep);
  long manual = 0;
  for (Eigen::Index r = 0; r < out.draws.rows(); ++r) {
    if (!(out.draws(r, 0) > 0.0 && out.draws(r, 0) < 1.0)) manual++;
  }
  CHECK(rep.out_of_support == manual);
  CHECK(manual > 0);  // bandwidth ~1 around 0.05 must overshoot the support
  CHECK(out.draws.rows() == 400);
}

TEST_CASE("recursive pairwise consensus reduces parts stage by stage") {
  std::vector<Eigen::MatrixXd> sets;
  for (int j = 0; j < 4; ++j) {
    sets.push_back(cloud1(0.2 * j, 1.0, 300, 50 + j, "dpe-rec"));
  }
  DpeOptions opts;
  opts.seed = 3;
  opts.recursive = true;
  DpeReport rep;
  const ParamDraws out = ndpe_sample(sets, opts, &rep);
  CHECK(rep.stages == 2);  // 4 -> 2 -> 1
  CHECK(out.draws.rows() == 300);
  CHECK(std::abs(out.draws.col(0).mean() - 0.3) < 0.35);

  sets.push_back(cloud1(0.8, 1.0, 300, 57, "dpe-rec"));
  const ParamDraws odd = ndpe_sample(sets, opts, &rep);
  CHECK(rep.stages == 3);  // 5 -> 3 -> 2 -> 1
  CHECK(odd.draws.rows() == 300);
}

TEST_CASE("semiparametric smoothing of a single part keeps its moments") {
  const Eigen::MatrixXd a = cloud1(3.0, 2.0, 800, 61, "sdpe-single");
  DpeOptions opts;
  opts.seed = 13;
  DpeReport rep;
  const ParamDraws out = sdpe_sample({a}, opts, &rep);
  REQUIRE(out.draws.rows() == 800);
  CHECK(out.source == "sdpe");
  // The index weights cancel exactly for one part, so every move is accepted.
  CHECK(rep.acceptance_rate > 0.999);
  CHECK(out.draws.col(0).mean() == doctest::Approx(3.0).epsilon(0.05));
  Eigen::VectorXd mu;
  Eigen::MatrixXd cov;
  row_moments(out.draws, mu, cov);
  CHECK(std::sqrt(cov(0, 0)) == doctest::Approx(2.0).epsilon(0.25));
}

TEST_CASE("semiparametric consensus error is comparable to weighted consensus") {
  // Two-dimensional gaussian split: both estimators should land close to the
  // precision-weighted combination; the semiparametric one may be noisier but
  // not wildly off.
  const int m = 4;
  const long n = 400;
  std::vector<Eigen::MatrixXd> sets;
  Eigen::MatrixXd prec_sum = Eigen::MatrixXd::Zero(2, 2);
  Eigen::VectorXd prec_mu = Eigen::VectorXd::Zero(2);
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd mu(2);
    mu << 1.0 + 0.1 * j, -0.5 + 0.2 * j;
    Eigen::MatrixXd cov(2, 2);
    cov << 0.5, 0.1, 0.1, 0.6;
    sets.push_back(cloud(mu, cov, n, 70 + j, "sdpe-vs-cmc"));
    Eigen::VectorXd mu_hat;
    Eigen::MatrixXd cov_hat;
    row_moments(sets.back(), mu_hat, cov_hat);
    const Eigen::MatrixXd prec =
        cov_hat.llt().solve(Eigen::MatrixXd::Identity(2, 2));
    prec_sum += prec;
    prec_mu += prec * mu_hat;
  }
  const Eigen::VectorXd mu_star = prec_sum.llt().solve(prec_mu);

  DpeOptions opts;
  opts.seed = 23;
  const ParamDraws sd = sdpe_sample(sets, opts);
  const ParamDraws cm = cmc_pool(sets, CmcVariant::cmc2);
  const double err_sd =
      (sd.draws.colwise().mean().transpose() - mu_star).norm();
  const double err_cm =
      (cm.draws.colwise().mean().transpose() - mu_star).norm();
  CHECK(err_cm < 0.08);
  CHECK(err_sd < 0.25);
}

TEST_CASE("naive pooling averages draws or an estimand of them") {
  Eigen::MatrixXd pooled(4, 2);
  pooled << 1, 2, 3, 4, 5, 6, 7, 8;
  const Eigen::VectorXd mean = naive_estimate(pooled);
  CHECK(mean[0] == doctest::Approx(4.0));
  CHECK(mean[1] == doctest::Approx(5.0));
  const Eigen::VectorXd sq = naive_estimate(pooled, [](const Eigen::RowVectorXd& t) {
    return Eigen::VectorXd(t.array().square().matrix().transpose());
  });
  CHECK(sq[0] == doctest::Approx((1.0 + 9.0 + 25.0 + 49.0) / 4.0));
  CHECK_THROWS_AS(naive_estimate(Eigen::MatrixXd(0, 2)), std::invalid_argument);
}

TEST_CASE("smoothing run reports round-trip through json") {
  DpeReport rep;
  rep.method = "sdpe";
  rep.acceptance_rate = 0.375;
  rep.proposals = 800;
  rep.accepted = 300;
  rep.out_of_support = 12;
  rep.stages = 2;
  const std::string path = "dpe_report_test.json";
  write_dpe_report(rep, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  nlohmann::json j;
  in >> j;
  CHECK(j["method"] == "sdpe");
  CHECK(j["acceptance_rate"] == doctest::Approx(0.375));
  CHECK(j["proposals"] == 800);
  CHECK(j["accepted"] == 300);
  CHECK(j["out_of_support"] == 12);
  CHECK(j["stages"] == 2);
  std::remove(path.c_str());
}

TEST_CASE("draw sets round-trip through csv with sidecar metadata") {
  ParamDraws d;
  d.draws = cloud(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3), 25,
                  5, "csv-roundtrip");
  d.source = "unit";
  d.seed = 5;
  DrawSetMeta meta;
  meta.model = "mvn_known_sigma";
  meta.part_id = 2;
  meta.burnin = 100;
  const std::string csv = "draws_roundtrip_test.csv";
  const std::string side = "draws_roundtrip_test.json";
  write_draws_csv(d, meta, csv, side);

  const ParamDraws back = read_draws_csv(csv);
  REQUIRE(back.draws.rows() == 25);
  REQUIRE(back.draws.cols() == 3);
  CHECK((back.draws - d.draws).cwiseAbs().maxCoeff() < 1e-12);

  std::ifstream in(side);
  REQUIRE(in.good());
  nlohmann::json j;
  in >> j;
  CHECK(j["model"] == "mvn_known_sigma");
  CHECK(j["part_id"] == 2);
  CHECK(j["N"] == 25);
  CHECK(j["seed"] == 5);
  CHECK(j["burnin"] == 100);
  std::remove(csv.c_str());
  std::remove(side.c_str());
}

TEST_CASE("pooling rejects empty or mismatched inputs") {
  CHECK_THROWS_AS(cmc_pool({}, CmcVariant::cmc1), std::invalid_argument);
  std::vector<Eigen::MatrixXd> bad = {Eigen::MatrixXd::Zero(5, 2),
                                      Eigen::MatrixXd::Zero(5, 3)};
  CHECK_THROWS_AS(cmc_pool(bad, CmcVariant::cmc1), std::invalid_argument);
  std::vector<Eigen::MatrixXd> empty_part = {Eigen::MatrixXd::Zero(0, 2)};
  CHECK_THROWS_AS(cmc_pool(empty_part, CmcVariant::cmc1), std::invalid_argument);
  DpeOptions opts;
  CHECK_THROWS_AS(ndpe_sample({}, opts), std::invalid_argument);
}
