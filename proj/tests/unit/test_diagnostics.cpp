#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "lemie/diagnostics.hpp"
#include "lemie/rng.hpp"
#include "lemie/special.hpp"

using namespace lemie;

namespace {

WeightedSampleSet make_ws(Eigen::MatrixXd draws, Eigen::VectorXd weights,
                          const char* scheme = "test") {
  WeightedSampleSet ws;
  ws.draws.draws = std::move(draws);
  ws.draws.source = scheme;
  ws.log_weights = weights.array().log().matrix();
  ws.norm_weights = weights / weights.sum();
  ws.scheme = scheme;
  return ws;
}

Eigen::MatrixXd normal_column(double mu, double sd, long n, std::uint64_t seed,
                              const char* tag) {
  RngStream rng(seed, tag);
  Eigen::MatrixXd out(n, 1);
  for (long i = 0; i < n; ++i) out(i, 0) = mu + sd * rng.normal();
  return out;
}

constexpr double kNormalEntropy = 1.4189385332046727;  // 0.5 log(2 pi e)

}  // namespace

TEST_CASE("effective sample size of simple weight patterns") {
  const Eigen::MatrixXd d = Eigen::MatrixXd::Zero(100, 1);
  WeightedSampleSet uniform = make_ws(d, Eigen::VectorXd::Ones(100));
  CHECK(ess(uniform) == doctest::Approx(100.0).epsilon(1e-12));

  Eigen::VectorXd onehot = Eigen::VectorXd::Constant(100, 1e-300);
  onehot[17] = 1.0;
  WeightedSampleSet point = make_ws(d, onehot);
  CHECK(ess(point) == doctest::Approx(1.0).epsilon(1e-9));

  Eigen::VectorXd three(3);
  three << 0.5, 0.25, 0.25;
  WeightedSampleSet small = make_ws(Eigen::MatrixXd::Zero(3, 1), three);
  CHECK(ess(small) == doctest::Approx(1.0 / 0.375).epsilon(1e-9));
}

TEST_CASE("effective sample size depends only on the normalised weights") {
  RngStream rng(4, "ess-scale");
  Eigen::VectorXd w(50);
  for (int i = 0; i < 50; ++i) w[i] = rng.exponential();
  const Eigen::MatrixXd d = Eigen::MatrixXd::Zero(50, 1);
  const double base = ess(make_ws(d, w));
  const double scaled = ess(make_ws(d, (w * 1e37).eval()));
  CHECK(base == doctest::Approx(scaled).epsilon(1e-12));
  CHECK(base >= 1.0);
  CHECK(base <= 50.0);
  CHECK(base < 50.0);  // non-uniform weights cannot attain N
}

TEST_CASE("tail index of exponential weights is near zero") {
  RngStream rng(11, "gpd-exp");
  const long n = 10000;
  Eigen::VectorXd lw(n);
  for (long i = 0; i < n; ++i) lw[i] = std::log(rng.exponential());

  const GpdFit full = fit_gpd_khat(lw, n - 1);
  REQUIRE(full.fitted);
  CHECK(full.khat == doctest::Approx(0.0).epsilon(1.0).scale(0.05));
  CHECK(full.sigma_hat > 0.0);

  const GpdFit def = fit_gpd_khat(lw);
  REQUIRE(def.fitted);
  CHECK(def.tail_count == 300);  // ceil(min(0.2 n, 3 sqrt(n))) at n = 10^4
  CHECK(std::abs(def.khat) < 0.15);
}

TEST_CASE("tail index recovers a synthetic heavy tail") {
  RngStream rng(12, "gpd-half");
  const long n = 10000;
  const double k = 0.5;
  Eigen::VectorXd lw(n);
  for (long i = 0; i < n; ++i) {
    const double u = rng.uniform();
    lw[i] = std::log((std::pow(1.0 - u, -k) - 1.0) / k);
  }
  const GpdFit full = fit_gpd_khat(lw, n - 1);
  REQUIRE(full.fitted);
  CHECK(full.khat > 0.45);
  CHECK(full.khat < 0.55);

  const GpdFit def = fit_gpd_khat(lw);
  REQUIRE(def.fitted);
  CHECK(def.khat > 0.3);
  CHECK(def.khat < 0.7);
}

TEST_CASE("constant weights give the no-fit sentinel") {
  const Eigen::VectorXd lw = Eigen::VectorXd::Constant(200, -3.0);
  const GpdFit fit = fit_gpd_khat(lw);
  CHECK_FALSE(fit.fitted);
  CHECK(std::isnan(fit.khat));
  CHECK(fit.tail_count < 5);
}

TEST_CASE("tail index ignores a constant shift of the log weights") {
  RngStream rng(13, "gpd-shift");
  Eigen::VectorXd lw(2000);
  for (long i = 0; i < 2000; ++i) lw[i] = std::log(rng.exponential());
  const GpdFit a = fit_gpd_khat(lw);
  const GpdFit b = fit_gpd_khat((lw.array() + 123.456).matrix());
  REQUIRE(a.fitted);
  REQUIRE(b.fitted);
  CHECK(a.khat == doctest::Approx(b.khat).epsilon(1e-6));
}

TEST_CASE("tail fit input validation") {
  CHECK_THROWS_AS(fit_gpd_khat(Eigen::VectorXd::Ones(24)), std::invalid_argument);
  Eigen::VectorXd bad = Eigen::VectorXd::Ones(30);
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fit_gpd_khat(bad), std::invalid_argument);
  // A coarse grid still produces a usable estimate.
  RngStream rng(14, "gpd-grid");
  Eigen::VectorXd lw(5000);
  for (long i = 0; i < 5000; ++i) lw[i] = std::log(rng.exponential());
  const GpdFit coarse = fit_gpd_khat(lw, 0, 5);
  CHECK(coarse.fitted);
  CHECK(std::abs(coarse.khat) < 0.3);
}

TEST_CASE("weight summary reports scheme, ess bounds, and tail flags") {
  RngStream rng(15, "diag-report");
  const long n = 1000;
  Eigen::VectorXd w(n);
  // Very heavy tail: exp of a GPD(k = 0.9) quantile transform.
  for (long i = 0; i < n; ++i) {
    const double u = rng.uniform();
    w[i] = (std::pow(1.0 - u, -0.9) - 1.0) / 0.9 + 1e-6;
  }
  WeightedSampleSet ws = make_ws(Eigen::MatrixXd::Zero(n, 1), w, "mie2");
  const DiagnosticsReport rep = diagnose_weights(ws);
  CHECK(rep.scheme == "mie2");
  CHECK(rep.ess >= 1.0);
  CHECK(rep.ess <= static_cast<double>(n));
  REQUIRE_FALSE(std::isnan(rep.khat));
  CHECK(rep.khat > 0.7);
  CHECK(std::find(rep.flags.begin(), rep.flags.end(), "khat>0.7") != rep.flags.end());
  CHECK(std::find(rep.flags.begin(), rep.flags.end(), "khat>0.5") != rep.flags.end());

  WeightedSampleSet flat = make_ws(Eigen::MatrixXd::Zero(100, 1),
                                   Eigen::VectorXd::Ones(100), "mie1");
  const DiagnosticsReport none = diagnose_weights(flat);
  CHECK(std::find(none.flags.begin(), none.flags.end(), "gpd-no-fit") !=
        none.flags.end());
  CHECK(std::isnan(none.khat));
}

TEST_CASE("cross entropy of a normal against itself matches its entropy") {
  const Eigen::MatrixXd truth = normal_column(0.0, 1.0, 4000, 21, "ce-normal");
  const CrossEntropyResult ce = cross_entropy(truth, [](const Eigen::RowVectorXd& t) {
    return normal_logpdf(t[0], 0.0, 1.0);
  });
  REQUIRE_FALSE(ce.infinite);
  CHECK(ce.se > 0.0);
  CHECK(std::abs(ce.estimate - kNormalEntropy) < 3.0 * ce.se);
}

TEST_CASE("zero density at a truth draw flags infinity instead of throwing") {
  const Eigen::MatrixXd truth = normal_column(0.0, 1.0, 500, 22, "ce-inf");
  // A sliver of density far from the truth mass: rectangular window at 10.
  WeightedSampleSet far = make_ws(normal_column(10.0, 0.001, 200, 23, "ce-far"),
                                  Eigen::VectorXd::Ones(200));
  Eigen::VectorXd bw(1);
  bw << 0.01;
  const KdeScorer scorer(far, DensityKernel::rect, bw);
  const CrossEntropyResult ce = cross_entropy(truth, scorer.fn());
  CHECK(ce.infinite);
  CHECK(std::isinf(ce.estimate));
  CHECK(ce.estimate > 0.0);
}

TEST_CASE("kl divergence of a density against itself is zero") {
  const Eigen::MatrixXd truth = normal_column(0.0, 1.0, 4000, 24, "kl-self");
  double se = 0.0;
  bool infinite = true;
  const double kl = kl_divergence(
      truth,
      [](const Eigen::RowVectorXd& t) { return normal_logpdf(t[0], 0.0, 1.0); },
      kNormalEntropy, &se, &infinite);
  CHECK_FALSE(infinite);
  CHECK(std::abs(kl) < 3.0 * se);
}

TEST_CASE("kl divergence between unit-variance normals one apart is one half") {
  const Eigen::MatrixXd truth = normal_column(0.0, 1.0, 6000, 25, "kl-half");
  double se = 0.0;
  const double kl = kl_divergence(
      truth,
      [](const Eigen::RowVectorXd& t) { return normal_logpdf(t[0], 1.0, 1.0); },
      kNormalEntropy, &se);
  CHECK(std::abs(kl - 0.5) < 3.0 * se);
}

TEST_CASE("kde scoring of fresh truth draws gives nonnegative kl") {
  const Eigen::MatrixXd fit_draws = normal_column(0.0, 1.0, 3000, 26, "kl-kde-a");
  const Eigen::MatrixXd truth = normal_column(0.0, 1.0, 3000, 27, "kl-kde-b");
  WeightedSampleSet ws = make_ws(fit_draws, Eigen::VectorXd::Ones(3000));
  const Eigen::VectorXd bw = silverman_bandwidth(ws);
  const KdeScorer scorer(ws, DensityKernel::normal, bw);
  double se = 0.0;
  const double kl = kl_divergence(
      truth,
      [&](const Eigen::RowVectorXd& t) { return scorer.log_density(t); },
      kNormalEntropy, &se);
  CHECK(kl > -3.0 * se);
  CHECK(kl < 0.2);  // a good KDE of the truth scores close to the truth
}

TEST_CASE("silverman bandwidths shrink with the effective sample size") {
  WeightedSampleSet ws =
      make_ws(normal_column(0.0, 1.0, 1000, 28, "silverman"),
              Eigen::VectorXd::Ones(1000));
  const Eigen::VectorXd bw = silverman_bandwidth(ws);
  REQUIRE(bw.size() == 1);
  CHECK(bw[0] > 0.15);
  CHECK(bw[0] < 0.3);  // about 0.9 n^(-1/5) for a unit normal

  // Concentrating the weights raises the bandwidth (smaller n_eff).
  Eigen::VectorXd w = Eigen::VectorXd::Constant(1000, 1e-8);
  w.head(50).setConstant(1.0);
  WeightedSampleSet few = make_ws(ws.draws.draws, w);
  CHECK(silverman_bandwidth(few)[0] > bw[0]);
}

TEST_CASE("kde scorer agrees with the pointwise weighted density") {
  RngStream rng(29, "kde-agree");
  const long n = 400;
  Eigen::MatrixXd draws(n, 2);
  Eigen::VectorXd w(n);
  for (long i = 0; i < n; ++i) {
    draws(i, 0) = rng.normal();
    draws(i, 1) = 0.5 * rng.normal() + 1.0;
    w[i] = rng.exponential();
  }
  WeightedSampleSet ws = make_ws(draws, w);
  Eigen::VectorXd bw(2);
  bw << 0.4, 0.3;
  for (DensityKernel kernel : {DensityKernel::rect, DensityKernel::normal}) {
    const KdeScorer scorer(ws, kernel, bw);
    for (double x : {-1.0, 0.0, 0.7}) {
      Eigen::RowVectorXd pt(2);
      pt << x, 1.0 - x;
      Eigen::VectorXd col = pt.transpose();
      const double direct = weighted_density(ws, col, kernel, bw);
      const double via_log = std::exp(scorer.log_density(pt));
      if (direct > 0.0) {
        CHECK(via_log == doctest::Approx(direct).epsilon(1e-12));
      } else {
        CHECK(via_log == 0.0);
      }
    }
  }
}

TEST_CASE("one-dimensional rectangular scoring uses the sorted fast path") {
  RngStream rng(30, "kde-fast");
  const long n = 2000;
  Eigen::MatrixXd draws(n, 1);
  Eigen::VectorXd w(n);
  for (long i = 0; i < n; ++i) {
    draws(i, 0) = rng.normal();
    w[i] = rng.exponential();
  }
  WeightedSampleSet ws = make_ws(draws, w);
  Eigen::VectorXd bw(1);
  bw << 0.25;
  const KdeScorer scorer(ws, DensityKernel::rect, bw);
  for (double x : {-2.5, -0.737, 0.0, 0.125, 1.9, 6.0}) {
    Eigen::RowVectorXd pt(1);
    pt << x;
    Eigen::VectorXd col(1);
    col << x;
    const double direct = weighted_density(ws, col, DensityKernel::rect, bw);
    const double fast = std::exp(scorer.log_density(pt));
    if (direct > 0.0) {
      CHECK(fast == doctest::Approx(direct).epsilon(1e-10));
    } else {
      CHECK(fast == 0.0);
    }
  }
  // Batch scoring matches pointwise scoring.
  Eigen::MatrixXd pts(3, 1);
  pts << -1.0, 0.0, 1.0;
  const Eigen::VectorXd batch = scorer.log_density_batch(pts);
  for (int i = 0; i < 3; ++i) {
    CHECK(batch[i] == scorer.log_density(pts.row(i)));
  }
}

TEST_CASE("cross entropy input validation") {
  CHECK_THROWS_AS(cross_entropy_values(Eigen::VectorXd::Ones(1)),
                  std::invalid_argument);
  Eigen::VectorXd with_nan(5);
  with_nan << 1.0, 2.0, std::numeric_limits<double>::quiet_NaN(), 0.0, -1.0;
  CHECK_THROWS_AS(cross_entropy_values(with_nan), std::runtime_error);
}
