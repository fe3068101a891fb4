#include "canonflow/priors.hpp"
#include "test_helpers.hpp"

#include <catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

using namespace canonflow;
using namespace canonflow::priors;

TEST_CASE("gaussian fit recovers moments", "[priors]") {
  Rng rng(1);
  Mat c(2, 2);
  c << 2.0, 0.6, 0.6, 0.5;
  Vec mu(2);
  mu << 1.0, -3.0;
  const auto p = GaussianPrior::from_moments(mu, c);
  CHECK(testutil::max_abs(p.sqrt_cov * p.sqrt_cov - c) < 1e-10);
  CHECK(testutil::max_abs(p.sqrt_cov - p.sqrt_cov.transpose()) < 1e-12);
  const Mat x = sample_gaussian(p, 200000, rng);
  const auto q = fit_gaussian(x);
  CHECK(testutil::max_abs(q.mean - mu) < 0.02);
  CHECK(testutil::max_abs(q.cov - c) < 0.03);
}

TEST_CASE("singular covariance is floored", "[priors]") {
  Mat x(4, 2);
  x << 0, 1, 1, 1, 2, 1, 3, 1;  // second coordinate constant
  const auto p = fit_gaussian(x);
  CHECK(p.cov(1, 1) >= kCovarianceFloor * 0.999);
  CHECK(std::isfinite(p.sqrt_cov(1, 1)));
}

TEST_CASE("bad covariances are rejected", "[priors]") {
  Mat c(2, 2);
  c << 1.0, 0.5, 0.0, 1.0;
  CHECK_THROWS_AS(GaussianPrior::from_moments(Vec::Zero(2), c), InputError);
  CHECK_THROWS_AS(GaussianPrior::from_moments(Vec::Zero(2), -Mat::Identity(2, 2)), InputError);
  CHECK_THROWS_AS(GaussianPrior::from_moments(Vec::Zero(3), Mat::Identity(2, 2)), InputError);
}

TEST_CASE("positional categorical prior", "[priors]") {
  std::vector<RankedCategory> obs;
  for (int i = 0; i < 100; ++i) {
    obs.push_back({0.1, 0});
    obs.push_back({0.9, 2});
  }
  const auto p = fit_positional(obs, 2, 3, 1.0, 0.1);
  CHECK(p.bins.rows() == 2);
  for (int b = 0; b < 2; ++b) CHECK(p.bins.row(b).sum() == Catch::Approx(1.0));
  // bin 0: (100+1)/(100+3) on class 0
  CHECK(p.bins(0, 0) == Catch::Approx(101.0 / 103.0));
  const Vec at0 = eval_positional(p, 0.0);
  CHECK(at0.sum() == Catch::Approx(1.0));
  CHECK(at0(0) == Catch::Approx(0.1 / 3.0 + 0.9 * 101.0 / 103.0));
  const Vec mid = eval_positional(p, 0.75);
  // halfway between bin 1 and... bin 1 is the last, so no interpolation
  CHECK(mid(2) == Catch::Approx(0.1 / 3.0 + 0.9 * 101.0 / 103.0));
  Rng rng(2);
  int hits = 0;
  for (int i = 0; i < 10000; ++i) hits += sample_category(at0, rng) == 0;
  CHECK(std::abs(hits / 10000.0 - at0(0)) < 0.02);
}

TEST_CASE("rank gaussian prior", "[priors]") {
  std::vector<RankedPoint> obs;
  Rng rng(3);
  for (int i = 0; i < 4000; ++i) {
    const double r = uniform01(rng);
    Vec v(3);
    v << (r < 0.5 ? -1.0 : 1.0) + 0.1 * standard_normal(rng), 0.0, 0.0;
    obs.push_back({r, v});
  }
  const auto p = fit_rank_gaussian(obs, 2);
  CHECK(p.means(0, 0) == Catch::Approx(-1.0).margin(0.02));
  CHECK(p.means(1, 0) == Catch::Approx(1.0).margin(0.02));
  const Mat s = sample_rank_gaussian(p, {0.1, 0.9}, rng);
  CHECK(s.rows() == 2);
  CHECK(s(0, 0) < 0.0);
  CHECK(s(1, 0) > 0.0);
}

TEST_CASE("prior json round trip", "[priors]") {
  Mat c(2, 2);
  c << 2.0, 0.3, 0.3, 1.0;
  const auto p = GaussianPrior::from_moments(Vec::Ones(2), c);
  nlohmann::json j = p;
  const auto q = j.get<GaussianPrior>();
  CHECK(testutil::max_abs(q.cov - p.cov) < 1e-15);
  CHECK(testutil::max_abs(q.sqrt_cov - p.sqrt_cov) < 1e-12);
}
