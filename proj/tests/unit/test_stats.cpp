#include "canonflow/stats.hpp"
#include "test_helpers.hpp"

#include <catch_amalgamated.hpp>

using namespace canonflow;
using namespace canonflow::stats;

TEST_CASE("kolmogorov survival", "[stats]") {
  // 2 sum (-1)^{k-1} exp(-2 k^2) at lambda = 1
  double ref = 0.0;
  for (int k = 1; k < 50; ++k) ref += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k);
  CHECK(kolmogorov_survival(1.0) == Catch::Approx(ref).epsilon(1e-10));
  CHECK(kolmogorov_survival(1.0) == Catch::Approx(0.2699996).epsilon(1e-6));
  CHECK(kolmogorov_survival(0.0) == Catch::Approx(1.0));
  CHECK(kolmogorov_survival(5.0) < 1e-20);
  CHECK(kolmogorov_survival(1.358) == Catch::Approx(0.05).margin(5e-4));
}

TEST_CASE("normal cdf", "[stats]") {
  CHECK(normal_cdf(0.0) == Catch::Approx(0.5));
  CHECK(normal_cdf(1.959963984540054) == Catch::Approx(0.975).epsilon(1e-12));
}

TEST_CASE("ks tests accept and reject", "[stats]") {
  Rng rng(1);
  std::vector<double> a(5000), b(5000), c(5000);
  for (auto& v : a) v = standard_normal(rng);
  for (auto& v : b) v = standard_normal(rng);
  for (auto& v : c) v = standard_normal(rng) + 0.2;
  CHECK(ks_normal(a).p_value > 1e-3);
  CHECK(ks_normal(c).p_value < 1e-6);
  CHECK(ks_two_sample(a, b).p_value > 1e-3);
  CHECK(ks_two_sample(a, c).p_value < 1e-6);
  CHECK(ks_critical(0.05, 100) == Catch::Approx(1.358 / 10.0).margin(2e-3));
  CHECK_THROWS_AS(ks_normal({}), InputError);
}

TEST_CASE("pearson and mean stderr", "[stats]") {
  CHECK(pearson({1, 2, 3}, {2, 4, 6}) == Catch::Approx(1.0));
  CHECK(pearson({1, 2, 3}, {3, 2, 1}) == Catch::Approx(-1.0));
  const auto m = mean_stderr({1, 2, 3, 4});
  CHECK(m.mean == Catch::Approx(2.5));
  // sample sd sqrt(5/3), divided by 2
  CHECK(m.stderr_ == Catch::Approx(std::sqrt(5.0 / 3.0) / 2.0));
}

TEST_CASE("energy distance", "[stats]") {
  Mat x(2, 1), y(2, 1);
  x << 0, 1;
  y << 0, 1;
  CHECK(energy_distance(x, y) == Catch::Approx(0.0).margin(1e-15));
  Mat p(1, 1), q(1, 1);
  p << 0.0;
  q << 3.0;
  CHECK(energy_distance(p, q) == Catch::Approx(6.0));
  Rng rng(2);
  const Mat a = standard_normal_matrix(400, 2, rng);
  Mat b = standard_normal_matrix(400, 2, rng);
  b.col(0).array() += 1.0;
  CHECK(energy_distance(a, b) > energy_distance(a, standard_normal_matrix(400, 2, rng)));
}
