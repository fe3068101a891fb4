#include "canonflow/theorylab.hpp"
#include "test_helpers.hpp"

#include <catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

using namespace canonflow;
using namespace canonflow::theory;

TEST_CASE("check semantics", "[theorylab]") {
  Check c;
  c.kind = "equality";
  c.estimate = 1.0;
  c.reference = 1.2;
  c.tolerance = 0.25;
  c.evaluate();
  CHECK(c.pass);
  c.tolerance = 0.1;
  c.evaluate();
  CHECK_FALSE(c.pass);
  c.kind = "upper_bound";
  c.evaluate();
  CHECK(c.pass);
  c.kind = "lower_bound";
  c.evaluate();
  CHECK_FALSE(c.pass);
  c.kind = "flag";
  c.estimate = 2.0;
  c.evaluate();
  CHECK(c.pass);
  c.estimate = std::nan("");
  c.evaluate();
  CHECK_FALSE(c.pass);
  TheoryReport r;
  c.kind = "equality";
  c.estimate = 0.0;
  c.reference = 0.0;
  r.add(c);
  CHECK(r.all_pass());
  const nlohmann::json j = r;
  CHECK(j.at("checks").size() == 1);
}

TEST_CASE("closed-form conditional variance", "[theorylab]") {
  const Mat one = Mat::Identity(1, 1);
  CHECK(gaussian_condvar(one, one, 0.5)(0, 0) == 2.0);
  // scalar oracle s0 s1 / ((1-t)^2 s0 + t^2 s1)
  Mat s0(1, 1), s1(1, 1);
  s0 << 3.0;
  s1 << 0.5;
  const double t = 0.3;
  CHECK(gaussian_condvar(s0, s1, t)(0, 0) == Catch::Approx(3.0 * 0.5 / (0.49 * 3.0 + 0.09 * 0.5)));
  CHECK(gaussian_condvar(Mat::Zero(2, 2), Mat::Identity(2, 2), 0.4).norm() == 0.0);
  CHECK_THROWS_AS(gaussian_condvar(one, one, 0.0), InputError);
}

TEST_CASE("mixture score is odd under sign flip", "[theorylab]") {
  const auto sys = MixtureSystem::signflip();
  CHECK(mixture_score(sys, Vec::Zero(1))(0) == Catch::Approx(0.0).margin(1e-15));
  Vec z(1);
  z << 0.7;
  CHECK(mixture_score(sys, z)(0) == Catch::Approx(-mixture_score(sys, -z)(0)));
  const Vec p = posterior(sys, z);
  CHECK(p.sum() == Catch::Approx(1.0));
}

TEST_CASE("score agrees with a difference of log densities", "[theorylab]") {
  const auto sys = MixtureSystem::c4();
  Vec z(2);
  z << 0.4, -1.1;
  const Vec s = mixture_score(sys, z);
  const double h = 1e-6;
  for (int i = 0; i < 2; ++i) {
    Vec a = z, b = z;
    a(i) += h;
    b(i) -= h;
    CHECK(s(i) == Catch::Approx((mixture_log_density(sys, a) - mixture_log_density(sys, b)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("knn estimator on a linear gaussian model", "[theorylab]") {
  // U = 2 Z + N(0, 0.25): E Var(U | Z) = 0.25
  Rng rng(1);
  const int n = 20000;
  Mat z(n, 1), u(n, 1);
  for (int i = 0; i < n; ++i) {
    z(i, 0) = standard_normal(rng);
    u(i, 0) = 2.0 * z(i, 0) + 0.5 * standard_normal(rng);
  }
  const auto e = knn_conditional_variance(z, u, 0, rng, 100);
  CHECK(std::abs(e.mean - 0.25) < 4.0 * e.stderr_ + 0.005);
  CHECK(e.stderr_ > 0.0);
  // 2-D input path
  Mat z2(n, 2), u2(n, 1);
  for (int i = 0; i < n; ++i) {
    z2(i, 0) = standard_normal(rng);
    z2(i, 1) = standard_normal(rng);
    u2(i, 0) = z2(i, 0) - z2(i, 1) + 0.5 * standard_normal(rng);
  }
  const auto e2 = knn_conditional_variance(z2, u2, 0, rng, 100);
  CHECK(std::abs(e2.mean - 0.25) < 4.0 * e2.stderr_ + 0.01);
}

TEST_CASE("lift simulation shares one group element", "[theorylab]") {
  Rng rng(2);
  const auto sys = MixtureSystem::c4();
  const auto d = simulate(sys, 100, rng);
  for (int i = 0; i < 100; ++i) {
    const int g = d.g[static_cast<std::size_t>(i)];
    CHECK(testutil::max_abs(symgroup::finite_act(sys.group, g, d.s0.row(i)) - d.z0.row(i)) < 1e-12);
    CHECK(testutil::max_abs(symgroup::finite_act(sys.group, g, d.s1.row(i)) - d.z1.row(i)) < 1e-12);
    CHECK(testutil::max_abs(d.u.row(i) - (d.z1.row(i) - d.z0.row(i))) < 1e-12);
  }
}

TEST_CASE("small sign-flip suite passes", "[theorylab]") {
  SuiteOptions o;
  o.system = "signflip";
  o.n = 20000;
  o.seed = 4;
  const auto rep = run_suite(o);
  CHECK(rep.checks.size() > 3);
  for (const auto& c : rep.checks) {
    INFO(c.name << " estimate " << c.estimate << " reference " << c.reference);
    CHECK(c.pass);
  }
  o.inject_reference_offset = 10.0;
  CHECK_FALSE(run_suite(o).all_pass());
  o.system = "bogus";
  CHECK_THROWS_AS(run_suite(o), InputError);
}
