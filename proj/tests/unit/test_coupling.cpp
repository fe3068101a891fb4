#include "canonflow/coupling.hpp"
#include "test_helpers.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

using namespace canonflow;
using namespace canonflow::coupling;

namespace {

double assignment_cost(const Mat& c, const std::vector<int>& a) {
  double s = 0.0;
  for (int i = 0; i < static_cast<int>(a.size()); ++i) s += c(i, a[static_cast<std::size_t>(i)]);
  return s;
}

double brute_force(const Mat& c) {
  std::vector<int> p(static_cast<std::size_t>(c.rows()));
  std::iota(p.begin(), p.end(), 0);
  double best = 1e300;
  do best = std::min(best, assignment_cost(c, p));
  while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace

TEST_CASE("hungarian matches brute force", "[coupling]") {
  Rng rng(1);
  for (int n = 1; n <= 6; ++n) {
    for (int k = 0; k < 10; ++k) {
      Mat c = Mat::NullaryExpr(n, n, [&] { return uniform01(rng); });
      if (k == 0) c.setConstant(1.0);  // all ties
      const auto a = hungarian(c);
      std::vector<int> sorted = a;
      std::sort(sorted.begin(), sorted.end());
      for (int i = 0; i < n; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
      CHECK(assignment_cost(c, a) == Catch::Approx(brute_force(c)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(hungarian(Mat::Zero(2, 3)), InputError);
}

TEST_CASE("kabsch recovers a planted rotation", "[coupling]") {
  Rng rng(2);
  MatX3 target = standard_normal_matrix(10, 3, rng);
  target.rowwise() -= target.colwise().mean();
  const Mat3 q = testutil::random_rotation(rng);
  const MatX3 source = target * q.transpose();
  const auto r = kabsch_align(target, source);
  CHECK(testutil::max_abs(r.rotation * q - Mat3::Identity()) < 1e-10);
  CHECK(r.rmsd_after < 1e-10);
  CHECK(r.rmsd_before > 0.1);
  CHECK(r.rotation.determinant() == Catch::Approx(1.0));
}

TEST_CASE("kabsch never reflects", "[coupling]") {
  Rng rng(3);
  MatX3 target = standard_normal_matrix(8, 3, rng);
  target.rowwise() -= target.colwise().mean();
  MatX3 mirrored = target;
  mirrored.col(2) *= -1.0;
  const auto r = kabsch_align(target, mirrored);
  CHECK(r.rotation.determinant() == Catch::Approx(1.0));
}

TEST_CASE("exact OT pairs are a bijection of minimum cost", "[coupling]") {
  Rng rng(4);
  const Mat data = standard_normal_matrix(6, 2, rng);
  const Mat noise = standard_normal_matrix(6, 2, rng);
  const auto plan = ot_pair(data, noise, Mode::kOtExact);
  const auto nf = plan.noise_for();
  CHECK(assignment_cost(squared_cost(data, noise), nf) == Catch::Approx(brute_force(squared_cost(data, noise))));
  const auto prod = product_pair(6);
  for (int i = 0; i < 6; ++i) CHECK(prod.noise_for()[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("sinkhorn plan has uniform marginals", "[coupling]") {
  Rng rng(5);
  const Mat c = squared_cost(standard_normal_matrix(20, 2, rng), standard_normal_matrix(20, 2, rng));
  const Mat p = sinkhorn_plan(c, 0.1, 2000);
  CHECK(p.sum() == Catch::Approx(1.0).epsilon(1e-6));
  CHECK(testutil::max_abs(p.rowwise().sum() - Vec::Constant(20, 1.0 / 20)) < 1e-4);
  CHECK(testutil::max_abs(p.colwise().sum().transpose() - Vec::Constant(20, 1.0 / 20)) < 1e-4);
  auto r = round_plan(p);
  std::sort(r.begin(), r.end());
  for (int i = 0; i < 20; ++i) CHECK(r[static_cast<std::size_t>(i)] == i);
  const auto plan = ot_pair(standard_normal_matrix(10, 2, rng), standard_normal_matrix(10, 2, rng), Mode::kOtSinkhorn);
  CHECK(plan.pairs.size() == 10);
}

TEST_CASE("anneal schedule decreases to zero", "[coupling]") {
  AnnealSchedule s{10};
  CHECK(ot_probability(0, s) == Catch::Approx(1.0));
  double prev = 2.0;
  for (int e = 0; e < 10; ++e) {
    const double p = ot_probability(e, s);
    CHECK(p <= prev);
    CHECK(p >= 0.0);
    prev = p;
  }
  CHECK(ot_probability(10, s) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("group aligned lift uses one element per pair", "[coupling]") {
  Rng rng(6);
  const auto c4 = symgroup::FiniteGroupSpec::cyclic2d(4);
  Mat z0 = Mat::Constant(200, 2, 1.0);
  z0.col(1).setZero();
  Mat z1 = z0;
  const Mat z0_in = z0;
  std::vector<int> chosen;
  group_aligned_lift(c4, z0, z1, rng, &chosen);
  for (int i = 0; i < 200; ++i) {
    CHECK(testutil::max_abs(z0.row(i) - z1.row(i)) < 1e-12);
    const Mat expect = symgroup::finite_act(c4, chosen[static_cast<std::size_t>(i)], z0_in.row(i));
    CHECK(testutil::max_abs(z0.row(i) - expect) < 1e-12);
  }
  Mat a = standard_normal_matrix(50, 3, rng), b = a;
  const Mat a_in = a;
  group_aligned_lift_so(a, b, rng);
  CHECK(testutil::max_abs(a - b) < 1e-12);
  CHECK((a.rowwise().norm() - a_in.rowwise().norm()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("molecule OT aligns and matches", "[coupling]") {
  Rng rng(7);
  MatX3 data = standard_normal_matrix(6, 3, rng);
  data.rowwise() -= data.colwise().mean();
  const Mat3 q = testutil::random_rotation(rng);
  // same labels, rotated: alignment alone recovers the data
  const MatX3 out = molecule_ot(data, data * q.transpose());
  CHECK(rmsd(out, data) < 1e-8);
  // shuffled and shifted: rows come back as a permutation matching each data row to its nearest copy
  MatX3 shuffled = data.colwise().reverse();
  const MatX3 out2 = molecule_ot(data, shuffled);
  CHECK(rmsd(out2, data) <= rmsd(shuffled, data) + 1e-12);
  std::vector<double> a, b;
  for (int i = 0; i < 6; ++i) {
    a.push_back(data.row(i).norm());
    b.push_back(out2.row(i).norm());
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  for (int i = 0; i < 6; ++i) CHECK(a[static_cast<std::size_t>(i)] == Catch::Approx(b[static_cast<std::size_t>(i)]));
}
