#include "canonflow/canonicalizer.hpp"
#include "test_helpers.hpp"

#include <catch_amalgamated.hpp>

#include <numeric>

using namespace canonflow;
using namespace canonflow::canon;

namespace {

MoleculeState from_points(const MatX3& x, int z = 6) {
  auto m = MoleculeState::from_coords(x, std::vector<int>(static_cast<std::size_t>(x.rows()), z));
  m.bonds = molecule::infer_single_bonds(m, 0.5);
  return m;
}

// first non-degenerate random molecule of size n
MoleculeState generic(int n, Rng& rng) {
  for (;;) {
    auto m = testutil::random_molecule(n, rng);
    if (!canonicalize(m, Group::kPermSO3).degenerate) return m;
  }
}

}  // namespace

TEST_CASE("gauge reproduces the input", "[canonicalizer]") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = generic(6 + trial, rng);
    for (auto group : {Group::kPerm, Group::kPermSO3}) {
      const auto r = canonicalize(m, group);
      const auto back = symgroup::act(r.gauge, r.representative);
      CHECK(back.atom_types == m.atom_types);
      CHECK(testutil::max_abs(back.coords - m.coords) < 1e-9);
      CHECK((back.bonds - m.bonds).cwiseAbs().maxCoeff() == 0);
    }
  }
}

TEST_CASE("representative is invariant and idempotent", "[canonicalizer]") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5 + trial;
    const auto m = generic(n, rng);
    auto g = symgroup::haar_sample(n, rng);
    g.trans = Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    const auto a = canonicalize(m, Group::kPermSO3);
    const auto b = canonicalize(symgroup::act(g, m), Group::kPermSO3);
    CHECK(a.representative.atom_types == b.representative.atom_types);
    CHECK(testutil::max_abs(a.representative.coords - b.representative.coords) < 1e-8);
    const auto c = canonicalize(a.representative, Group::kPermSO3);
    CHECK(testutil::max_abs(c.representative.coords - a.representative.coords) < 1e-8);
  }
}

TEST_CASE("ranks are i/N and coordinates centred", "[canonicalizer]") {
  Rng rng(3);
  const auto m = generic(9, rng);
  const auto r = canonicalize(m);
  for (int i = 0; i < 9; ++i) CHECK(r.ranks[static_cast<std::size_t>(i)] == Catch::Approx(i / 9.0));
  CHECK(testutil::max_abs(r.representative.coords.colwise().mean()) < 1e-12);
  // ascending Fiedler values
  for (int i = 1; i < 9; ++i) CHECK(r.fiedler(i) >= r.fiedler(i - 1));
}

TEST_CASE("fiedler vector solves the random-walk eigenproblem", "[canonicalizer]") {
  Rng rng(4);
  const auto m = generic(10, rng);
  const auto f = fiedler_vector(m);
  // oracle: build D^{-1}(D - W) directly and check L u = lambda u
  const int n = m.size();
  Mat w = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j) w(i, j) = std::exp(-(m.coords.row(i) - m.coords.row(j)).squaredNorm() / (2.0 * f.sigma2));
    }
  }
  const Vec d = w.rowwise().sum();
  const Mat l = d.cwiseInverse().asDiagonal() * (Mat(d.asDiagonal()) - w);
  CHECK(testutil::max_abs(l * f.u2 - f.lambda2 * f.u2) < 1e-8);
  CHECK(f.u2.norm() == Catch::Approx(1.0));
  CHECK(f.lambda2 > 0.0);
  CHECK(f.lambda3 >= f.lambda2);
}

TEST_CASE("exactly symmetric inputs are flagged degenerate", "[canonicalizer]") {
  MatX3 square(4, 3);
  square << 0, 0, 0, 1.5, 0, 0, 1.5, 1.5, 0, 0, 1.5, 0;
  MatX3 tetra(4, 3);
  tetra << 1, 1, 1, -1, -1, 1, -1, 1, -1, 1, -1, -1;
  MatX3 chain(5, 3);
  for (int i = 0; i < 5; ++i) chain.row(i) << 1.5 * i, 0, 0;
  for (const auto& x : {square, tetra, chain}) {
    CHECK(canonicalize(from_points(x), Group::kPermSO3).degenerate);
  }
}

TEST_CASE("two atoms cannot fix a rotation", "[canonicalizer]") {
  MatX3 x(2, 3);
  x << 0, 0, 0, 1.1, 0.2, 0.0;
  auto m = MoleculeState::from_coords(x, {6, 8});
  const auto r = canonicalize(m, Group::kPermSO3);
  CHECK(r.degenerate);
  CHECK(testutil::max_abs(r.gauge.rot - Mat3::Identity()) < 1e-12);
}

TEST_CASE("alternative orderings", "[canonicalizer]") {
  MatX3 x = MatX3::Zero(4, 3);
  for (int i = 0; i < 4; ++i) x(i, 0) = 1.2 * i;
  MatI a = MatI::Zero(4, 4);
  a(0, 1) = a(1, 0) = a(1, 2) = a(2, 1) = a(2, 3) = a(3, 2) = 1;
  MoleculeState m(x, {1, 6, 8, 7}, {0, 0, 0, 0}, a);
  CHECK(order_atomic(m) == std::vector<int>{2, 3, 1, 0});
  // multihop weights: ends have fewer 1-hop neighbours
  const auto mh = order_multihop(m, 3);
  CHECK(mh.size() == 4);
  CHECK((mh[0] == 3 || mh[0] == 0));
  const auto r = canonicalize(m, Group::kPerm, Ordering::kAtomic);
  CHECK(r.representative.atom_types == std::vector<int>{8, 7, 6, 1});
}

TEST_CASE("empty and invalid inputs", "[canonicalizer]") {
  MoleculeState empty;
  CHECK_THROWS_AS(canonicalize(empty), InputError);
}
