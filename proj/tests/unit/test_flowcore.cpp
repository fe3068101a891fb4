#include "canonflow/canonicalizer.hpp"
#include "canonflow/flowcore.hpp"
#include "test_helpers.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>

using namespace canonflow;
using namespace canonflow::flow;

namespace {

TrainConfig tiny_point_cfg(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.steps_per_epoch = 10;
  cfg.batch_size = 32;
  cfg.lr = 1e-3;
  cfg.seed = seed;
  cfg.eval_samples = 100;
  cfg.eval_steps = 4;
  return cfg;
}

PointMlpConfig tiny_mlp() {
  PointMlpConfig a;
  a.hidden = 16;
  a.n_layers = 2;
  return a;
}

}  // namespace

TEST_CASE("time sampling", "[flowcore]") {
  Rng rng(1);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double t = sample_time(TimeDist::kBeta21, rng);
    REQUIRE(t >= 0.0);
    REQUIRE(t <= 1.0);
    s += t;
    s2 += t * t;
  }
  // 1 - t ~ Beta(2, 1): E t = 1/3, E t^2 = 1/6
  CHECK(s / n == Catch::Approx(1.0 / 3.0).margin(4e-3));
  CHECK(s2 / n == Catch::Approx(1.0 / 6.0).margin(4e-3));
  double u = 0.0;
  for (int i = 0; i < n; ++i) u += sample_time(TimeDist::kUniform, rng);
  CHECK(u / n == Catch::Approx(0.5).margin(4e-3));
  CHECK(parse_time_dist("beta21") == TimeDist::kBeta21);
  CHECK_THROWS_AS(parse_time_dist("gamma"), InputError);
}

TEST_CASE("rank noise vanishes at the data end", "[flowcore]") {
  Rng rng(2);
  CHECK(rank_noise(0.3, 1.0, 0.05, rng) == 0.3);
  double s2 = 0.0;
  for (int i = 0; i < 20000; ++i) s2 += std::pow(rank_noise(0.0, 0.0, 0.05, rng), 2);
  CHECK(std::sqrt(s2 / 20000) == Catch::Approx(0.05).epsilon(0.03));
}

TEST_CASE("rank conventions", "[flowcore]") {
  CHECK(index_ranks(4) == std::vector<double>{0.0, 0.25, 0.5, 0.75});
  const auto r = normalized_ranks(3);
  CHECK(r[2] == Catch::Approx(1.0));
  CHECK(normalized_ranks(1) == std::vector<double>{0.0});
}

TEST_CASE("point interpolation", "[flowcore]") {
  Rng rng(3);
  const Mat z0 = standard_normal_matrix(5, 2, rng), z1 = standard_normal_matrix(5, 2, rng);
  Vec t(5);
  t << 0.0, 0.25, 0.5, 0.75, 1.0;
  const auto p = interpolate_points(z0, z1, t, 0.0, rng);
  CHECK(testutil::max_abs(p.z_t.row(0) - z0.row(0)) < 1e-15);
  CHECK(testutil::max_abs(p.z_t.row(4) - z1.row(4)) < 1e-15);
  CHECK(testutil::max_abs(p.z_t.row(2) - 0.5 * (z0.row(2) + z1.row(2))) < 1e-15);
  CHECK(testutil::max_abs(p.target - (z1 - z0)) < 1e-15);
  CHECK_THROWS_AS(interpolate_points(z0, z1, Vec::Constant(5, 1.5), 0.0, rng), InputError);
}

TEST_CASE("graph interpolation keeps data at t = 0", "[flowcore]") {
  Rng rng(4);
  const auto mols = testutil::example_molecules();
  const auto vocab = Vocabulary::from_data(mols);
  const auto g = encode(mols[7], vocab);
  auto noise = g;
  noise.coords = standard_normal_matrix(g.size(), 3, rng);
  for (auto& v : noise.types) v = 0;
  const auto s0 = interpolate(g, noise, 0.0, 0.0, rng);
  CHECK(s0.z_t.types == g.types);
  CHECK((s0.z_t.bonds - g.bonds).cwiseAbs().maxCoeff() == 0);
  const auto s1 = interpolate(g, noise, 1.0, 0.0, rng);
  CHECK(s1.z_t.types == noise.types);
  CHECK(testutil::max_abs(s1.z_t.coords - noise.coords) < 1e-15);
  const auto back = decode(g, vocab);
  CHECK(back.atom_types == mols[7].atom_types);
}

TEST_CASE("vocabulary rejects unknown classes", "[flowcore]") {
  const auto vocab = Vocabulary::from_data(testutil::example_molecules());
  CHECK(vocab.type_index(6) >= 0);
  CHECK_THROWS_AS(vocab.type_index(92), InputError);
}

TEST_CASE("point canonicalization lands in the wedge", "[flowcore]") {
  Rng rng(5);
  const auto c4 = group_by_name("c4");
  const Mat x = c4_blobs(500, rng);
  const Mat c = canonicalize_points(x, c4);
  for (int i = 0; i < c.rows(); ++i) CHECK(c(i, 0) >= std::abs(c(i, 1)) - 1e-12);
  CHECK(testutil::max_abs(canonicalize_points(c, c4) - c) < 1e-12);
  CHECK((x.rowwise().norm() - c.rowwise().norm()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("point training is deterministic per seed", "[flowcore]") {
  Rng r1(6), r2(6);
  const auto task1 = c4_blob_task(true, r1, 400, 100, 100);
  const auto task2 = c4_blob_task(true, r2, 400, 100, 100);
  const auto a = train_points(task1, tiny_point_cfg(9), tiny_mlp());
  const auto b = train_points(task2, tiny_point_cfg(9), tiny_mlp());
  CHECK(checkpoint_json(a.model).dump() == checkpoint_json(b.model).dump());
  REQUIRE(a.trace.size() == 2);
  CHECK(a.trace[1].loss == b.trace[1].loss);
  CHECK(std::isfinite(a.trace[1].val_loss));
  const auto c = train_points(task1, tiny_point_cfg(10), tiny_mlp());
  CHECK(checkpoint_json(a.model).dump() != checkpoint_json(c.model).dump());
}

TEST_CASE("checkpoint round trip preserves the velocity field", "[flowcore]") {
  Rng rng(7);
  const auto task = c4_blob_task(false, rng, 200, 50, 50);
  const auto res = train_points(task, tiny_point_cfg(1), tiny_mlp());
  const auto path = (std::filesystem::temp_directory_path() / "canonflow_unit_ckpt.json").string();
  save_checkpoint(res.model, path);
  const auto back = load_checkpoint(path);
  std::filesystem::remove(path);
  const Mat z = standard_normal_matrix(10, 2, rng);
  const Mat v1 = point_velocity(res.model, res.model.inference_params(), z, 0.3);
  const Mat v2 = point_velocity(back, back.inference_params(), z, 0.3);
  CHECK(testutil::max_abs(v1 - v2) < 1e-12);
  CHECK(back.point_group == res.model.point_group);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.json"), Error);
}

TEST_CASE("graph training runs and lowers nothing to NaN", "[flowcore]") {
  std::vector<molecule::MoleculeState> canon;
  for (const auto& m : testutil::example_molecules()) {
    canon.push_back(canon::canonicalize(m, canon::Group::kPermSO3).representative);
  }
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 3;
  CanonLiteConfig arch;
  arch.d_model = 8;
  arch.d_rank = 4;
  arch.n_layers = 1;
  arch.n_sets = 2;
  arch.d_pe = 4;
  const auto res = train_graphs(canon, canon, cfg, arch, 4);
  REQUIRE(res.trace.size() == 2);
  for (const auto& r : res.trace) {
    CHECK(std::isfinite(r.loss));
    CHECK(std::isfinite(r.val_loss));
  }
  CHECK(res.model.kind == ModelKind::kCanonLite);
  const auto again = checkpoint_from_json(checkpoint_json(res.model));
  CHECK(again.vocab.atomic_numbers == res.model.vocab.atomic_numbers);
  CHECK(again.graph_priors.sizes == res.model.graph_priors.sizes);
}
