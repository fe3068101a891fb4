#include "canonflow/tape.hpp"
#include "test_helpers.hpp"

#include <catch_amalgamated.hpp>

#include <functional>

using namespace canonflow;
using namespace canonflow::tape;

namespace {

// Max relative error of the tape gradient against central differences.
double grad_check(ParamStore& ps, const std::function<Var(Tape&)>& f) {
  ps.zero_grad();
  {
    Tape tp(&ps);
    tp.backward(f(tp));
  }
  double worst = 0.0;
  const double h = 1e-6;
  for (auto& p : ps) {
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const double orig = p.value(k);
      p.value(k) = orig + h;
      double up, dn;
      {
        Tape tp(&ps);
        up = tp.scalar(f(tp));
      }
      p.value(k) = orig - h;
      {
        Tape tp(&ps);
        dn = tp.scalar(f(tp));
      }
      p.value(k) = orig;
      const double fd = (up - dn) / (2 * h);
      worst = std::max(worst, std::abs(fd - p.grad(k)) / std::max(1e-6, std::abs(fd) + std::abs(p.grad(k))));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("elementwise and matrix ops differentiate", "[tape]") {
  Rng rng(1);
  ParamStore ps;
  ps.add("a", standard_normal_matrix(4, 3, rng));
  ps.add("w", standard_normal_matrix(3, 5, rng));
  ps.add("b", standard_normal_matrix(1, 5, rng));
  ps.add("c", standard_normal_matrix(4, 1, rng));
  const auto f = [](Tape& tp) {
    Var h = tp.add_row(tp.matmul(tp.param("a"), tp.param("w")), tp.param("b"));
    Var s = tp.concat_cols({tp.silu(h), tp.sigmoid(h), tp.tanh(h), tp.softsign(h)});
    s = tp.mul_col(s, tp.param("c"));
    s = tp.add(tp.slice_cols(s, 2, 7), tp.scale(tp.slice_cols(s, 10, 7), 0.5));
    s = tp.mul(s, tp.add_scalar(tp.square(s), 1.0));
    return tp.mean(tp.sub(s, tp.scale(s, 0.25)));
  };
  CHECK(grad_check(ps, f) < 1e-6);
}

TEST_CASE("gather, segment mean, softmax CE and minmax differentiate", "[tape]") {
  Rng rng(2);
  ParamStore ps;
  ps.add("x", standard_normal_matrix(5, 4, rng));
  ps.add("col", standard_normal_matrix(6, 1, rng));
  const auto f = [](Tape& tp) {
    Var x = tp.param("x");
    Var g = tp.gather_rows(x, {0, 2, 2, 4, 1, 3});
    Var seg = tp.segment_mean(g, {0, 0, 1, 1, 1, 2}, 4);
    Var ce = tp.softmax_ce(g, {0, 1, 2, 3, 0, 1}, {1, 0.5, 2, 1, 1, 0}, 3.0);
    Var mm = tp.minmax(tp.param("col"));
    return tp.add(tp.add(ce, tp.sum(tp.square(seg))), tp.sum(tp.square(mm)));
  };
  CHECK(grad_check(ps, f) < 1e-6);
}

TEST_CASE("softmax CE value", "[tape]") {
  Tape tp;
  Mat l(1, 3);
  l << 1.0, 2.0, 3.0;
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(tp.scalar(tp.softmax_ce(tp.constant(l), {0}, {}, 1.0)) == Catch::Approx(lse - 1.0));
}

TEST_CASE("shape errors throw", "[tape]") {
  Tape tp;
  const Var a = tp.constant(Mat::Zero(2, 3));
  const Var b = tp.constant(Mat::Zero(2, 3));
  CHECK_THROWS_AS(tp.matmul(a, b), InputError);
  CHECK_THROWS_AS(tp.backward(a), InputError);
}

TEST_CASE("adam moves against the gradient and clips", "[tape]") {
  ParamStore ps;
  ps.add("x", Mat::Constant(1, 1, 3.0));
  Adam opt({0.1, 0.9, 0.999, 1e-8, 1.0, 0});
  for (int i = 0; i < 200; ++i) {
    ps.zero_grad();
    Tape tp(&ps);
    tp.backward(tp.sum(tp.square(tp.param("x"))));
    opt.step(ps);
  }
  CHECK(std::abs(ps.at("x").value(0, 0)) < 0.2);
  ps.at("x").grad.setConstant(100.0);
  ps.scale_grad(0.5);
  CHECK(ps.grad_norm() == Catch::Approx(50.0));
}

TEST_CASE("warmup ramps the learning rate", "[tape]") {
  ParamStore ps;
  ps.add("x", Mat::Zero(1, 1));
  Adam opt({1.0, 0.9, 0.999, 1e-8, 0.0, 10});
  opt.step(ps);
  CHECK(opt.current_lr() < 1.0);
  for (int i = 0; i < 20; ++i) opt.step(ps);
  CHECK(opt.current_lr() == Catch::Approx(1.0));
}

TEST_CASE("ema tracks values", "[tape]") {
  ParamStore ps;
  ps.add("x", Mat::Zero(1, 1));
  Ema ema(ps, 0.5);
  ps.at("x").value(0, 0) = 1.0;
  ema.update(ps);
  CHECK(ema.shadow()[0](0, 0) == Catch::Approx(0.5));
  CHECK(ema.apply(ps).at("x").value(0, 0) == Catch::Approx(0.5));
}

TEST_CASE("glorot bounds", "[tape]") {
  Rng rng(3);
  const Mat w = glorot(30, 20, rng);
  CHECK(w.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 50.0));
}
