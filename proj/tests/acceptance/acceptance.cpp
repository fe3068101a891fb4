// Acceptance runner: `canonflow_acceptance <k>` evaluates criterion k (1..10),
// `canonflow_acceptance` evaluates all. One PASS/FAIL line per criterion.

#include "canonflow/canonicalizer.hpp"
#include "canonflow/canonlite.hpp"
#include "canonflow/coupling.hpp"
#include "canonflow/flowcore.hpp"
#include "canonflow/sampler.hpp"
#include "canonflow/stats.hpp"
#include "canonflow/symgroup.hpp"
#include "canonflow/theorylab.hpp"
#include "test_helpers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace canonflow;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------- oracles

// log (1/M) sum_m N(G_m^T z; mean, cov), evaluated naively.
double naive_log_mixture(const symgroup::FiniteGroupSpec& g, const Vec& mean, const Mat& cov, const Vec& z) {
  const int d = static_cast<int>(mean.size());
  const Mat inv = cov.inverse();
  const double norm = std::pow(2.0 * M_PI, -0.5 * d) / std::sqrt(cov.determinant());
  double s = 0.0;
  for (const auto& gm : g.elements) {
    const Vec r = gm.transpose() * z - mean;
    s += norm * std::exp(-0.5 * r.dot(inv * r));
  }
  return std::log(s / g.order());
}

// Cov(Z1 - Z0 | (1-t) Z0 + t Z1) for independent Gaussians, by
// conditioning the joint Gaussian of (Delta, Y).
Mat joint_condvar(const Mat& s0, const Mat& s1, double t) {
  const Mat c_dd = s0 + s1;
  const Mat c_yy = (1 - t) * (1 - t) * s0 + t * t * s1;
  const Mat c_dy = t * s1 - (1 - t) * s0;
  return c_dd - c_dy * c_yy.inverse() * c_dy.transpose();
}

double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

double energy_distance_naive(const Mat& x, const Mat& y) {
  auto mean_dist = [](const Mat& a, const Mat& b) {
    double s = 0.0;
    for (int i = 0; i < a.rows(); ++i)
      for (int j = 0; j < b.rows(); ++j) s += (a.row(i) - b.row(j)).norm();
    return s / (static_cast<double>(a.rows()) * b.rows());
  };
  return 2.0 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y);
}

Mat random_spd(int d, Rng& rng) {
  const Mat a = standard_normal_matrix(d, d, rng);
  return a * a.transpose() + 0.3 * Mat::Identity(d, d);
}

// ---------------------------------------------------------------- criteria

Outcome canonicalizer_invariance() {
  Timer timer;
  Rng rng(20240101);
  std::uniform_int_distribution<int> size(5, 40);
  int n_ok = 0, order_fail = 0, skipped = 0;
  double worst_rmsd = 0.0, worst_idem = 0.0, worst_gauge = 0.0;
  while (n_ok < 1000) {
    const int n = size(rng);
    const auto m = testutil::random_molecule(n, rng);
    const auto a = canon::canonicalize(m, canon::Group::kPermSO3);
    if (a.degenerate) {
      ++skipped;
      continue;
    }
    symgroup::GroupElement g = symgroup::GroupElement::identity(n);
    std::shuffle(g.perm.begin(), g.perm.end(), rng);
    g.rot = testutil::random_rotation(rng);
    g.trans = Vec3(5 * standard_normal(rng), 5 * standard_normal(rng), 5 * standard_normal(rng));
    const auto gm = symgroup::act(g, m);
    const auto b = canon::canonicalize(gm, canon::Group::kPermSO3);
    // source atom of every canonical slot, expressed in the original labels
    const auto order_a = symgroup::inverse_permutation(a.gauge.perm);
    const auto order_b = symgroup::inverse_permutation(b.gauge.perm);
    bool same = !b.degenerate;
    for (int j = 0; j < n; ++j) {
      same = same && g.perm[static_cast<std::size_t>(order_b[static_cast<std::size_t>(j)])] ==
                         order_a[static_cast<std::size_t>(j)];
    }
    if (!same) ++order_fail;
    worst_rmsd = std::max(worst_rmsd, coupling::rmsd(a.representative.coords, b.representative.coords));
    const auto again = canon::canonicalize(a.representative, canon::Group::kPermSO3);
    worst_idem = std::max(worst_idem, testutil::max_abs(again.representative.coords - a.representative.coords));
    for (const auto* r : {&a, &b}) {
      const auto& src = r == &a ? m : gm;
      const auto back = symgroup::act(r->gauge, r->representative);
      double e = testutil::max_abs(back.coords - src.coords);
      if (back.atom_types != src.atom_types || (back.bonds - src.bonds).cwiseAbs().maxCoeff() != 0) e = 1e300;
      worst_gauge = std::max(worst_gauge, e);
    }
    ++n_ok;
  }
  const double secs = timer.seconds();
  const bool pass = order_fail == 0 && worst_rmsd <= 1e-8 && worst_idem <= 1e-8 && worst_gauge <= 1e-8 && secs < 60;
  return {pass, fmt("order mismatches %d/1000, max rmsd %.2e, idempotence %.2e, gauge %.2e, degenerate skipped %d, %.1fs",
                    order_fail, worst_rmsd, worst_idem, worst_gauge, skipped, secs)};
}

Outcome mixture_score_oracle() {
  const theory::MixtureSystem systems[] = {theory::MixtureSystem::signflip(), theory::MixtureSystem::c4(),
                                           theory::MixtureSystem::s3()};
  Rng rng(7);
  double worst = 0.0;
  for (const auto& sys : systems) {
    const Vec mean = sys.mean_t();
    const Mat cov = sys.cov_t();
    const Eigen::LLT<Mat> llt(cov);
    std::uniform_int_distribution<int> pick(0, sys.group.order() - 1);
    for (int k = 0; k < 100; ++k) {
      const Vec y = mean + llt.matrixL() * standard_normal_matrix(sys.dim(), 1, rng).col(0);
      const Vec z = sys.group.elements[static_cast<std::size_t>(pick(rng))] * y;
      const Vec an = theory::mixture_score(sys, z);
      const double h = 1e-5;
      for (int i = 0; i < sys.dim(); ++i) {
        Vec up = z, dn = z;
        up(i) += h;
        dn(i) -= h;
        const double fd = (naive_log_mixture(sys.group, mean, cov, up) - naive_log_mixture(sys.group, mean, cov, dn)) / (2 * h);
        worst = std::max(worst, std::abs(fd - an(i)) / std::max(1.0, std::abs(an(i))));
      }
    }
  }
  return {worst <= 1e-5, fmt("max relative error %.2e over 300 points (tolerance 1e-5)", worst)};
}

Outcome variance_decomposition() {
  Timer timer;
  std::ostringstream os;
  bool pass = true;

  const auto sf = theory::MixtureSystem::signflip();
  Rng rng(11);
  const auto dec = theory::variance_decomposition(sf, 1000000, rng);
  const double se_sum = std::sqrt(dec.lhs.stderr_ * dec.lhs.stderr_ + dec.within.stderr_ * dec.within.stderr_ +
                                  dec.ambiguity.stderr_ * dec.ambiguity.stderr_);
  const double gap = std::abs(dec.lhs.mean - (dec.within.mean + dec.ambiguity.mean));
  const bool ok_identity = gap <= 3 * se_sum;
  // the exact value is 0; the floor absorbs double rounding in the local fits
  const bool ok_within = dec.within.mean <= 3 * dec.within.stderr_ + 1e-12;
  // Z = 0.5 + 0.5 eps on the slice; Delta = 2 z - 2 there, 2 z + 2 on the flipped branch
  const auto amb = [](double z) {
    const double wp = phi(2 * z - 1), wm = phi(2 * z + 1);
    const double p = 0.5 * 2.0 * (wp + wm);
    return 16.0 * wp * wm / ((wp + wm) * (wp + wm)) * p;
  };
  const double quad = simpson(amb, -12.0, 12.0, 20000);
  const bool ok_quad = std::abs(dec.lhs.mean - quad) <= 3 * dec.lhs.stderr_;
  pass = ok_identity && ok_within && ok_quad;
  os << fmt("signflip lhs %.5f (se %.5f) vs within+amb %.5f [%s]; within %.2e (se %.1e) [%s]; quadrature %.5f [%s]",
            dec.lhs.mean, dec.lhs.stderr_, dec.within.mean + dec.ambiguity.mean, ok_identity ? "ok" : "bad",
            dec.within.mean, dec.within.stderr_, ok_within ? "ok" : "bad", quad, ok_quad ? "ok" : "bad");

  Rng sys_rng(12);
  int ineq_ok = 0;
  double worst_z = 1e300;
  for (int i = 0; i < 10; ++i) {
    const auto sys = theory::MixtureSystem::random_gaussian(i, sys_rng);
    Rng r(1000 + static_cast<std::uint64_t>(i));
    const int n = sys.dim() == 1 ? 1000000 : 40000;
    const auto d = theory::variance_decomposition(sys, n, r);
    const double within = joint_condvar(sys.sigma0, sys.sigma1, sys.t).trace();
    const double z = (d.lhs.mean - within) / d.lhs.stderr_;
    worst_z = std::min(worst_z, z);
    if (z >= -3.0) ++ineq_ok;
  }
  const double secs = timer.seconds();
  pass = pass && ineq_ok == 10 && secs < 300;
  os << fmt("; inequality %d/10 (min z %.2f); %.1fs", ineq_ok, worst_z, secs);
  return {pass, os.str()};
}

Outcome gaussian_closed_form() {
  const Mat one = Mat::Identity(1, 1);
  const double scalar = theory::gaussian_condvar(one, one, 0.5)(0, 0);
  bool pass = scalar == 2.0;
  std::ostringstream os;
  os << fmt("scalar %.17g", scalar);
  Rng rng(21);
  const int n = 1000000;
  for (int c = 0; c < 3; ++c) {
    const Mat s0 = random_spd(2, rng), s1 = random_spd(2, rng);
    const double t = 0.2 + 0.6 * uniform01(rng);
    const Mat cf = theory::gaussian_condvar(s0, s1, t);
    const Eigen::LLT<Mat> l0(s0), l1(s1);
    // regress Delta on [1, Y] by normal equations, then residual covariance
    Mat y(n, 3), dlt(n, 2);
    for (int i = 0; i < n; ++i) {
      const Vec a = l0.matrixL() * standard_normal_matrix(2, 1, rng).col(0);
      const Vec b = l1.matrixL() * standard_normal_matrix(2, 1, rng).col(0);
      y.row(i) << 1.0, ((1 - t) * a + t * b).transpose();
      dlt.row(i) = (b - a).transpose();
    }
    const Mat beta = (y.transpose() * y).ldlt().solve(y.transpose() * dlt);
    const Mat res = dlt - y * beta;
    double worst = 0.0;
    for (int p = 0; p < 2; ++p) {
      for (int q = p; q < 2; ++q) {
        const Eigen::ArrayXd prod = res.col(p).array() * res.col(q).array();
        const double m = prod.mean();
        const double se = std::sqrt((prod - m).square().sum() / (n - 1) / n);
        worst = std::max(worst, std::abs(m - cf(p, q)) / se);
      }
    }
    pass = pass && worst <= 3.0;
    os << fmt("; case %d max z %.2f", c, worst);
  }
  return {pass, os.str()};
}

Outcome lift_independence() {
  Timer timer;
  const int n = 100000;
  Rng rng(31);
  const auto iso = theory::lift_independence(Mat::Identity(2, 2), n, rng);
  Mat aniso_cov(2, 2);
  aniso_cov << 4.0, 0.0, 0.0, 0.25;
  const auto an = theory::lift_independence(aniso_cov, n, rng);
  const double bound = 4.0 / std::sqrt(static_cast<double>(n));
  const bool ok_corr = iso.max_abs_corr < bound && iso.max_abs_corr_sq < bound;
  const bool ok_ks = iso.ks_min_p > 1e-3;
  const bool flagged = std::abs(an.dependence_z) > 5.0;
  const double secs = timer.seconds();
  return {ok_corr && ok_ks && flagged && secs < 60,
          fmt("isotropic |corr| %.4f, |corr sq| %.4f (bound %.4f), KS min p %.3f, isotropic dep z %.2f; anisotropic dep z %.1f; %.1fs",
              iso.max_abs_corr, iso.max_abs_corr_sq, bound, iso.ks_min_p, iso.dependence_z, an.dependence_z, secs)};
}

Outcome ot_correctness() {
  Rng rng(41);
  int mismatches = 0, total = 0;
  for (int n = 1; n <= 7; ++n) {
    for (int k = 0; k < 50; ++k) {
      const Mat c = Mat::NullaryExpr(n, n, [&] { return uniform01(rng) * 10.0; });
      const auto a = coupling::hungarian(c);
      double got = 0.0;
      for (int i = 0; i < n; ++i) got += c(i, a[static_cast<std::size_t>(i)]);
      std::vector<int> p(static_cast<std::size_t>(n));
      std::iota(p.begin(), p.end(), 0);
      double best = 1e300;
      do {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += c(i, p[static_cast<std::size_t>(i)]);
        best = std::min(best, s);
      } while (std::next_permutation(p.begin(), p.end()));
      if (std::abs(got - best) > 1e-12 * std::max(1.0, best)) ++mismatches;
      ++total;
    }
  }
  double worst_rot = 0.0;
  for (int k = 0; k < 20; ++k) {
    MatX3 target = standard_normal_matrix(12, 3, rng);
    target.rowwise() -= target.colwise().mean();
    const Mat3 q = testutil::random_rotation(rng);
    const auto r = coupling::kabsch_align(target, target * q.transpose());
    worst_rot = std::max(worst_rot, testutil::max_abs(r.rotation - q.transpose()));
  }
  return {mismatches == 0 && worst_rot <= 1e-8,
          fmt("hungarian mismatches %d/%d; kabsch max rotation error %.2e", mismatches, total, worst_rot)};
}

Outcome gradient_checks() {
  double worst = 0.0;
  long checked = 0;
  for (int net = 0; net < 3; ++net) {
    Rng rng(51 + static_cast<std::uint64_t>(net));
    flow::CanonLiteConfig cfg;
    cfg.n_types = 3;
    cfg.n_charges = 2;
    cfg.n_sets = 3;
    cfg.d_model = 6;
    cfg.d_rank = 4;
    cfg.n_layers = 2;
    cfg.d_pe = 4;
    auto ps = flow::init_canonlite(cfg, rng);
    const int n = 4;
    flow::GraphInput in;
    in.coords = standard_normal_matrix(n, 3, rng);
    std::uniform_int_distribution<int> ty(0, 2), ch(0, 1), bo(0, 4);
    flow::GraphTargets tgt;
    in.bonds = MatI::Zero(n, n);
    tgt.bonds = MatI::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      in.types.push_back(ty(rng));
      in.charges.push_back(ch(rng));
      tgt.types.push_back(ty(rng));
      tgt.charges.push_back(ch(rng));
      in.ranks.push_back(static_cast<double>(i) / n);
      for (int j = i + 1; j < n; ++j) {
        in.bonds(i, j) = in.bonds(j, i) = bo(rng);
        tgt.bonds(i, j) = tgt.bonds(j, i) = bo(rng);
      }
    }
    in.t = uniform01(rng);
    tgt.velocity = standard_normal_matrix(n, 3, rng);
    tgt.ranks = flow::normalized_ranks(n);
    const flow::LossWeights w;
    const auto loss = [&] {
      tape::Tape tp(&ps);
      return tp.scalar(flow::graph_loss(tp, flow::canonlite_forward(tp, cfg, in), tgt, w).total);
    };
    ps.zero_grad();
    {
      tape::Tape tp(&ps);
      tp.backward(flow::graph_loss(tp, flow::canonlite_forward(tp, cfg, in), tgt, w).total);
    }
    const double h = 1e-5;
    for (auto& p : ps) {
      for (Eigen::Index k = 0; k < p.value.size(); ++k) {
        const double o = p.value(k);
        p.value(k) = o + h;
        const double up = loss();
        p.value(k) = o - h;
        const double dn = loss();
        p.value(k) = o;
        const double fd = (up - dn) / (2 * h);
        const double rel = std::abs(fd - p.grad(k)) / std::max({std::abs(fd), std::abs(p.grad(k)), 1e-6});
        worst = std::max(worst, rel);
        ++checked;
      }
    }
  }
  return {worst <= 1e-4, fmt("max relative error %.2e over %ld parameters in 3 nets", worst, checked)};
}

Outcome c4_training_benchmark() {
  Timer timer;
  int loss_wins = 0, energy_wins = 0;
  std::ostringstream os;
  for (int seed = 0; seed < 5; ++seed) {
    double val[2], energy[2];
    for (int canonical = 0; canonical < 2; ++canonical) {
      Rng task_rng(1000 + static_cast<std::uint64_t>(seed));
      const auto task = flow::c4_blob_task(canonical == 1, task_rng);
      flow::TrainConfig cfg;
      cfg.lr = 1e-3;
      cfg.epochs = 20;
      cfg.steps_per_epoch = 100;
      cfg.batch_size = 128;
      cfg.path_sigma = 0.0;
      cfg.time_dist = flow::TimeDist::kUniform;
      cfg.warmup_steps = 100;
      cfg.eval_samples = 1000;
      cfg.seed = static_cast<std::uint64_t>(seed);
      const auto res = flow::train_points(task, cfg, flow::PointMlpConfig{});
      val[canonical] = flow::point_validation_loss(res.model, task.validation, 99);
      Rng srng(5000 + static_cast<std::uint64_t>(seed));
      const Mat samples = sampler::sample_points(res.model, 1000, 10, true, srng);
      energy[canonical] = energy_distance_naive(samples, task.eval_target);
    }
    loss_wins += val[1] <= val[0];
    energy_wins += energy[1] <= energy[0];
    os << fmt("seed %d loss %.4f/%.4f energy %.4f/%.4f; ", seed, val[1], val[0], energy[1], energy[0]);
  }
  const double secs = timer.seconds();
  os << fmt("canonical wins loss %d/5 energy %d/5; %.1fs", loss_wins, energy_wins, secs);
  return {loss_wins >= 4 && energy_wins >= 4 && secs < 600, os.str()};
}

Outcome haar_randomization() {
  const auto mols = testutil::example_molecules();
  std::vector<molecule::MoleculeState> canonical;
  for (const auto& m : mols) canonical.push_back(canon::canonicalize(m, canon::Group::kPermSO3).representative);
  const int n = 10000;
  std::vector<molecule::MoleculeState> batch;
  for (int i = 0; i < n; ++i) batch.push_back(canonical[static_cast<std::size_t>(i) % canonical.size()]);
  Rng rng(61);
  const auto randomized = sampler::haar_randomize(batch, sampler::HaarGroup::kPermSO3, rng);
  // one fixed g' per molecule size
  std::vector<symgroup::GroupElement> fixed(64);
  for (int s = 1; s < 64; ++s) {
    fixed[static_cast<std::size_t>(s)] = symgroup::GroupElement::identity(s);
    std::shuffle(fixed[static_cast<std::size_t>(s)].perm.begin(), fixed[static_cast<std::size_t>(s)].perm.end(), rng);
    fixed[static_cast<std::size_t>(s)].rot = testutil::random_rotation(rng);
  }
  // statistics that are not invariant: a frame coordinate of atom 0, of the
  // last atom, and the z-extent of the first half of the atoms
  const std::vector<std::pair<std::string, std::function<double(const molecule::MoleculeState&)>>> stats = {
      {"x(atom0)", [](const molecule::MoleculeState& m) { return m.coords(0, 0); }},
      {"y(last)", [](const molecule::MoleculeState& m) { return m.coords(m.size() - 1, 1); }},
      {"mean z(first half)",
       [](const molecule::MoleculeState& m) { return m.coords.topRows((m.size() + 1) / 2).col(2).mean(); }}};
  bool pass = true;
  bool sanity = true;
  std::ostringstream os;
  for (const auto& [name, stat] : stats) {
    std::vector<double> a, b, c, d;
    for (const auto& m : randomized) {
      a.push_back(stat(m));
      b.push_back(stat(symgroup::act(fixed[static_cast<std::size_t>(m.size())], m)));
    }
    for (const auto& m : batch) {
      c.push_back(stat(m));
      d.push_back(stat(symgroup::act(fixed[static_cast<std::size_t>(m.size())], m)));
    }
    const double p = stats::ks_two_sample(a, b).p_value;
    const double p_raw = stats::ks_two_sample(c, d).p_value;
    pass = pass && p > 1e-3;
    sanity = sanity && p_raw < 1e-3;
    os << fmt("%s p %.3f (unrandomized p %.1e); ", name.c_str(), p, p_raw);
  }
  os << (sanity ? "statistics detect the raw frame" : "warning: a statistic does not detect the raw frame");
  return {pass, os.str()};
}

Outcome aligned_prior_benefit() {
  Mat s0 = Mat::Zero(2, 2);
  s0.diagonal() << 25.0, 1.0;
  bool pass = true;
  std::ostringstream os;
  for (int k = 1; k <= 9; ++k) {
    const double t = 0.1 * k;
    const double aligned = theory::gaussian_condvar(s0, s0, t).trace();
    const double iso = theory::gaussian_condvar(s0, Mat::Identity(2, 2), t).trace();
    // per-dimension oracle s0 s1 / ((1-t)^2 s0 + t^2 s1)
    auto oracle = [t](double a, double b) { return a * b / ((1 - t) * (1 - t) * a + t * t * b); };
    const double ref_aligned = oracle(25, 25) + oracle(1, 1);
    const double ref_iso = oracle(25, 1) + oracle(1, 1);
    if (std::abs(aligned - ref_aligned) > 1e-10 * ref_aligned || std::abs(iso - ref_iso) > 1e-10 * ref_iso) {
      os << "closed form disagrees with oracle; ";
      pass = false;
    }
    pass = pass && aligned <= iso;
    os << fmt("t=%.1f %.3f vs %.3f%s", t, aligned, iso, k < 9 ? "; " : "");
  }
  return {pass, "trace aligned vs isotropic: " + os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"canonicalizer invariance", canonicalizer_invariance},
      {"mixture score oracle", mixture_score_oracle},
      {"variance decomposition", variance_decomposition},
      {"gaussian closed form", gaussian_closed_form},
      {"lift independence", lift_independence},
      {"OT correctness", ot_correctness},
      {"gradient checks", gradient_checks},
      {"C4 training benchmark", c4_training_benchmark},
      {"Haar randomization", haar_randomization},
      {"aligned prior benefit", aligned_prior_benefit},
  };
  std::vector<int> which;
  if (argc > 1) {
    for (int i = 1; i < argc; ++i) {
      const int k = std::atoi(argv[i]);
      if (k < 1 || k > static_cast<int>(criteria.size())) {
        std::fprintf(stderr, "usage: %s [criterion 1..%zu]...\n", argv[0], criteria.size());
        return 2;
      }
      which.push_back(k);
    }
  } else {
    for (int k = 1; k <= static_cast<int>(criteria.size()); ++k) which.push_back(k);
  }
  bool all = true;
  for (int k : which) {
    const auto& [name, fn] = criteria[static_cast<std::size_t>(k - 1)];
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d (%s): %s %s\n", k, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
