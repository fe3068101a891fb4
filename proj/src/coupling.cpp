#include "canonflow/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace canonflow::coupling {

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kProduct: return "product";
    case Mode::kOtExact: return "ot_exact";
    case Mode::kOtSinkhorn: return "ot_sinkhorn";
  }
  return "unknown";
}

std::vector<int> CouplingPlan::noise_for() const {
  std::vector<int> out(pairs.size(), -1);
  for (const auto& [i, j] : pairs) out[static_cast<std::size_t>(i)] = j;
  return out;
}

// Shortest augmenting path with potentials, O(n^3).
std::vector<int> hungarian(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw InputError("hungarian: cost matrix must be square");
  if (!cost.allFinite()) throw InputError("hungarian: non-finite cost");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assign(n, -1);
  for (int j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

Mat squared_cost(const Mat& data, const Mat& noise) {
  if (data.cols() != noise.cols()) throw InputError("coupling: dimension mismatch");
  const Vec a = data.rowwise().squaredNorm();
  const Vec b = noise.rowwise().squaredNorm();
  Mat c = (-2.0 * data * noise.transpose()).colwise() + a;
  c.rowwise() += b.transpose();
  return c.cwiseMax(0.0);
}

CouplingPlan product_pair(int n) {
  if (n < 0) throw InputError("product_pair: negative batch size");
  CouplingPlan plan;
  plan.mode = Mode::kProduct;
  for (int i = 0; i < n; ++i) plan.pairs.emplace_back(i, i);
  return plan;
}

CouplingPlan product_pair(const Mat& data, const Mat& noise) {
  if (data.rows() != noise.rows() || data.cols() != noise.cols()) throw InputError("product_pair: size mismatch");
  CouplingPlan plan = product_pair(static_cast<int>(data.rows()));
  plan.cost = (data - noise).squaredNorm();
  return plan;
}

Mat sinkhorn_plan(const Mat& cost, double epsilon, int iterations) {
  const auto n = cost.rows(), m = cost.cols();
  if (epsilon <= 0.0) throw InputError("sinkhorn: regularisation must be positive");
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  Vec f = Vec::Zero(n), g = Vec::Zero(m);
  auto lse = [](const auto& x) {
    const double mx = x.maxCoeff();
    return mx + std::log((x.array() - mx).exp().sum());
  };
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec r = (g.transpose() - cost.row(i)).transpose() / epsilon;
      f(i) = epsilon * (log_a - lse(r));
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      const Vec c = (f - cost.col(j)) / epsilon;
      g(j) = epsilon * (log_b - lse(c));
    }
  }
  Mat plan(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) plan(i, j) = std::exp((f(i) + g(j) - cost(i, j)) / epsilon);
  }
  return plan;
}

std::vector<int> round_plan(const Mat& plan) {
  const int n = static_cast<int>(plan.rows());
  std::vector<int> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  std::vector<double> confidence(n);
  for (int i = 0; i < n; ++i) confidence[i] = plan.row(i).maxCoeff() / std::max(plan.row(i).sum(), 1e-300);
  std::stable_sort(rows.begin(), rows.end(), [&](int a, int b) { return confidence[a] > confidence[b]; });
  std::vector<char> taken(static_cast<std::size_t>(plan.cols()), 0);
  std::vector<int> assign(n, -1);
  for (int i : rows) {
    int best = -1;
    for (int j = 0; j < plan.cols(); ++j) {
      if (!taken[j] && (best < 0 || plan(i, j) > plan(i, best))) best = j;
    }
    assign[i] = best;
    taken[best] = 1;
  }
  return assign;
}

CouplingPlan ot_pair(const Mat& data, const Mat& noise, Mode mode, const SinkhornOptions& opts) {
  if (data.rows() != noise.rows() || data.cols() != noise.cols()) throw InputError("ot_pair: size mismatch");
  if (mode == Mode::kProduct) return product_pair(data, noise);
  const int n = static_cast<int>(data.rows());
  const Mat cost = squared_cost(data, noise);
  if (!cost.allFinite()) throw InputError("ot_pair: non-finite cost");
  std::vector<int> assign;
  if (mode == Mode::kOtExact) {
    if (n > kMaxExactBatch) throw InputError("ot_pair: batch too large for exact mode, use sinkhorn");
    assign = hungarian(cost);
  } else {
    std::vector<double> flat(cost.data(), cost.data() + cost.size());
    std::nth_element(flat.begin(), flat.begin() + static_cast<long>(flat.size() / 2), flat.end());
    const double median = flat.empty() ? 1.0 : flat[flat.size() / 2];
    const double eps = opts.reg_scale * std::max(median, 1e-12);
    assign = round_plan(sinkhorn_plan(cost, eps, opts.iterations));
  }
  CouplingPlan plan;
  plan.mode = mode;
  for (int i = 0; i < n; ++i) {
    plan.pairs.emplace_back(i, assign[i]);
    plan.cost += cost(i, assign[i]);
  }
  return plan;
}

double rmsd(const MatX3& a, const MatX3& b) {
  if (a.rows() != b.rows()) throw InputError("rmsd: size mismatch");
  if (a.rows() == 0) return 0.0;
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.rows()));
}

KabschResult kabsch_align(const MatX3& target, const MatX3& source) {
  if (target.rows() != source.rows()) throw InputError("kabsch_align: size mismatch");
  const Mat3 h = source.transpose() * target;
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU(), v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  KabschResult r;
  r.rotation = v * d * u.transpose();
  r.aligned = source * r.rotation.transpose();
  r.rmsd_before = rmsd(target, source);
  r.rmsd_after = rmsd(target, r.aligned);
  return r;
}

MatX3 molecule_ot(const MatX3& data, const MatX3& noise) {
  const MatX3 aligned = kabsch_align(data, noise).aligned;
  const std::vector<int> assign = hungarian(squared_cost(data, aligned));
  MatX3 out(aligned.rows(), 3);
  for (Eigen::Index i = 0; i < aligned.rows(); ++i) out.row(i) = aligned.row(assign[static_cast<std::size_t>(i)]);
  return out;
}

double ot_probability(int epoch, const AnnealSchedule& sched) {
  if (sched.max_epochs < 1) throw InputError("ot_probability: max_epochs must be >= 1");
  return std::max(0.0, 1.0 - static_cast<double>(epoch) / sched.max_epochs);
}

void group_aligned_lift(const symgroup::FiniteGroupSpec& spec, Mat& z0, Mat& z1, Rng& rng,
                        std::vector<int>* chosen) {
  if (z0.rows() != z1.rows() || z0.cols() != z1.cols()) throw InputError("group_aligned_lift: size mismatch");
  if (z0.cols() != spec.dim()) throw InputError("group_aligned_lift: dimension does not match the group");
  std::uniform_int_distribution<int> pick(0, spec.order() - 1);
  if (chosen) chosen->assign(static_cast<std::size_t>(z0.rows()), 0);
  for (Eigen::Index i = 0; i < z0.rows(); ++i) {
    const int m = pick(rng);
    const Mat& g = spec.elements[static_cast<std::size_t>(m)];
    z0.row(i) = z0.row(i) * g.transpose();
    z1.row(i) = z1.row(i) * g.transpose();
    if (chosen) (*chosen)[static_cast<std::size_t>(i)] = m;
  }
}

void group_aligned_lift_so(Mat& z0, Mat& z1, Rng& rng) {
  if (z0.rows() != z1.rows() || z0.cols() != z1.cols()) throw InputError("group_aligned_lift: size mismatch");
  const int d = static_cast<int>(z0.cols());
  for (Eigen::Index i = 0; i < z0.rows(); ++i) {
    const Mat r = symgroup::haar_rotation(d, rng);
    z0.row(i) = z0.row(i) * r.transpose();
    z1.row(i) = z1.row(i) * r.transpose();
  }
}

}  // namespace canonflow::coupling
