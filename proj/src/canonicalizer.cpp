#include "canonflow/canonicalizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace canonflow::canon {

namespace {

double choose_sigma2(const MoleculeState& m, const Mat& dist) {
  const int n = m.size();
  double bond_sum = 0.0;
  int bond_count = 0;
  double pair_sum = 0.0;
  int pair_count = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      pair_sum += dist(i, j);
      ++pair_count;
      if (m.bonds(i, j) != 0) {
        bond_sum += dist(i, j);
        ++bond_count;
      }
    }
  }
  const double mean = bond_count > 0 ? bond_sum / bond_count : pair_sum / pair_count;
  if (!(mean > 0.0)) throw NumericError("fiedler_vector: all atoms coincide, bandwidth is zero");
  return 4.0 * mean * mean;
}

std::vector<double> index_ranks(int n) {
  std::vector<double> r(n);
  for (int i = 0; i < n; ++i) r[i] = static_cast<double>(i) / n;
  return r;
}

/// Gathers rows by `order`, centers, and records the inverse as gauge.
CanonicalResult gather_and_center(const MoleculeState& m, const std::vector<int>& order) {
  GroupElement gather = GroupElement::identity(m.size());
  gather.perm = order;
  MoleculeState reordered = symgroup::act(gather, m);
  const Vec3 centroid = reordered.coords.colwise().mean().transpose();

  CanonicalResult out;
  out.representative = symgroup::center(reordered);
  out.gauge = GroupElement::identity(m.size());
  out.gauge.perm = symgroup::inverse_permutation(order);
  out.gauge.trans = centroid;
  out.ranks = index_ranks(m.size());
  out.fiedler = Vec::Zero(m.size());
  return out;
}

}  // namespace

FiedlerResult fiedler_vector(const MoleculeState& m, const LaplacianSpec& spec) {
  const int n = m.size();
  if (n < 2) throw InputError("fiedler_vector: need at least 2 atoms, got " + std::to_string(n));
  m.validate();

  Mat dist(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) dist(i, j) = (m.coords.row(i) - m.coords.row(j)).norm();

  FiedlerResult res;
  res.sigma2 = spec.sigma2 > 0.0 ? spec.sigma2 : choose_sigma2(m, dist);

  Mat w(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) w(i, j) = i == j ? 0.0 : std::exp(-dist(i, j) * dist(i, j) / (2.0 * res.sigma2));
  const Vec degree = w.rowwise().sum();
  if (degree.minCoeff() <= std::numeric_limits<double>::min()) {
    throw NumericError("fiedler_vector: an atom has zero kernel degree");
  }
  const Vec inv_sqrt = degree.cwiseSqrt().cwiseInverse();

  // I - D^{-1/2} W D^{-1/2} shares its spectrum with L_rw.
  Mat lsym = -(inv_sqrt.asDiagonal() * w * inv_sqrt.asDiagonal());
  lsym.diagonal().array() += 1.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(lsym);
  if (es.info() != Eigen::Success) throw NumericError("fiedler_vector: eigensolver did not converge");

  res.lambda2 = es.eigenvalues()(1);
  res.lambda3 = n >= 3 ? es.eigenvalues()(2) : std::numeric_limits<double>::infinity();
  Vec u = inv_sqrt.asDiagonal() * es.eigenvectors().col(1);
  u.normalize();

  const Vec3 centroid = m.coords.colwise().mean().transpose();
  Vec radius(n);
  for (int i = 0; i < n; ++i) radius(i) = (m.coords.row(i).transpose() - centroid).norm();
  const double mean_radius = radius.mean();
  double stat = u.dot((radius.array() - mean_radius).matrix());
  if (stat < 0.0) {
    u = -u;
    stat = -stat;
  }
  res.u2 = std::move(u);
  res.sign_statistic = stat;
  res.degenerate = stat < spec.tolerance || (res.lambda3 - res.lambda2) < spec.tolerance;
  return res;
}

CanonicalResult apply_ordering(const MoleculeState& m, const std::vector<int>& order) {
  if (static_cast<int>(order.size()) != m.size() || !symgroup::is_permutation(order)) {
    throw InputError("apply_ordering: order is not a permutation of the atoms");
  }
  return gather_and_center(m, order);
}

CanonicalResult canonicalize_perm(const MoleculeState& m, const LaplacianSpec& spec) {
  m.validate();
  const int n = m.size();
  if (n == 1) return gather_and_center(m, {0});

  const FiedlerResult f = fiedler_vector(m, spec);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return f.u2(a) < f.u2(b); });

  bool tied = false;
  for (int start = 0; start < n;) {
    int end = start + 1;
    while (end < n && f.u2(order[end]) - f.u2(order[end - 1]) < spec.tolerance) ++end;
    if (end - start > 1) {
      tied = true;
      std::sort(order.begin() + start, order.begin() + end, [&](int a, int b) {
        if (m.atom_types[a] != m.atom_types[b]) return m.atom_types[a] > m.atom_types[b];
        return a < b;
      });
    }
    start = end;
  }

  CanonicalResult out = gather_and_center(m, order);
  for (int i = 0; i < n; ++i) out.fiedler(i) = f.u2(order[i]);
  out.degenerate = f.degenerate || tied;
  return out;
}

CanonicalResult canonicalize_so3(const MoleculeState& ordered, const Vec& u2, bool enforce_cube_sign) {
  ordered.validate();
  const int n = ordered.size();
  if (u2.size() != n) throw InputError("canonicalize_so3: u2 length does not match atom count");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Vec values = u2;
  bool degenerate = false;
  bool flipped = false;
  if (enforce_cube_sign && n >= 2) {
    const double cube = values.array().cube().sum();
    if (std::abs(cube) < 1e-12) degenerate = true;
    if (cube < 0.0) {
      std::reverse(order.begin(), order.end());
      values = -values.reverse().eval();
      flipped = true;
    }
  }

  CanonicalResult out = gather_and_center(ordered, order);
  out.fiedler = values;
  out.cube_flipped = flipped;
  out.degenerate = degenerate;
  if (n < 3) {
    out.degenerate = true;
    return out;
  }

  const MatX3& x = out.representative.coords;
  const Vec3 head = x.row(0).transpose();
  const Vec3 tail = x.row(n - 1).transpose();
  const Vec3 axis = tail - head;
  if (axis.norm() < 1e-9) {
    out.degenerate = true;
    return out;
  }
  const Vec3 e1 = axis.normalized();

  int anchor = -1;
  double best = -1.0;
  double runner_up = -1.0;
  for (int k = n / 3; k < (2 * n) / 3; ++k) {
    const double score = (x.row(k).transpose() - head).cross(axis).norm();
    if (score > best) {
      runner_up = best;
      best = score;
      anchor = k;
    } else if (score > runner_up) {
      runner_up = score;
    }
  }
  if (anchor < 0) {
    out.degenerate = true;
    return out;
  }
  if (runner_up >= 0.0 && best - runner_up < 1e-9 * (1.0 + best)) out.degenerate = true;

  const Vec3 normal = e1.cross(x.row(anchor).transpose() - head);
  if (normal.norm() < 1e-9) {
    out.degenerate = true;
    return out;
  }
  const Vec3 e3 = normal.normalized();
  const Vec3 e2 = e3.cross(e1);
  Mat3 r;
  r.row(0) = e1.transpose();
  r.row(1) = e2.transpose();
  r.row(2) = e3.transpose();

  out.representative.coords = x * r.transpose();
  // Input (reordered, centered) = X' R + centroid, i.e. rotation R^T.
  out.gauge.rot = r.transpose();
  return out;
}

CanonicalResult canonicalize(const MoleculeState& m, Group group, Ordering ordering, const LaplacianSpec& spec) {
  CanonicalResult perm;
  switch (ordering) {
    case Ordering::kSpectral:
      perm = canonicalize_perm(m, spec);
      break;
    case Ordering::kMultihop:
      m.validate();
      perm = apply_ordering(m, order_multihop(m, 3));
      break;
    case Ordering::kAtomic:
      m.validate();
      perm = apply_ordering(m, order_atomic(m));
      break;
  }
  if (group == Group::kPerm) return perm;

  const bool spectral = ordering == Ordering::kSpectral;
  Vec values = perm.fiedler;
  if (!spectral) {
    // Strictly increasing stand-in so the cube check never reverses.
    for (int i = 0; i < m.size(); ++i) values(i) = i + 1.0;
  }
  CanonicalResult rot = canonicalize_so3(perm.representative, values, spectral);
  CanonicalResult out;
  out.representative = std::move(rot.representative);
  out.gauge = symgroup::compose(perm.gauge, rot.gauge);
  out.ranks = std::move(rot.ranks);
  out.fiedler = spectral ? rot.fiedler : Vec::Zero(m.size());
  out.degenerate = perm.degenerate || rot.degenerate;
  out.cube_flipped = rot.cube_flipped;
  return out;
}

std::vector<int> order_multihop(const MoleculeState& m, int hops) {
  if (hops < 1) throw InputError("order_multihop: hop depth must be >= 1");
  const int n = m.size();
  std::vector<double> weight(n, 0.0);
  for (int v = 0; v < n; ++v) {
    std::vector<int> depth(n, -1);
    std::queue<int> frontier;
    depth[v] = 0;
    frontier.push(v);
    while (!frontier.empty()) {
      const int a = frontier.front();
      frontier.pop();
      if (depth[a] == hops) continue;
      for (int b = 0; b < n; ++b) {
        if (m.bonds(a, b) != 0 && depth[b] < 0) {
          depth[b] = depth[a] + 1;
          frontier.push(b);
        }
      }
    }
    for (int u = 0; u < n; ++u) {
      if (depth[u] >= 1) weight[v] += std::pow(static_cast<double>(n), hops - depth[u]);
    }
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (weight[a] != weight[b]) return weight[a] < weight[b];
    if (m.atom_types[a] != m.atom_types[b]) return m.atom_types[a] > m.atom_types[b];
    return a < b;
  });
  return order;
}

std::vector<int> order_atomic(const MoleculeState& m) {
  std::vector<int> order(m.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const bool ha = m.atom_types[a] == 1;
    const bool hb = m.atom_types[b] == 1;
    if (ha != hb) return hb;
    return m.atom_types[a] > m.atom_types[b];
  });
  return order;
}

}  // namespace canonflow::canon
