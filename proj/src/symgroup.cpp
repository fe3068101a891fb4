#include "canonflow/symgroup.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace canonflow::symgroup {

GroupElement GroupElement::identity(int n) {
  GroupElement g;
  g.perm.resize(n);
  for (int i = 0; i < n; ++i) g.perm[i] = i;
  return g;
}

bool is_permutation(const std::vector<int>& perm) {
  std::vector<char> seen(perm.size(), 0);
  for (int p : perm) {
    if (p < 0 || p >= static_cast<int>(perm.size()) || seen[p]) return false;
    seen[p] = 1;
  }
  return true;
}

void GroupElement::validate() const {
  if (!is_permutation(perm)) throw InputError("group element: perm is not a bijection");
  if ((rot.transpose() * rot - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-10) {
    throw InputError("group element: rotation is not orthogonal");
  }
  if (std::abs(rot.determinant() - 1.0) > 1e-10) {
    throw InputError("group element: rotation determinant is not +1");
  }
}

std::vector<int> inverse_permutation(const std::vector<int>& perm) {
  if (!is_permutation(perm)) throw InputError("inverse_permutation: not a bijection");
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
  return inv;
}

GroupElement compose(const GroupElement& g, const GroupElement& h) {
  if (g.size() != h.size()) throw InputError("compose: permutation sizes differ");
  GroupElement out;
  out.perm.resize(g.perm.size());
  for (std::size_t i = 0; i < g.perm.size(); ++i) out.perm[i] = h.perm[g.perm[i]];
  out.rot = g.rot * h.rot;
  out.trans = g.rot * h.trans + g.trans;
  return out;
}

GroupElement inverse(const GroupElement& g) {
  GroupElement out;
  out.perm = inverse_permutation(g.perm);
  out.rot = g.rot.transpose();
  out.trans = -(g.rot.transpose() * g.trans);
  return out;
}

MoleculeState act(const GroupElement& g, const MoleculeState& z) {
  const int n = z.size();
  if (g.size() != n) {
    throw InputError("act: permutation length " + std::to_string(g.size()) +
                     " does not match atom count " + std::to_string(n));
  }
  MoleculeState out;
  out.coords.resize(n, 3);
  out.atom_types.resize(n);
  out.charges.resize(n);
  out.bonds.resize(n, n);
  for (int i = 0; i < n; ++i) {
    const int src = g.perm[i];
    out.coords.row(i) = (g.rot * z.coords.row(src).transpose() + g.trans).transpose();
    out.atom_types[i] = z.atom_types[src];
    out.charges[i] = z.charges[src];
    for (int j = 0; j < n; ++j) out.bonds(i, j) = z.bonds(src, g.perm[j]);
  }
  return out;
}

Mat3 quaternion_to_matrix(double w, double x, double y, double z) {
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

namespace {

Mat3 haar_rotation3(Rng& rng) {
  double q[4];
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& c : q) {
      c = standard_normal(rng);
      norm2 += c * c;
    }
  } while (norm2 < 1e-20);
  const double s = 1.0 / std::sqrt(norm2);
  return quaternion_to_matrix(q[0] * s, q[1] * s, q[2] * s, q[3] * s);
}

}  // namespace

GroupElement haar_sample(int n_atoms, Rng& rng) {
  if (n_atoms < 1) throw InputError("haar_sample: n_atoms must be >= 1");
  GroupElement g = GroupElement::identity(n_atoms);
  for (int i = n_atoms - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(g.perm[i], g.perm[pick(rng)]);
  }
  g.rot = haar_rotation3(rng);
  return g;
}

Mat haar_rotation(int d, Rng& rng) {
  switch (d) {
    case 1:
      return Mat::Identity(1, 1);
    case 2: {
      const double a = 2.0 * std::numbers::pi * uniform01(rng);
      Mat r(2, 2);
      r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
      return r;
    }
    case 3:
      return haar_rotation3(rng);
    default:
      throw InputError("haar_rotation: only d in {1, 2, 3} is supported");
  }
}

MatX3 center(const MatX3& x) {
  if (x.rows() < 1) throw InputError("center: empty coordinates");
  const Eigen::RowVector3d mean = x.colwise().mean();
  return x.rowwise() - mean;
}

MoleculeState center(const MoleculeState& z) {
  MoleculeState out = z;
  out.coords = center(z.coords);
  return out;
}

void FiniteGroupSpec::validate() const {
  if (elements.empty()) throw InputError("finite group: no elements");
  const int d = dim();
  bool has_identity = false;
  for (const Mat& g : elements) {
    if (g.rows() != d || g.cols() != d) throw InputError("finite group: inconsistent element shapes");
    if ((g.transpose() * g - Mat::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-10) {
      throw InputError("finite group: element is not orthogonal");
    }
    if ((g - Mat::Identity(d, d)).cwiseAbs().maxCoeff() <= 1e-10) has_identity = true;
  }
  if (!has_identity) throw InputError("finite group: identity missing");
  for (const Mat& a : elements) {
    for (const Mat& b : elements) {
      const Mat ab = a * b;
      bool found = false;
      for (const Mat& c : elements) {
        if ((ab - c).cwiseAbs().maxCoeff() <= 1e-8) {
          found = true;
          break;
        }
      }
      if (!found) throw InputError("finite group: not closed under composition");
    }
  }
}

FiniteGroupSpec FiniteGroupSpec::trivial(int d) { return {{Mat::Identity(d, d)}}; }

FiniteGroupSpec FiniteGroupSpec::sign_flip() {
  return {{Mat::Constant(1, 1, 1.0), Mat::Constant(1, 1, -1.0)}};
}

FiniteGroupSpec FiniteGroupSpec::cyclic2d(int m) {
  if (m < 1) throw InputError("cyclic2d: order must be >= 1");
  FiniteGroupSpec spec;
  for (int k = 0; k < m; ++k) {
    // Exact entries for quarter turns keep C4 closure free of roundoff.
    double c = std::cos(2.0 * std::numbers::pi * k / m);
    double s = std::sin(2.0 * std::numbers::pi * k / m);
    if ((4 * k) % m == 0) {
      c = std::round(c);
      s = std::round(s);
    }
    Mat r(2, 2);
    r << c, -s, s, c;
    spec.elements.push_back(r);
  }
  return spec;
}

FiniteGroupSpec FiniteGroupSpec::permutations3() {
  FiniteGroupSpec spec;
  std::vector<int> p = {0, 1, 2};
  do {
    Mat m = Mat::Zero(3, 3);
    for (int i = 0; i < 3; ++i) m(i, p[i]) = 1.0;
    spec.elements.push_back(m);
  } while (std::next_permutation(p.begin(), p.end()));
  return spec;
}

Mat finite_act(const FiniteGroupSpec& spec, int index, const Mat& v) {
  if (index < 0 || index >= spec.order()) {
    throw InputError("finite_act: element index " + std::to_string(index) + " out of range");
  }
  const Mat& g = spec.elements[index];
  if (v.cols() != g.cols()) throw InputError("finite_act: dimension mismatch");
  return v * g.transpose();
}

int finite_canonical_index(const FiniteGroupSpec& spec, const Mat& v, const Mat& reference) {
  if (reference.rows() != v.rows() || reference.cols() != v.cols()) {
    throw InputError("finite_canonical_index: reference shape mismatch");
  }
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int m = 0; m < spec.order(); ++m) {
    // G^{-1} = G^T for orthogonal elements; rows map as v G.
    const Mat back = v * spec.elements[m];
    const double score = back.cwiseProduct(reference).sum();
    if (score > best_score) {
      best_score = score;
      best = m;
    }
  }
  return best;
}

Mat finite_randomize(const FiniteGroupSpec& spec, const Mat& v, Rng& rng) {
  if (spec.order() < 1) throw InputError("finite_randomize: empty group");
  if (v.cols() != spec.dim()) throw InputError("finite_randomize: dimension mismatch");
  std::uniform_int_distribution<int> pick(0, spec.order() - 1);
  Mat out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) out.row(i) = v.row(i) * spec.elements[pick(rng)].transpose();
  return out;
}

}  // namespace canonflow::symgroup
