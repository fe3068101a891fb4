#pragma once

#include "canonflow/common.hpp"
#include "canonflow/molecule.hpp"

#include <vector>

namespace canonflow::symgroup {

using molecule::MoleculeState;

/// An element (pi, R, t) of S_N x SO(3) with a translation slot.
///
/// Acting on a molecule gathers rows: atom i of the result is atom perm[i]
/// of the input, so X' = pi(X) R^T + 1 t^T and A'_ij = A_{perm[i], perm[j]}.
struct GroupElement {
  std::vector<int> perm;
  Mat3 rot = Mat3::Identity();
  Vec3 trans = Vec3::Zero();

  static GroupElement identity(int n);
  int size() const { return static_cast<int>(perm.size()); }

  /// Throws InputError unless perm is a bijection and rot is a proper
  /// rotation within 1e-10.
  void validate() const;
};

/// g * h: apply h first, then g.
GroupElement compose(const GroupElement& g, const GroupElement& h);
GroupElement inverse(const GroupElement& g);

MoleculeState act(const GroupElement& g, const MoleculeState& z);

/// Uniform permutation (Fisher-Yates) and uniform rotation (normalized
/// Gaussian quaternion), zero translation.
GroupElement haar_sample(int n_atoms, Rng& rng);

/// Uniform rotation of R^d for d in {2, 3}; d == 1 returns [1].
Mat haar_rotation(int d, Rng& rng);

Mat3 quaternion_to_matrix(double w, double x, double y, double z);

MoleculeState center(const MoleculeState& z);
MatX3 center(const MatX3& x);

std::vector<int> inverse_permutation(const std::vector<int>& perm);
bool is_permutation(const std::vector<int>& perm);

/// Finite group acting orthogonally on R^d.
struct FiniteGroupSpec {
  std::vector<Mat> elements;

  int order() const { return static_cast<int>(elements.size()); }
  int dim() const { return elements.empty() ? 0 : static_cast<int>(elements.front().rows()); }

  /// Orthogonality (1e-10), closure (1e-8) and presence of the identity.
  void validate() const;

  static FiniteGroupSpec trivial(int d);
  /// {+1, -1} on R.
  static FiniteGroupSpec sign_flip();
  /// Rotations by 2 pi k / m in the plane.
  static FiniteGroupSpec cyclic2d(int m);
  /// All 3! coordinate permutations of R^3.
  static FiniteGroupSpec permutations3();
};

/// Rows of v are points; returns the rows mapped by G_index.
Mat finite_act(const FiniteGroupSpec& spec, int index, const Mat& v);

/// Group index m maximising <G_m^{-1} v, reference> over the flattened
/// point; with a generic reference this picks one orbit point per orbit.
int finite_canonical_index(const FiniteGroupSpec& spec, const Mat& v, const Mat& reference);

/// Each row mapped by an independent uniformly drawn element.
Mat finite_randomize(const FiniteGroupSpec& spec, const Mat& v, Rng& rng);

}  // namespace canonflow::symgroup
