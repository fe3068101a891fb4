#pragma once

#include "canonflow/common.hpp"
#include "canonflow/molecule.hpp"
#include "canonflow/symgroup.hpp"

#include <vector>

namespace canonflow::canon {

using molecule::MoleculeState;
using symgroup::GroupElement;

/// Geometric kernel Laplacian settings. sigma2 <= 0 selects the bandwidth
/// from the data: 4 * (mean bond length)^2, or 4 * (mean pairwise
/// distance)^2 when the molecule has no bonds.
struct LaplacianSpec {
  double sigma2 = 0.0;
  /// Eigengap, sign-statistic and tie threshold.
  double tolerance = 1e-9;
};

struct FiedlerResult {
  Vec u2;  ///< unit-norm, sign fixed by the radial convention
  double lambda2 = 0.0;
  double lambda3 = 0.0;  ///< +inf when N == 2
  double sign_statistic = 0.0;
  double sigma2 = 0.0;
  bool degenerate = false;
};

/// Second eigenvector of the random-walk Laplacian D^{-1}(D - W) with
/// W_ij = exp(-|x_i - x_j|^2 / (2 sigma^2)). Solved through the symmetric
/// conjugate D^{-1/2}(D - W)D^{-1/2} and mapped back by D^{-1/2}.
/// The sign makes sum_i u_i (|x_i - c| - mean radius) positive.
FiedlerResult fiedler_vector(const MoleculeState& m, const LaplacianSpec& spec = {});

/// Z = act(gauge, representative).
struct CanonicalResult {
  MoleculeState representative;
  GroupElement gauge;
  /// rank_i / N in representative order.
  std::vector<double> ranks;
  /// Signed Fiedler values in representative order (zeros for non-spectral
  /// orderings).
  Vec fiedler;
  bool degenerate = false;
  /// Set when the rotation step reversed the spectral order to make
  /// sum v_i^3 positive.
  bool cube_flipped = false;
};

enum class Group { kPerm, kPermSO3 };
enum class Ordering { kSpectral, kMultihop, kAtomic };

/// Canonical S_N representative: atoms sorted by ascending Fiedler value,
/// coordinates centered. Fiedler ties within tolerance are broken by
/// (atomic number desc, index asc) and flag the result degenerate.
CanonicalResult canonicalize_perm(const MoleculeState& m, const LaplacianSpec& spec = {});

/// Rank-anchored rotation frame for an already-ordered molecule:
/// head = first atom, tail = last atom, third anchor from the middle third.
/// With enforce_cube_sign the order is reversed (and u2 negated) whenever
/// sum u2^3 < 0. Needs N >= 3 and a non-collinear anchor; otherwise the
/// rotation is the identity and the result is degenerate.
CanonicalResult canonicalize_so3(const MoleculeState& ordered, const Vec& u2, bool enforce_cube_sign = true);

/// Full canonicalizer Psi = Psi_rot o Psi_perm (rotation step only for
/// kPermSO3). The gauge satisfies act(gauge, representative) == m.
CanonicalResult canonicalize(const MoleculeState& m, Group group = Group::kPerm,
                             Ordering ordering = Ordering::kSpectral, const LaplacianSpec& spec = {});

/// Ascending w_K(v) = sum_{k=1..K} d_k(v) N^{K-k}, d_k = number of atoms at
/// exactly k bond hops. Ties: atomic number desc, then index.
std::vector<int> order_multihop(const MoleculeState& m, int hops);

/// Descending atomic number (hydrogens last), ties by index.
std::vector<int> order_atomic(const MoleculeState& m);

/// Same as canonicalize_perm but with a fixed gather order.
CanonicalResult apply_ordering(const MoleculeState& m, const std::vector<int>& order);

}  // namespace canonflow::canon
