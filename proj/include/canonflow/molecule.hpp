#pragma once

#include "canonflow/common.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace canonflow::molecule {

/// Bond tensor entries.
enum BondOrder : int { kNoBond = 0, kSingle = 1, kDouble = 2, kTriple = 3, kAromatic = 4 };
inline constexpr int kNumBondClasses = 5;

/// Z = (X, H, A): coordinates in Angstrom, atomic numbers + formal charges
/// as the per-atom features, and a symmetric bond-order matrix.
struct MoleculeState {
  MatX3 coords;
  std::vector<int> atom_types;
  std::vector<int> charges;
  MatI bonds;

  MoleculeState() = default;
  MoleculeState(MatX3 x, std::vector<int> types, std::vector<int> q, MatI a)
      : coords(std::move(x)), atom_types(std::move(types)), charges(std::move(q)),
        bonds(std::move(a)) {}

  /// Atoms with zero charges and no bonds.
  static MoleculeState from_coords(const MatX3& x, std::vector<int> types);

  int size() const { return static_cast<int>(atom_types.size()); }

  /// Throws InputError unless shapes agree, bonds are symmetric with an empty
  /// diagonal and valid orders, N >= 1 and coordinates are finite.
  void validate() const;
};

int atomic_number(std::string_view symbol);
std::string element_symbol(int atomic_number);

MoleculeState parse_xyz(std::string_view text);
std::string to_xyz(const MoleculeState& m, std::string_view comment = "");

/// V2000 subset: counts line, atom block (x y z symbol ... with the charge
/// field honoured), bond block (a1 a2 order). Aromatic is order 4.
MoleculeState parse_sdf(std::string_view text);
std::string to_sdf(const MoleculeState& m, std::string_view title = "");

/// Reads .xyz or .sdf/.mol by extension. I/O failures throw Error.
MoleculeState read_molecule_file(const std::string& path);
void write_molecule_file(const std::string& path, const MoleculeState& m);

/// Single bonds from covalent radii: d(i,j) < r_i + r_j + tolerance.
/// Used for bond-free XYZ input before stability scoring.
MatI infer_single_bonds(const MoleculeState& m, double tolerance = 0.4);

/// Allowed total valences per (element, formal charge).
class ValenceTable {
 public:
  struct Entry {
    std::set<int> neutral;
    /// Valence shift per unit charge for charges without an explicit entry:
    /// +1 for N/O-like (N+ is 4-valent, O- is 1-valent), -1 for C-like.
    int charge_shift = 1;
    std::map<int, std::set<int>> by_charge;
  };

  /// H, C, N, O, F, P, S, Cl, Br, I.
  static ValenceTable defaults();

  void set(int atomic_number, Entry entry) { entries_[atomic_number] = std::move(entry); }
  bool supports(int atomic_number) const { return entries_.count(atomic_number) > 0; }

  /// Throws InputError naming the element when it is not in the table.
  std::set<int> allowed(int atomic_number, int charge) const;

 private:
  std::map<int, Entry> entries_;
};

struct StabilityResult {
  std::vector<bool> atom_stable;
  bool mol_stable = false;
};

/// Atom i is stable iff its bond-order sum (aromatic = 1.5, rounded half up)
/// is an allowed valence for its element and charge.
StabilityResult stability(const MoleculeState& m, const ValenceTable& table);

/// Permutation- and rotation-invariant key: sorted per-atom signatures plus
/// the sorted spectrum of the bond-order matrix rounded to 1e-6. Distinct
/// non-isomorphic graphs can collide; isomorphic ones never differ.
std::string fingerprint(const MoleculeState& m);

/// Fraction of distinct fingerprints. Throws InputError on an empty list.
double uniqueness(const std::vector<MoleculeState>& mols);

struct MetricsReport {
  double atom_stability = 0.0;
  double mol_stability = 0.0;
  double uniqueness = 0.0;
  int n_samples = 0;
};

MetricsReport evaluate(const std::vector<MoleculeState>& mols, const ValenceTable& table);

}  // namespace canonflow::molecule
