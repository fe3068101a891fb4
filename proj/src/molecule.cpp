#include "canonflow/molecule.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace canonflow::molecule {

namespace {

constexpr std::array<std::string_view, 54> kSymbols = {
    "X",  "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al",
    "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co",
    "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb",
    "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I"};

double covalent_radius(int z) {
  switch (z) {
    case 1: return 0.31;
    case 5: return 0.84;
    case 6: return 0.76;
    case 7: return 0.71;
    case 8: return 0.66;
    case 9: return 0.57;
    case 14: return 1.11;
    case 15: return 1.07;
    case 16: return 1.05;
    case 17: return 1.02;
    case 35: return 1.20;
    case 53: return 1.39;
    default: return 1.5;
  }
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

double to_double(const std::string& s, int line) {
  double v = 0.0;
  std::size_t used = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError("expected a number, got '" + s + "'", line);
  }
  if (used != s.size() || !std::isfinite(v)) throw ParseError("bad number '" + s + "'", line);
  return v;
}

std::optional<int> to_int(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

int sdf_charge_code(int code) {
  switch (code) {
    case 0: return 0;
    case 1: return 3;
    case 2: return 2;
    case 3: return 1;
    case 5: return -1;
    case 6: return -2;
    case 7: return -3;
    default: return 0;  // 4 = doublet radical, carries no formal charge
  }
}

}  // namespace

MoleculeState MoleculeState::from_coords(const MatX3& x, std::vector<int> types) {
  const auto n = static_cast<Eigen::Index>(types.size());
  return MoleculeState(x, std::move(types), std::vector<int>(n, 0), MatI::Zero(n, n));
}

void MoleculeState::validate() const {
  const auto n = static_cast<Eigen::Index>(atom_types.size());
  if (n < 1) throw InputError("molecule has no atoms");
  if (coords.rows() != n) throw InputError("coordinate rows do not match atom count");
  if (static_cast<Eigen::Index>(charges.size()) != n) throw InputError("charge count does not match atom count");
  if (bonds.rows() != n || bonds.cols() != n) throw InputError("bond matrix shape does not match atom count");
  if (!coords.allFinite()) throw InputError("non-finite coordinates");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (bonds(i, i) != 0) throw InputError("bond matrix diagonal must be zero");
    for (Eigen::Index j = 0; j < n; ++j) {
      if (bonds(i, j) != bonds(j, i)) throw InputError("bond matrix is not symmetric");
      if (bonds(i, j) < 0 || bonds(i, j) >= kNumBondClasses) throw InputError("invalid bond order");
    }
  }
}

int atomic_number(std::string_view symbol) {
  std::string s(symbol);
  if (s.empty()) throw InputError("empty element symbol");
  if (std::isdigit(static_cast<unsigned char>(s[0]))) {
    auto z = to_int(s);
    if (!z || *z < 1 || *z >= static_cast<int>(kSymbols.size())) throw InputError("unknown element '" + s + "'");
    return *z;
  }
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  for (std::size_t i = 1; i < s.size(); ++i) s[i] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
  for (std::size_t z = 1; z < kSymbols.size(); ++z) {
    if (kSymbols[z] == s) return static_cast<int>(z);
  }
  throw InputError("unknown element '" + std::string(symbol) + "'");
}

std::string element_symbol(int z) {
  if (z < 1 || z >= static_cast<int>(kSymbols.size())) throw InputError("unknown atomic number " + std::to_string(z));
  return std::string(kSymbols[z]);
}

MoleculeState parse_xyz(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || blank(lines[0])) throw ParseError("missing atom count", 1);
  const auto count_tok = tokens(lines[0]);
  const auto count = count_tok.size() == 1 ? to_int(count_tok[0]) : std::nullopt;
  if (!count || *count < 1) throw ParseError("malformed atom count '" + lines[0] + "'", 1);
  const int n = *count;
  if (static_cast<int>(lines.size()) < 2 + n) {
    throw ParseError("expected " + std::to_string(n) + " atom lines, found " +
                         std::to_string(std::max(0, static_cast<int>(lines.size()) - 2)),
                     static_cast<int>(lines.size()));
  }
  MatX3 x(n, 3);
  std::vector<int> types(n);
  for (int i = 0; i < n; ++i) {
    const int line_no = i + 3;
    const auto tok = tokens(lines[i + 2]);
    if (tok.size() < 4) throw ParseError("expected 'Element x y z'", line_no);
    try {
      types[i] = atomic_number(tok[0]);
    } catch (const InputError& e) {
      throw ParseError(e.what(), line_no);
    }
    for (int c = 0; c < 3; ++c) x(i, c) = to_double(tok[c + 1], line_no);
  }
  for (std::size_t l = 2 + n; l < lines.size(); ++l) {
    if (!blank(lines[l])) {
      throw ParseError("atom count says " + std::to_string(n) + " but more atom lines follow",
                       static_cast<int>(l) + 1);
    }
  }
  return MoleculeState::from_coords(x, std::move(types));
}

std::string to_xyz(const MoleculeState& m, std::string_view comment) {
  std::ostringstream out;
  out << m.size() << '\n' << comment << '\n';
  out << std::setprecision(10) << std::fixed;
  for (int i = 0; i < m.size(); ++i) {
    out << element_symbol(m.atom_types[i]) << ' ' << m.coords(i, 0) << ' ' << m.coords(i, 1) << ' '
        << m.coords(i, 2) << '\n';
  }
  return out.str();
}

MoleculeState parse_sdf(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.size() < 4) throw ParseError("truncated header", static_cast<int>(lines.size()));
  const std::string& counts = lines[3];
  std::optional<int> n_atoms, n_bonds;
  if (counts.size() >= 6) {
    n_atoms = to_int(std::string_view(counts).substr(0, 3));
    n_bonds = to_int(std::string_view(counts).substr(3, 3));
  }
  if (!n_atoms || !n_bonds) {
    const auto tok = tokens(counts);
    if (tok.size() >= 2) {
      n_atoms = to_int(tok[0]);
      n_bonds = to_int(tok[1]);
    }
  }
  if (!n_atoms || !n_bonds || *n_atoms < 1 || *n_bonds < 0) throw ParseError("bad counts line '" + counts + "'", 4);
  const int n = *n_atoms;
  const int nb = *n_bonds;
  if (static_cast<int>(lines.size()) < 4 + n + nb) throw ParseError("truncated atom or bond block", static_cast<int>(lines.size()));

  MatX3 x(n, 3);
  std::vector<int> types(n), charges(n, 0);
  for (int i = 0; i < n; ++i) {
    const int line_no = 5 + i;
    const auto tok = tokens(lines[4 + i]);
    if (tok.size() < 4) throw ParseError("expected 'x y z symbol'", line_no);
    for (int c = 0; c < 3; ++c) x(i, c) = to_double(tok[c], line_no);
    try {
      types[i] = atomic_number(tok[3]);
    } catch (const InputError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (tok.size() >= 6) {
      if (auto code = to_int(tok[5])) charges[i] = sdf_charge_code(*code);
    }
  }

  MatI bonds = MatI::Zero(n, n);
  for (int b = 0; b < nb; ++b) {
    const int line_no = 5 + n + b;
    const std::string& line = lines[4 + n + b];
    std::optional<int> a1, a2, order;
    if (line.size() >= 9) {
      a1 = to_int(std::string_view(line).substr(0, 3));
      a2 = to_int(std::string_view(line).substr(3, 3));
      order = to_int(std::string_view(line).substr(6, 3));
    }
    if (!a1 || !a2 || !order) {
      const auto tok = tokens(line);
      if (tok.size() < 3) throw ParseError("expected 'a1 a2 order'", line_no);
      a1 = to_int(tok[0]);
      a2 = to_int(tok[1]);
      order = to_int(tok[2]);
    }
    if (!a1 || !a2 || !order) throw ParseError("malformed bond line", line_no);
    if (*a1 < 1 || *a1 > n || *a2 < 1 || *a2 > n) {
      throw ParseError("bond references atom " + std::to_string(std::max(*a1, *a2)) + " but only " +
                           std::to_string(n) + " atoms exist",
                       line_no);
    }
    if (*a1 == *a2) throw ParseError("self bond", line_no);
    if (*order < 1 || *order > 4) throw ParseError("unsupported bond type " + std::to_string(*order), line_no);
    bonds(*a1 - 1, *a2 - 1) = *order;
    bonds(*a2 - 1, *a1 - 1) = *order;
  }

  // Properties block: M  CHG overrides the atom-block charge field.
  bool first_chg = true;
  for (std::size_t l = 4 + n + nb; l < lines.size(); ++l) {
    const std::string& line = lines[l];
    if (line.rfind("M  END", 0) == 0 || line.rfind("$$$$", 0) == 0) break;
    if (line.rfind("M  CHG", 0) != 0) continue;
    if (first_chg) {
      std::fill(charges.begin(), charges.end(), 0);
      first_chg = false;
    }
    const auto tok = tokens(line.substr(6));
    const auto count = tok.empty() ? std::nullopt : to_int(tok[0]);
    if (!count || static_cast<int>(tok.size()) < 1 + 2 * *count) throw ParseError("malformed M  CHG line", static_cast<int>(l) + 1);
    for (int k = 0; k < *count; ++k) {
      auto atom = to_int(tok[1 + 2 * k]);
      auto value = to_int(tok[2 + 2 * k]);
      if (!atom || !value || *atom < 1 || *atom > n) throw ParseError("bad M  CHG entry", static_cast<int>(l) + 1);
      charges[*atom - 1] = *value;
    }
  }
  return MoleculeState(x, std::move(types), std::move(charges), std::move(bonds));
}

std::string to_sdf(const MoleculeState& m, std::string_view title) {
  std::ostringstream out;
  const int n = m.size();
  int nb = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) nb += m.bonds(i, j) != 0;
  out << title << "\n  canonflow\n\n";
  out << std::setw(3) << n << std::setw(3) << nb << "  0  0  0  0  0  0  0  0999 V2000\n";
  out << std::fixed << std::setprecision(4);
  for (int i = 0; i < n; ++i) {
    const std::string sym = element_symbol(m.atom_types[i]);
    out << std::setw(10) << m.coords(i, 0) << std::setw(10) << m.coords(i, 1) << std::setw(10) << m.coords(i, 2)
        << ' ' << std::left << std::setw(3) << sym << std::right << " 0  0  0  0  0  0  0  0  0  0  0  0\n";
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (m.bonds(i, j) != 0) out << std::setw(3) << i + 1 << std::setw(3) << j + 1 << std::setw(3) << m.bonds(i, j) << "  0\n";
  std::vector<int> charged;
  for (int i = 0; i < n; ++i)
    if (m.charges[i] != 0) charged.push_back(i);
  for (std::size_t k = 0; k < charged.size(); k += 8) {
    const std::size_t cnt = std::min<std::size_t>(8, charged.size() - k);
    out << "M  CHG" << std::setw(3) << cnt;
    for (std::size_t c = 0; c < cnt; ++c)
      out << std::setw(4) << charged[k + c] + 1 << std::setw(4) << m.charges[charged[k + c]];
    out << '\n';
  }
  out << "M  END\n$$$$\n";
  return out.str();
}

MoleculeState read_molecule_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto dot = path.find_last_of('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == "xyz") return parse_xyz(text);
  if (ext == "sdf" || ext == "mol") return parse_sdf(text);
  throw InputError("unsupported molecule file extension '." + ext + "'");
}

void write_molecule_file(const std::string& path, const MoleculeState& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  const bool sdf = path.size() >= 4 && (path.ends_with(".sdf") || path.ends_with(".mol"));
  out << (sdf ? to_sdf(m) : to_xyz(m));
  if (!out) throw Error("write failed for '" + path + "'");
}

MatI infer_single_bonds(const MoleculeState& m, double tolerance) {
  const int n = m.size();
  MatI bonds = MatI::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = (m.coords.row(i) - m.coords.row(j)).norm();
      if (d < covalent_radius(m.atom_types[i]) + covalent_radius(m.atom_types[j]) + tolerance) {
        bonds(i, j) = bonds(j, i) = kSingle;
      }
    }
  }
  return bonds;
}

ValenceTable ValenceTable::defaults() {
  ValenceTable t;
  t.set(1, {{1}, -1, {{1, {0}}, {-1, {0}}}});
  t.set(6, {{4}, -1, {{1, {3}}, {-1, {3}}}});
  t.set(7, {{3}, 1, {}});
  t.set(8, {{2}, 1, {}});
  t.set(9, {{1}, 1, {}});
  t.set(15, {{3, 5}, 1, {{1, {4}}}});
  t.set(16, {{2, 4, 6}, 1, {{1, {3}}, {-1, {1}}}});
  t.set(17, {{1}, 1, {}});
  t.set(35, {{1}, 1, {}});
  t.set(53, {{1}, 1, {}});
  return t;
}

std::set<int> ValenceTable::allowed(int z, int charge) const {
  const auto it = entries_.find(z);
  if (it == entries_.end()) {
    std::string name;
    try {
      name = element_symbol(z);
    } catch (const InputError&) {
      name = "Z=" + std::to_string(z);
    }
    throw InputError("unsupported element " + name + " in valence table");
  }
  const Entry& e = it->second;
  if (charge == 0) return e.neutral;
  if (auto c = e.by_charge.find(charge); c != e.by_charge.end()) return c->second;
  std::set<int> out;
  for (int v : e.neutral) {
    const int adjusted = e.charge_shift > 0 ? v + charge : v - std::abs(charge);
    if (adjusted >= 0) out.insert(adjusted);
  }
  return out;
}

StabilityResult stability(const MoleculeState& m, const ValenceTable& table) {
  const int n = m.size();
  StabilityResult r;
  r.atom_stable.resize(n);
  r.mol_stable = true;
  for (int i = 0; i < n; ++i) {
    const auto allowed = table.allowed(m.atom_types[i], m.charges[i]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const int b = m.bonds(i, j);
      sum += b == kAromatic ? 1.5 : static_cast<double>(b);
    }
    const int valence = static_cast<int>(std::floor(sum + 0.5));
    r.atom_stable[i] = allowed.count(valence) > 0;
    r.mol_stable = r.mol_stable && r.atom_stable[i];
  }
  return r;
}

std::string fingerprint(const MoleculeState& m) {
  const int n = m.size();
  std::vector<std::string> atoms;
  atoms.reserve(n);
  Mat order = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    std::vector<int> incident;
    for (int j = 0; j < n; ++j) {
      const int b = m.bonds(i, j);
      if (b != 0) incident.push_back(b);
      order(i, j) = b == kAromatic ? 1.5 : static_cast<double>(b);
    }
    std::sort(incident.begin(), incident.end());
    std::string sig = std::to_string(m.atom_types[i]) + ":" + std::to_string(m.charges[i]) + ":";
    for (int b : incident) sig += std::to_string(b);
    atoms.push_back(std::move(sig));
  }
  std::sort(atoms.begin(), atoms.end());
  Eigen::SelfAdjointEigenSolver<Mat> es(order, Eigen::EigenvaluesOnly);
  std::string key;
  for (const auto& a : atoms) key += a + ";";
  key += "|";
  for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
    key += std::to_string(std::llround(es.eigenvalues()(k) * 1e6)) + ",";
  }
  return key;
}

double uniqueness(const std::vector<MoleculeState>& mols) {
  if (mols.empty()) throw InputError("uniqueness: empty molecule list");
  std::set<std::string> keys;
  for (const auto& m : mols) keys.insert(fingerprint(m));
  return static_cast<double>(keys.size()) / static_cast<double>(mols.size());
}

MetricsReport evaluate(const std::vector<MoleculeState>& mols, const ValenceTable& table) {
  if (mols.empty()) throw InputError("evaluate: empty molecule list");
  MetricsReport report;
  long stable_atoms = 0, total_atoms = 0, stable_mols = 0;
  for (const auto& m : mols) {
    const auto s = stability(m, table);
    stable_atoms += std::count(s.atom_stable.begin(), s.atom_stable.end(), true);
    total_atoms += m.size();
    stable_mols += s.mol_stable ? 1 : 0;
  }
  report.n_samples = static_cast<int>(mols.size());
  report.atom_stability = static_cast<double>(stable_atoms) / static_cast<double>(total_atoms);
  report.mol_stability = static_cast<double>(stable_mols) / static_cast<double>(mols.size());
  report.uniqueness = uniqueness(mols);
  return report;
}

}  // namespace canonflow::molecule
