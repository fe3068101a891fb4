#pragma once

#include "canonflow/common.hpp"
#include "canonflow/tape.hpp"

#include <nlohmann/json_fwd.hpp>

#include <utility>
#include <vector>

namespace canonflow::flow {

/// Small three-stream network: node features H, K coordinate sets CS and a
/// rank stream R, coupled through pairwise messages with mean aggregation.
struct CanonLiteConfig {
  int n_types = 5;
  int n_charges = 3;
  int n_bonds = 5;
  int n_sets = 8;      ///< K
  int d_model = 64;
  int d_rank = 16;
  int n_layers = 3;
  int d_pe = 16;
  double pe_scale = 10000.0;
};

void to_json(nlohmann::json& j, const CanonLiteConfig& c);
void from_json(const nlohmann::json& j, CanonLiteConfig& c);

/// PE(r, 2k) = sin(r M / 10000^(2k/d)), PE(r, 2k+1) = cos(...).
Vec canonical_pe(double rank, int d_pe, double max_scale = 10000.0);

/// Registers every parameter of the network in a fresh store.
tape::ParamStore init_canonlite(const CanonLiteConfig& cfg, Rng& rng);

/// Noisy state seen by the network. Type and charge entries are vocabulary
/// indices; bonds hold edge classes.
struct GraphInput {
  MatX3 coords;
  std::vector<int> types;
  std::vector<int> charges;
  MatI bonds;
  double t = 0.0;
  std::vector<double> ranks;  ///< fed to PE
  bool pe_dropped = false;
};

struct CanonLiteOutput {
  tape::Var velocity;       ///< N x 3
  tape::Var type_logits;    ///< N x n_types
  tape::Var charge_logits;  ///< N x n_charges
  tape::Var bond_logits;    ///< P x n_bonds over ordered pairs i != j
  tape::Var rank;           ///< N x 1 in [0, 1]
  std::vector<std::pair<int, int>> pairs;
};

CanonLiteOutput canonlite_forward(tape::Tape& tp, const CanonLiteConfig& cfg, const GraphInput& in);

struct LossWeights {
  double type = 0.2;
  double bond = 1.0;
  double charge = 1.0;
  double rank = 0.1;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

struct GraphTargets {
  MatX3 velocity;
  std::vector<int> types;
  std::vector<int> charges;
  MatI bonds;
  std::vector<double> ranks;  ///< normalised to [0, 1]
};

struct LossTerms {
  tape::Var total;
  double coord = 0.0;
  double type = 0.0;
  double bond = 0.0;
  double charge = 0.0;
  double rank = 0.0;
};

/// coord MSE + weighted cross-entropies (bond CE summed over i != j and
/// divided by N^2) + rank MSE.
LossTerms graph_loss(tape::Tape& tp, const CanonLiteOutput& out, const GraphTargets& target, const LossWeights& w);

/// Time-conditioned MLP velocity field for point clouds in R^d.
struct PointMlpConfig {
  int dim = 2;
  int hidden = 64;
  int n_layers = 3;
  int n_freq = 4;
};

void to_json(nlohmann::json& j, const PointMlpConfig& c);
void from_json(const nlohmann::json& j, PointMlpConfig& c);

tape::ParamStore init_point_mlp(const PointMlpConfig& cfg, Rng& rng);

/// Rows of x share the per-row times t (B x 1). Returns B x dim.
tape::Var point_mlp_forward(tape::Tape& tp, const PointMlpConfig& cfg, const Mat& x, const Vec& t);

}  // namespace canonflow::flow
