#pragma once

#include "canonflow/canonlite.hpp"
#include "canonflow/common.hpp"
#include "canonflow/molecule.hpp"
#include "canonflow/priors.hpp"
#include "canonflow/symgroup.hpp"
#include "canonflow/tape.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace canonflow::flow {

// Time convention: t = 0 is data, t = 1 is noise; u = z1 - z0.

enum class TimeDist { kUniform, kBeta21 };

std::string time_dist_name(TimeDist d);
TimeDist parse_time_dist(const std::string& s);

/// kBeta21 puts Beta(2, 1) mass on data proximity 1 - t.
double sample_time(TimeDist d, Rng& rng);

/// r + N(0, sigma_r^2) * (1 - t); pass data proximity as t so the noise
/// vanishes at the data end.
double rank_noise(double rank, double t, double sigma_r, Rng& rng);

enum class OtPolicy { kNone, kExact, kSinkhorn, kAnneal };

std::string ot_policy_name(OtPolicy p);
OtPolicy parse_ot_policy(const std::string& s);

struct TrainConfig {
  double lr = 3e-4;
  int warmup_steps = 100;
  int epochs = 10;
  int steps_per_epoch = 50;  ///< point training only; graph epochs cover the data
  int batch_size = 16;
  TimeDist time_dist = TimeDist::kBeta21;
  double path_sigma = 0.2;
  double rank_sigma = 0.05;
  double p_drop = 0.1;
  LossWeights weights;
  double ema_decay = 0.999;
  double clip_norm = 1.0;
  OtPolicy ot = OtPolicy::kNone;
  std::uint64_t seed = 0;
  int eval_steps = 10;    ///< Euler steps for the per-epoch energy distance
  int eval_samples = 500;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Maps atomic numbers and formal charges to class indices.
struct Vocabulary {
  std::vector<int> atomic_numbers;
  std::vector<int> charges;

  int type_index(int z) const;
  int charge_index(int q) const;
  static Vocabulary from_data(const std::vector<molecule::MoleculeState>& mols);
};

void to_json(nlohmann::json& j, const Vocabulary& v);
void from_json(const nlohmann::json& j, Vocabulary& v);

/// Molecule in class-index form.
struct GraphState {
  MatX3 coords;
  std::vector<int> types;
  std::vector<int> charges;
  MatI bonds;

  int size() const { return static_cast<int>(coords.rows()); }
};

GraphState encode(const molecule::MoleculeState& m, const Vocabulary& vocab);
molecule::MoleculeState decode(const GraphState& g, const Vocabulary& vocab);

/// i / N, the PE input of a canonically ordered state.
std::vector<double> index_ranks(int n);
/// i / (N - 1), the rank-head target (0 for a single atom).
std::vector<double> normalized_ranks(int n);

struct MoleculePriors {
  bool isotropic_coords = false;
  priors::RankGaussianPrior coords;
  priors::PositionalCategoricalPrior types;
  priors::PositionalCategoricalPrior charges;
  Vec bond_base;  ///< marginal edge-class distribution, smoothed
  std::vector<int> sizes;  ///< training atom counts, drawn from when sampling
};

void to_json(nlohmann::json& j, const MoleculePriors& p);
void from_json(const nlohmann::json& j, MoleculePriors& p);

/// Inputs must be canonically ordered and centered.
MoleculePriors fit_molecule_priors(const std::vector<GraphState>& canonical, int n_types, int n_charges,
                                   int n_bins = 10, bool isotropic_coords = false);

GraphState sample_prior_graph(const MoleculePriors& p, int n, Rng& rng);

struct PathSample {
  double t = 0.0;
  GraphState z_t;
  MatX3 target_velocity;
  GraphState data;
};

/// Categorical entries keep the data class with probability 1 - t and take
/// the noise class otherwise; bonds are decided once per unordered pair.
PathSample interpolate(const GraphState& z0, const GraphState& z1, double t, double sigma, Rng& rng);

/// Point-cloud form: rows are samples, t per row.
struct PointPath {
  Mat z_t;
  Mat target;
  Vec t;
};

PointPath interpolate_points(const Mat& z0, const Mat& z1, const Vec& t, double sigma, Rng& rng);

enum class ModelKind { kCanonLite, kPointMlp };

struct FlowModel {
  ModelKind kind = ModelKind::kPointMlp;
  CanonLiteConfig graph_cfg;
  PointMlpConfig point_cfg;
  tape::ParamStore params;
  std::vector<Mat> ema;  ///< shadow values in parameter order; empty if unused
  TrainConfig train_cfg;
  Vocabulary vocab;
  MoleculePriors graph_priors;
  priors::GaussianPrior point_prior;
  /// Finite group for post-hoc randomization of point samples ("none", "c4", ...).
  std::string point_group = "none";

  /// EMA weights when available.
  tape::ParamStore inference_params() const;
};

struct TraceRow {
  int epoch = 0;
  double loss = 0.0;
  double coord = 0.0;
  double type = 0.0;
  double bond = 0.0;
  double charge = 0.0;
  double rank = 0.0;
  double val_loss = 0.0;
  double val_energy = -1.0;  ///< negative when not evaluated
};

struct TrainResult {
  FlowModel model;
  std::vector<TraceRow> trace;
};

/// Graph flow matching on canonical molecules (ordered, centered).
TrainResult train_graphs(const std::vector<molecule::MoleculeState>& canonical,
                         const std::vector<molecule::MoleculeState>& validation, const TrainConfig& cfg,
                         const CanonLiteConfig& arch, int prior_bins = 10, bool isotropic_coords = false);

struct PointTask {
  Mat train;
  Mat validation;
  priors::GaussianPrior prior;
  /// Group used to randomize samples before the energy distance; empty = none.
  std::optional<symgroup::FiniteGroupSpec> haar_group;
  std::string group_name = "none";
  /// Reference for the energy distance (ambient target); empty = skip.
  Mat eval_target;
};

TrainResult train_points(const PointTask& task, const TrainConfig& cfg, const PointMlpConfig& arch);

/// Mean flow-matching loss over a fixed-seed pass of the data.
double point_validation_loss(const FlowModel& model, const Mat& data, std::uint64_t seed);

/// Euler integration from t = 1 to t = 0 on a uniform grid.
Mat sample_points(const FlowModel& model, int n, int steps, Rng& rng);

Mat point_velocity(const FlowModel& model, const tape::ParamStore& params, const Mat& z, double t);

void save_checkpoint(const FlowModel& model, const std::string& path);
FlowModel load_checkpoint(const std::string& path);
nlohmann::json checkpoint_json(const FlowModel& model);
FlowModel checkpoint_from_json(const nlohmann::json& j);

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

/// C4-symmetric mixture of four Gaussian blobs at (+-2, 0), (0, +-2).
Mat c4_blobs(int n, Rng& rng, double radius = 2.0, double stddev = 0.3);

/// C4 blob task. canonical = true maps data onto the slice, fits an aligned
/// Gaussian prior and randomizes samples over C4; otherwise the model sees
/// the symmetric data with a standard normal prior.
PointTask c4_blob_task(bool canonical, Rng& rng, int n_train = 4000, int n_val = 1000, int n_target = 1000);

/// Reference direction defining the canonical wedge of cyclic groups.
Mat canonical_reference(int dim);

/// Maps every row to its orbit representative under spec.
Mat canonicalize_points(const Mat& points, const symgroup::FiniteGroupSpec& spec);

symgroup::FiniteGroupSpec group_by_name(const std::string& name);

}  // namespace canonflow::flow
