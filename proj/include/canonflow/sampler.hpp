#pragma once

#include "canonflow/common.hpp"
#include "canonflow/flowcore.hpp"
#include "canonflow/molecule.hpp"
#include "canonflow/symgroup.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace canonflow::sampler {

using flow::FlowModel;
using flow::GraphState;

enum class Regime { kA, kB };
/// How Regime B refreshes ranks after each step.
enum class Rerank { kPredict, kCanonicalize };
enum class HaarGroup { kNone, kPerm, kPermSO3 };

HaarGroup parse_haar_group(const std::string& s);

struct SampleConfig {
  int steps = 20;
  Regime regime = Regime::kA;
  Rerank rerank = Rerank::kPredict;
  double cfg_scale = 1.0;
  bool aligned_prior = true;
  HaarGroup group = HaarGroup::kNone;
  std::uint64_t seed = 0;
  /// Atom count per sample; 0 draws from the training sizes.
  int n_atoms = 0;
};

/// Instrumentation counters.
struct SampleStats {
  long model_calls = 0;
  long canonicalizer_calls = 0;
  long rank_estimates = 0;
};

struct GraphPrediction {
  MatX3 velocity;
  Mat type_logits;
  Mat charge_logits;
  Mat bond_logits;  ///< ordered pairs i != j, row-major over i
  Vec rank;
};

GraphPrediction predict(const FlowModel& model, tape::ParamStore& params, const GraphState& z, double t,
                        const std::vector<double>& ranks, bool pe_dropped, SampleStats* stats = nullptr);

/// v_u + w (v_c - v_u) on velocities and logits; w = 1 runs only the
/// conditional pass and w = 0 only the unconditional one.
GraphPrediction guided(const FlowModel& model, tape::ParamStore& params, const GraphState& z, double t,
                       const std::vector<double>& ranks, double cfg_scale, SampleStats* stats = nullptr);

/// One Euler step t_from -> t_to (< t_from). Categorical entries switch to
/// a class drawn from the head with probability (t_from - t_to) / t_from.
GraphState euler_step(const FlowModel& model, tape::ParamStore& params, const GraphState& z, double t_from,
                      double t_to, const std::vector<double>& ranks, double cfg_scale, Rng& rng,
                      SampleStats* stats = nullptr);

/// Rank head output scaled to the PE range [0, (N-1)/N]; falls back to
/// index ranks when the head range is below 1e-6.
std::vector<double> rank_estimate(const FlowModel& model, tape::ParamStore& params, const GraphState& z, double t,
                                  const std::vector<double>& ranks, SampleStats* stats = nullptr);

struct PcsResult {
  GraphState state;
  std::vector<double> ranks;
  std::vector<int> order;  ///< gather order applied to the input
};

/// Projection onto the canonical slice: spectral S_N canonicalization of
/// the intermediate state, atoms reordered and coordinates centered.
PcsResult pcs_step(const GraphState& z, const flow::Vocabulary& vocab, SampleStats* stats = nullptr);

std::vector<molecule::MoleculeState> sample(const FlowModel& model, int n_samples, const SampleConfig& cfg,
                                            SampleStats* stats = nullptr);

/// Independent group element per sample.
std::vector<molecule::MoleculeState> haar_randomize(const std::vector<molecule::MoleculeState>& samples,
                                                    HaarGroup group, Rng& rng);

/// Point-model sampling with optional finite-group randomization.
Mat sample_points(const FlowModel& model, int n, int steps, bool randomize, Rng& rng);

}  // namespace canonflow::sampler
