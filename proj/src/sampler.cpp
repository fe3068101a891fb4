#include "canonflow/sampler.hpp"

#include "canonflow/canonicalizer.hpp"
#include "canonflow/priors.hpp"

#include <algorithm>
#include <cmath>

namespace canonflow::sampler {

using molecule::MoleculeState;

HaarGroup parse_haar_group(const std::string& s) {
  if (s == "none" || s == "off") return HaarGroup::kNone;
  if (s == "perm") return HaarGroup::kPerm;
  if (s == "perm_so3" || s == "perm-so3" || s == "on") return HaarGroup::kPermSO3;
  throw InputError("unknown group: " + s);
}

GraphPrediction predict(const FlowModel& model, tape::ParamStore& params, const GraphState& z, double t,
                        const std::vector<double>& ranks, bool pe_dropped, SampleStats* stats) {
  if (model.kind != flow::ModelKind::kCanonLite) throw InputError("predict: not a graph model");
  flow::GraphInput in;
  in.coords = z.coords;
  in.types = z.types;
  in.charges = z.charges;
  in.bonds = z.bonds;
  in.t = t;
  in.ranks = ranks;
  in.pe_dropped = pe_dropped;
  tape::Tape tp(&params);
  const auto out = flow::canonlite_forward(tp, model.graph_cfg, in);
  if (stats) ++stats->model_calls;
  GraphPrediction p;
  p.velocity = tp.value(out.velocity);
  p.type_logits = tp.value(out.type_logits);
  p.charge_logits = tp.value(out.charge_logits);
  p.bond_logits = tp.value(out.bond_logits);
  p.rank = tp.value(out.rank).col(0);
  return p;
}

GraphPrediction guided(const FlowModel& model, tape::ParamStore& params, const GraphState& z, double t,
                       const std::vector<double>& ranks, double cfg_scale, SampleStats* stats) {
  if (cfg_scale < 0.0) throw InputError("cfg scale must be non-negative");
  if (cfg_scale == 1.0) return predict(model, params, z, t, ranks, false, stats);
  GraphPrediction u = predict(model, params, z, t, ranks, true, stats);
  if (cfg_scale == 0.0) return u;
  const GraphPrediction c = predict(model, params, z, t, ranks, false, stats);
  const double w = cfg_scale;
  u.velocity += w * (c.velocity - u.velocity);
  u.type_logits += w * (c.type_logits - u.type_logits);
  u.charge_logits += w * (c.charge_logits - u.charge_logits);
  u.bond_logits += w * (c.bond_logits - u.bond_logits);
  u.rank = c.rank;
  return u;
}

namespace {

int draw_from_logits(const Eigen::RowVectorXd& logits, Rng& rng) {
  const Vec p = (logits.array() - logits.maxCoeff()).exp().matrix().transpose();
  return priors::sample_category(p, rng);
}

int pair_row(int i, int j, int n) { return i * (n - 1) + (j < i ? j : j - 1); }

}  // namespace

GraphState euler_step(const FlowModel& model, tape::ParamStore& params, const GraphState& z, double t_from,
                      double t_to, const std::vector<double>& ranks, double cfg_scale, Rng& rng,
                      SampleStats* stats) {
  if (!(t_from > t_to) || t_to < 0.0 || t_from > 1.0) throw InputError("euler_step: need 1 >= t_from > t_to >= 0");
  const GraphPrediction p = guided(model, params, z, t_from, ranks, cfg_scale, stats);
  GraphState next = z;
  next.coords = z.coords + (t_to - t_from) * p.velocity;
  const double switch_p = (t_from - t_to) / t_from;
  const int n = z.size();
  for (int i = 0; i < n; ++i) {
    if (uniform01(rng) < switch_p) next.types[static_cast<std::size_t>(i)] = draw_from_logits(p.type_logits.row(i), rng);
    if (uniform01(rng) < switch_p) {
      next.charges[static_cast<std::size_t>(i)] = draw_from_logits(p.charge_logits.row(i), rng);
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (uniform01(rng) >= switch_p) continue;
      const Eigen::RowVectorXd l = 0.5 * (p.bond_logits.row(pair_row(i, j, n)) + p.bond_logits.row(pair_row(j, i, n)));
      next.bonds(i, j) = next.bonds(j, i) = draw_from_logits(l, rng);
    }
  }
  return next;
}

std::vector<double> rank_estimate(const FlowModel& model, tape::ParamStore& params, const GraphState& z, double t,
                                  const std::vector<double>& ranks, SampleStats* stats) {
  const int n = z.size();
  const GraphPrediction p = predict(model, params, z, t, ranks, false, stats);
  if (stats) ++stats->rank_estimates;
  if (n < 2 || p.rank.maxCoeff() - p.rank.minCoeff() < 1e-6) return flow::index_ranks(n);
  std::vector<double> out(static_cast<std::size_t>(n));
  const double scale = static_cast<double>(n - 1) / n;
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = p.rank(i) * scale;
  return out;
}

PcsResult pcs_step(const GraphState& z, const flow::Vocabulary& vocab, SampleStats* stats) {
  const MoleculeState m = flow::decode(z, vocab);
  const auto res = canon::canonicalize(m, canon::Group::kPerm);
  if (stats) ++stats->canonicalizer_calls;
  PcsResult out;
  out.order = symgroup::inverse_permutation(res.gauge.perm);
  const int n = z.size();
  out.state.coords = res.representative.coords;
  out.state.bonds = MatI(n, n);
  for (int i = 0; i < n; ++i) {
    const int src = out.order[static_cast<std::size_t>(i)];
    out.state.types.push_back(z.types[static_cast<std::size_t>(src)]);
    out.state.charges.push_back(z.charges[static_cast<std::size_t>(src)]);
    for (int j = 0; j < n; ++j) out.state.bonds(i, j) = z.bonds(src, out.order[static_cast<std::size_t>(j)]);
  }
  out.ranks = flow::index_ranks(n);
  return out;
}

std::vector<MoleculeState> sample(const FlowModel& model, int n_samples, const SampleConfig& cfg, SampleStats* stats) {
  if (model.kind != flow::ModelKind::kCanonLite) throw InputError("sample: checkpoint is not a graph model");
  if (cfg.steps < 1) throw InputError("sample: steps must be >= 1");
  if (cfg.cfg_scale < 0.0) throw InputError("sample: cfg scale must be non-negative");
  if (n_samples < 0) throw InputError("sample: negative sample count");
  const auto& pri = model.graph_priors;
  if (cfg.n_atoms <= 0 && pri.sizes.empty()) throw InputError("sample: no atom count given and none recorded");
  flow::MoleculePriors prior = pri;
  if (!cfg.aligned_prior) prior.isotropic_coords = true;
  tape::ParamStore params = model.inference_params();
  std::vector<MoleculeState> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(s)};
    Rng rng(seq);
    int n = cfg.n_atoms;
    if (n <= 0) {
      std::uniform_int_distribution<std::size_t> pick(0, pri.sizes.size() - 1);
      n = pri.sizes[pick(rng)];
    }
    GraphState z = flow::sample_prior_graph(prior, n, rng);
    std::vector<double> ranks = flow::index_ranks(n);
    for (int k = cfg.steps; k > 0; --k) {
      const double t_from = static_cast<double>(k) / cfg.steps;
      const double t_to = static_cast<double>(k - 1) / cfg.steps;
      z = euler_step(model, params, z, t_from, t_to, ranks, cfg.cfg_scale, rng, stats);
      if (cfg.regime == Regime::kB && k > 1) {
        if (cfg.rerank == Rerank::kCanonicalize) {
          auto proj = pcs_step(z, model.vocab, stats);
          z = std::move(proj.state);
          ranks = std::move(proj.ranks);
        } else {
          ranks = rank_estimate(model, params, z, t_to, ranks, stats);
        }
      }
    }
    out.push_back(flow::decode(z, model.vocab));
  }
  if (cfg.group != HaarGroup::kNone) {
    Rng rng(cfg.seed ^ 0x4a4152ULL);
    out = haar_randomize(out, cfg.group, rng);
  }
  return out;
}

std::vector<MoleculeState> haar_randomize(const std::vector<MoleculeState>& samples, HaarGroup group, Rng& rng) {
  if (group == HaarGroup::kNone) return samples;
  std::vector<MoleculeState> out;
  out.reserve(samples.size());
  for (const auto& m : samples) {
    symgroup::GroupElement g = symgroup::haar_sample(m.size(), rng);
    if (group == HaarGroup::kPerm) g.rot = Mat3::Identity();
    g.trans = Vec3::Zero();
    out.push_back(symgroup::act(g, m));
  }
  return out;
}

Mat sample_points(const FlowModel& model, int n, int steps, bool randomize, Rng& rng) {
  Mat z = flow::sample_points(model, n, steps, rng);
  if (randomize && model.point_group != "none") z = symgroup::finite_randomize(flow::group_by_name(model.point_group), z, rng);
  return z;
}

}  // namespace canonflow::sampler
