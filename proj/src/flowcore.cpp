#include "canonflow/flowcore.hpp"

#include "canonflow/coupling.hpp"
#include "canonflow/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace canonflow::flow {

using molecule::MoleculeState;
using tape::ParamStore;
using tape::Tape;

std::string time_dist_name(TimeDist d) { return d == TimeDist::kUniform ? "uniform" : "beta21"; }

TimeDist parse_time_dist(const std::string& s) {
  if (s == "uniform") return TimeDist::kUniform;
  if (s == "beta21" || s == "beta(2,1)") return TimeDist::kBeta21;
  throw InputError("unknown time distribution: " + s);
}

double sample_time(TimeDist d, Rng& rng) {
  const double u = uniform01(rng);
  if (d == TimeDist::kUniform) return u;
  return 1.0 - std::sqrt(u);
}

double rank_noise(double rank, double t, double sigma_r, Rng& rng) {
  if (sigma_r <= 0.0) return rank;
  return rank + sigma_r * standard_normal(rng) * (1.0 - t);
}

std::string ot_policy_name(OtPolicy p) {
  switch (p) {
    case OtPolicy::kNone: return "none";
    case OtPolicy::kExact: return "exact";
    case OtPolicy::kSinkhorn: return "sinkhorn";
    case OtPolicy::kAnneal: return "anneal";
  }
  return "none";
}

OtPolicy parse_ot_policy(const std::string& s) {
  if (s == "none" || s == "off") return OtPolicy::kNone;
  if (s == "exact" || s == "on") return OtPolicy::kExact;
  if (s == "sinkhorn") return OtPolicy::kSinkhorn;
  if (s == "anneal") return OtPolicy::kAnneal;
  throw InputError("unknown OT policy: " + s);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"warmup_steps", c.warmup_steps},
       {"epochs", c.epochs},
       {"steps_per_epoch", c.steps_per_epoch},
       {"batch_size", c.batch_size},
       {"time_dist", time_dist_name(c.time_dist)},
       {"path_sigma", c.path_sigma},
       {"rank_sigma", c.rank_sigma},
       {"p_drop", c.p_drop},
       {"weights", c.weights},
       {"ema_decay", c.ema_decay},
       {"clip_norm", c.clip_norm},
       {"ot", ot_policy_name(c.ot)},
       {"seed", c.seed},
       {"eval_steps", c.eval_steps},
       {"eval_samples", c.eval_samples}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("lr").get_to(c.lr);
  j.at("warmup_steps").get_to(c.warmup_steps);
  j.at("epochs").get_to(c.epochs);
  j.at("steps_per_epoch").get_to(c.steps_per_epoch);
  j.at("batch_size").get_to(c.batch_size);
  c.time_dist = parse_time_dist(j.at("time_dist").get<std::string>());
  j.at("path_sigma").get_to(c.path_sigma);
  j.at("rank_sigma").get_to(c.rank_sigma);
  j.at("p_drop").get_to(c.p_drop);
  j.at("weights").get_to(c.weights);
  j.at("ema_decay").get_to(c.ema_decay);
  j.at("clip_norm").get_to(c.clip_norm);
  c.ot = parse_ot_policy(j.at("ot").get<std::string>());
  j.at("seed").get_to(c.seed);
  j.at("eval_steps").get_to(c.eval_steps);
  j.at("eval_samples").get_to(c.eval_samples);
}

namespace {

void validate_config(const TrainConfig& c) {
  if (c.lr <= 0.0) throw InputError("train: lr must be positive");
  if (c.epochs < 0 || c.steps_per_epoch < 1 || c.batch_size < 1 || c.warmup_steps < 0) {
    throw InputError("train: epochs, steps and batch size must be non-negative / positive");
  }
  if (c.p_drop < 0.0 || c.p_drop > 1.0) throw InputError("train: p_drop must lie in [0, 1]");
  if (c.path_sigma < 0.0 || c.rank_sigma < 0.0) throw InputError("train: noise scales must be non-negative");
  if (c.ema_decay < 0.0 || c.ema_decay >= 1.0) throw InputError("train: ema decay must lie in [0, 1)");
  if (c.eval_steps < 1 || c.eval_samples < 1) throw InputError("train: evaluation sizes must be positive");
}

int index_of(const std::vector<int>& v, int x, const char* what) {
  auto it = std::lower_bound(v.begin(), v.end(), x);
  if (it == v.end() || *it != x) throw InputError(std::string("vocabulary has no ") + what + " " + std::to_string(x));
  return static_cast<int>(it - v.begin());
}

}  // namespace

int Vocabulary::type_index(int z) const { return index_of(atomic_numbers, z, "atomic number"); }
int Vocabulary::charge_index(int q) const { return index_of(charges, q, "charge"); }

Vocabulary Vocabulary::from_data(const std::vector<MoleculeState>& mols) {
  std::set<int> zs, qs{0};
  for (const auto& m : mols) {
    zs.insert(m.atom_types.begin(), m.atom_types.end());
    qs.insert(m.charges.begin(), m.charges.end());
  }
  if (zs.empty()) throw InputError("vocabulary: no atoms");
  return {{zs.begin(), zs.end()}, {qs.begin(), qs.end()}};
}

void to_json(nlohmann::json& j, const Vocabulary& v) {
  j = {{"atomic_numbers", v.atomic_numbers}, {"charges", v.charges}};
}

void from_json(const nlohmann::json& j, Vocabulary& v) {
  j.at("atomic_numbers").get_to(v.atomic_numbers);
  j.at("charges").get_to(v.charges);
  if (!std::is_sorted(v.atomic_numbers.begin(), v.atomic_numbers.end()) ||
      !std::is_sorted(v.charges.begin(), v.charges.end())) {
    throw InputError("vocabulary JSON: entries must be sorted");
  }
}

GraphState encode(const MoleculeState& m, const Vocabulary& vocab) {
  m.validate();
  GraphState g;
  g.coords = m.coords;
  g.bonds = m.bonds;
  for (int z : m.atom_types) g.types.push_back(vocab.type_index(z));
  for (int q : m.charges) g.charges.push_back(vocab.charge_index(q));
  return g;
}

MoleculeState decode(const GraphState& g, const Vocabulary& vocab) {
  MoleculeState m;
  m.coords = g.coords;
  m.bonds = g.bonds;
  for (int t : g.types) m.atom_types.push_back(vocab.atomic_numbers.at(static_cast<std::size_t>(t)));
  for (int q : g.charges) m.charges.push_back(vocab.charges.at(static_cast<std::size_t>(q)));
  return m;
}

std::vector<double> index_ranks(int n) {
  std::vector<double> r(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = static_cast<double>(i) / n;
  return r;
}

std::vector<double> normalized_ranks(int n) {
  std::vector<double> r(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n && n > 1; ++i) r[static_cast<std::size_t>(i)] = static_cast<double>(i) / (n - 1);
  return r;
}

void to_json(nlohmann::json& j, const MoleculePriors& p) {
  j = {{"isotropic_coords", p.isotropic_coords},
       {"coords", p.coords},
       {"types", p.types},
       {"charges", p.charges},
       {"bond_base", std::vector<double>(p.bond_base.data(), p.bond_base.data() + p.bond_base.size())},
       {"sizes", p.sizes}};
}

void from_json(const nlohmann::json& j, MoleculePriors& p) {
  j.at("isotropic_coords").get_to(p.isotropic_coords);
  j.at("coords").get_to(p.coords);
  j.at("types").get_to(p.types);
  j.at("charges").get_to(p.charges);
  const auto b = j.at("bond_base").get<std::vector<double>>();
  p.bond_base = Eigen::Map<const Vec>(b.data(), static_cast<Eigen::Index>(b.size()));
  j.at("sizes").get_to(p.sizes);
}

MoleculePriors fit_molecule_priors(const std::vector<GraphState>& canonical, int n_types, int n_charges, int n_bins,
                                   bool isotropic_coords) {
  if (canonical.empty()) throw InputError("fit_molecule_priors: no molecules");
  std::vector<priors::RankedCategory> types, charges;
  std::vector<priors::RankedPoint> points;
  Vec bond_counts = Vec::Constant(molecule::kNumBondClasses, 1.0);
  MoleculePriors p;
  for (const auto& g : canonical) {
    p.sizes.push_back(g.size());
    const auto ranks = index_ranks(g.size());
    for (int i = 0; i < g.size(); ++i) {
      const double r = ranks[static_cast<std::size_t>(i)];
      types.push_back({r, g.types[static_cast<std::size_t>(i)]});
      charges.push_back({r, g.charges[static_cast<std::size_t>(i)]});
      points.push_back({r, g.coords.row(i).transpose()});
      for (int k = i + 1; k < g.size(); ++k) bond_counts(g.bonds(i, k)) += 1.0;
    }
  }
  p.isotropic_coords = isotropic_coords;
  p.coords = priors::fit_rank_gaussian(points, n_bins, 0.0);
  p.types = priors::fit_positional(types, n_bins, n_types);
  p.charges = priors::fit_positional(charges, n_bins, n_charges);
  p.bond_base = bond_counts / bond_counts.sum();
  return p;
}

GraphState sample_prior_graph(const MoleculePriors& p, int n, Rng& rng) {
  if (n < 1) throw InputError("sample_prior_graph: need at least one atom");
  GraphState g;
  const auto ranks = index_ranks(n);
  if (p.isotropic_coords) {
    g.coords = standard_normal_matrix(n, 3, rng);
  } else {
    g.coords = priors::sample_rank_gaussian(p.coords, ranks, rng);
  }
  for (int i = 0; i < n; ++i) {
    g.types.push_back(priors::sample_category(priors::eval_positional(p.types, ranks[static_cast<std::size_t>(i)]), rng));
    g.charges.push_back(
        priors::sample_category(priors::eval_positional(p.charges, ranks[static_cast<std::size_t>(i)]), rng));
  }
  g.bonds = MatI::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int k = i + 1; k < n; ++k) g.bonds(i, k) = g.bonds(k, i) = priors::sample_category(p.bond_base, rng);
  }
  return g;
}

PathSample interpolate(const GraphState& z0, const GraphState& z1, double t, double sigma, Rng& rng) {
  if (!(t >= 0.0 && t <= 1.0)) throw InputError("interpolate: t must lie in [0, 1]");
  if (z0.size() != z1.size()) throw InputError("interpolate: size mismatch");
  const int n = z0.size();
  PathSample s;
  s.t = t;
  s.data = z0;
  s.z_t.coords = (1.0 - t) * z0.coords + t * z1.coords;
  if (sigma > 0.0) s.z_t.coords += sigma * standard_normal_matrix(n, 3, rng);
  s.target_velocity = z1.coords - z0.coords;
  auto pick = [&](int data, int noise) { return uniform01(rng) < 1.0 - t ? data : noise; };
  for (int i = 0; i < n; ++i) {
    s.z_t.types.push_back(pick(z0.types[static_cast<std::size_t>(i)], z1.types[static_cast<std::size_t>(i)]));
    s.z_t.charges.push_back(pick(z0.charges[static_cast<std::size_t>(i)], z1.charges[static_cast<std::size_t>(i)]));
  }
  s.z_t.bonds = MatI::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int k = i + 1; k < n; ++k) s.z_t.bonds(i, k) = s.z_t.bonds(k, i) = pick(z0.bonds(i, k), z1.bonds(i, k));
  }
  return s;
}

PointPath interpolate_points(const Mat& z0, const Mat& z1, const Vec& t, double sigma, Rng& rng) {
  if (z0.rows() != z1.rows() || z0.cols() != z1.cols() || t.size() != z0.rows()) {
    throw InputError("interpolate_points: shape mismatch");
  }
  if ((t.array() < 0.0).any() || (t.array() > 1.0).any()) throw InputError("interpolate_points: t outside [0, 1]");
  PointPath p;
  p.t = t;
  p.z_t = z0.array().colwise() * (1.0 - t.array()) + z1.array().colwise() * t.array();
  if (sigma > 0.0) p.z_t += sigma * standard_normal_matrix(z0.rows(), z0.cols(), rng);
  p.target = z1 - z0;
  return p;
}

ParamStore FlowModel::inference_params() const {
  if (ema.empty()) return params;
  if (static_cast<int>(ema.size()) != params.size()) throw InputError("model: EMA buffer does not match parameters");
  ParamStore out = params;
  for (int i = 0; i < out.size(); ++i) out[i].value = ema[static_cast<std::size_t>(i)];
  return out;
}

namespace {

// Kabsch then assignment on the coordinates only.
MatX3 ot_noise_coords(const MatX3& data, const MatX3& noise, coupling::Mode mode) {
  const MatX3 aligned = coupling::kabsch_align(data, noise).aligned;
  const auto plan = coupling::ot_pair(data, aligned, mode);
  const auto idx = plan.noise_for();
  MatX3 out(aligned.rows(), 3);
  for (Eigen::Index i = 0; i < aligned.rows(); ++i) out.row(i) = aligned.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

double ot_chance(const TrainConfig& cfg, int epoch) {
  switch (cfg.ot) {
    case OtPolicy::kNone: return 0.0;
    case OtPolicy::kExact:
    case OtPolicy::kSinkhorn: return 1.0;
    case OtPolicy::kAnneal: return coupling::ot_probability(epoch, {std::max(1, cfg.epochs)});
  }
  return 0.0;
}

coupling::Mode ot_mode(const TrainConfig& cfg) {
  return cfg.ot == OtPolicy::kSinkhorn ? coupling::Mode::kOtSinkhorn : coupling::Mode::kOtExact;
}

GraphState centered(GraphState g) {
  if (g.size() > 0) g.coords.rowwise() -= g.coords.colwise().mean();
  return g;
}

struct GraphStep {
  LossTerms terms;
  double total = 0.0;
};

GraphStep graph_step(ParamStore& params, const CanonLiteConfig& arch, const TrainConfig& cfg,
                     const MoleculePriors& pri, const GraphState& z0, double p_ot, double p_drop, Rng& rng,
                     double grad_scale, bool backward) {
  const int n = z0.size();
  GraphState z1 = sample_prior_graph(pri, n, rng);
  if (p_ot > 0.0 && uniform01(rng) < p_ot) z1.coords = ot_noise_coords(z0.coords, z1.coords, ot_mode(cfg));
  const double t = sample_time(cfg.time_dist, rng);
  const PathSample ps = interpolate(z0, z1, t, cfg.path_sigma, rng);
  GraphInput in;
  in.coords = ps.z_t.coords;
  in.types = ps.z_t.types;
  in.charges = ps.z_t.charges;
  in.bonds = ps.z_t.bonds;
  in.t = t;
  in.ranks = index_ranks(n);
  for (double& r : in.ranks) r = rank_noise(r, 1.0 - t, cfg.rank_sigma, rng);
  in.pe_dropped = p_drop > 0.0 && uniform01(rng) < p_drop;
  GraphTargets tg{ps.target_velocity, z0.types, z0.charges, z0.bonds, normalized_ranks(n)};
  Tape tp(&params);
  const auto out = canonlite_forward(tp, arch, in);
  GraphStep step;
  step.terms = graph_loss(tp, out, tg, cfg.weights);
  step.total = tp.scalar(step.terms.total);
  if (!std::isfinite(step.total)) throw NumericError("non-finite training loss");
  if (backward) tp.backward(tp.scale(step.terms.total, grad_scale));
  return step;
}

double graph_validation(ParamStore params, const CanonLiteConfig& arch, const TrainConfig& cfg,
                        const MoleculePriors& pri, const std::vector<GraphState>& data, std::uint64_t seed) {
  Rng rng(seed);
  double sum = 0.0;
  for (const auto& g : data) sum += graph_step(params, arch, cfg, pri, g, 0.0, 0.0, rng, 1.0, false).total;
  return data.empty() ? 0.0 : sum / static_cast<double>(data.size());
}

constexpr std::uint64_t kValidationSalt = 0x5eedf00dULL;

}  // namespace

TrainResult train_graphs(const std::vector<MoleculeState>& canonical, const std::vector<MoleculeState>& validation,
                         const TrainConfig& cfg, const CanonLiteConfig& arch_in, int prior_bins,
                         bool isotropic_coords) {
  validate_config(cfg);
  if (canonical.empty()) throw InputError("train: no training molecules");
  std::vector<MoleculeState> all = canonical;
  all.insert(all.end(), validation.begin(), validation.end());
  TrainResult res;
  FlowModel& model = res.model;
  model.kind = ModelKind::kCanonLite;
  model.vocab = Vocabulary::from_data(all);
  model.train_cfg = cfg;
  CanonLiteConfig arch = arch_in;
  arch.n_types = static_cast<int>(model.vocab.atomic_numbers.size());
  arch.n_charges = static_cast<int>(model.vocab.charges.size());
  arch.n_bonds = molecule::kNumBondClasses;
  model.graph_cfg = arch;

  std::vector<GraphState> train, val;
  for (const auto& m : canonical) train.push_back(centered(encode(m, model.vocab)));
  for (const auto& m : validation) val.push_back(centered(encode(m, model.vocab)));
  if (val.empty()) val = train;

  Rng rng(cfg.seed);
  model.params = init_canonlite(arch, rng);
  model.graph_priors = fit_molecule_priors(train, arch.n_types, arch.n_charges, prior_bins, isotropic_coords);
  tape::Adam adam({cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm, cfg.warmup_steps});
  tape::Ema ema(model.params, cfg.ema_decay);

  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double p_ot = ot_chance(cfg, epoch);
    TraceRow row;
    row.epoch = epoch;
    int seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(stop - start);
      model.params.zero_grad();
      for (std::size_t b = start; b < stop; ++b) {
        GraphStep s;
        try {
          s = graph_step(model.params, arch, cfg, model.graph_priors, train[static_cast<std::size_t>(order[b])], p_ot,
                         cfg.p_drop, rng, scale, true);
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", molecule " +
                             std::to_string(order[b]));
        }
        row.loss += s.total;
        row.coord += s.terms.coord;
        row.type += s.terms.type;
        row.bond += s.terms.bond;
        row.charge += s.terms.charge;
        row.rank += s.terms.rank;
        ++seen;
      }
      adam.step(model.params);
      ema.update(model.params);
    }
    for (double* v : {&row.loss, &row.coord, &row.type, &row.bond, &row.charge, &row.rank}) *v /= std::max(seen, 1);
    row.val_loss = graph_validation(ema.apply(model.params), arch, cfg, model.graph_priors, val,
                                    cfg.seed ^ kValidationSalt);
    res.trace.push_back(row);
  }
  model.ema = ema.shadow();
  return res;
}

Mat point_velocity(const FlowModel& model, const ParamStore& params, const Mat& z, double t) {
  ParamStore copy = params;
  Tape tp(&copy);
  const auto v = point_mlp_forward(tp, model.point_cfg, z, Vec::Constant(z.rows(), t));
  return tp.value(v);
}

Mat sample_points(const FlowModel& model, int n, int steps, Rng& rng) {
  if (model.kind != ModelKind::kPointMlp) throw InputError("sample_points: not a point model");
  if (steps < 1) throw InputError("sample_points: need at least one step");
  if (n < 0) throw InputError("sample_points: negative count");
  ParamStore params = model.inference_params();
  Mat z = priors::sample_gaussian(model.point_prior, n, rng);
  for (int k = steps; k > 0; --k) {
    const double t_from = static_cast<double>(k) / steps;
    const double t_to = static_cast<double>(k - 1) / steps;
    Tape tp(&params);
    const auto v = point_mlp_forward(tp, model.point_cfg, z, Vec::Constant(z.rows(), t_from));
    z += (t_to - t_from) * tp.value(v);
  }
  return z;
}

namespace {

double point_loss_pass(ParamStore& params, const PointMlpConfig& arch, const TrainConfig& cfg,
                       const priors::GaussianPrior& prior, const Mat& z0, Rng& rng, bool backward,
                       coupling::Mode mode) {
  const auto b = z0.rows();
  Mat z1 = priors::sample_gaussian(prior, static_cast<int>(b), rng);
  if (mode != coupling::Mode::kProduct) {
    const auto idx = coupling::ot_pair(z0, z1, mode).noise_for();
    Mat paired(z1.rows(), z1.cols());
    for (Eigen::Index i = 0; i < b; ++i) paired.row(i) = z1.row(idx[static_cast<std::size_t>(i)]);
    z1 = std::move(paired);
  }
  Vec t(b);
  for (Eigen::Index i = 0; i < b; ++i) t(i) = sample_time(cfg.time_dist, rng);
  const PointPath path = interpolate_points(z0, z1, t, cfg.path_sigma, rng);
  Tape tp(&params);
  const auto v = point_mlp_forward(tp, arch, path.z_t, path.t);
  const auto loss = tp.mean(tp.square(tp.sub(v, tp.constant(path.target))));
  const double value = tp.scalar(loss);
  if (!std::isfinite(value)) throw NumericError("non-finite training loss");
  if (backward) tp.backward(loss);
  return value;
}

}  // namespace

double point_validation_loss(const FlowModel& model, const Mat& data, std::uint64_t seed) {
  if (data.rows() == 0) throw InputError("validation: empty data");
  Rng rng(seed);
  ParamStore params = model.inference_params();
  return point_loss_pass(params, model.point_cfg, model.train_cfg, model.point_prior, data, rng, false,
                         coupling::Mode::kProduct);
}

TrainResult train_points(const PointTask& task, const TrainConfig& cfg, const PointMlpConfig& arch) {
  validate_config(cfg);
  if (task.train.rows() < 1) throw InputError("train: empty data");
  if (task.train.cols() != arch.dim || task.prior.dim() != arch.dim) throw InputError("train: dimension mismatch");
  TrainResult res;
  FlowModel& model = res.model;
  model.kind = ModelKind::kPointMlp;
  model.point_cfg = arch;
  model.train_cfg = cfg;
  model.point_prior = task.prior;
  model.point_group = task.haar_group ? task.group_name : "none";

  Rng rng(cfg.seed);
  model.params = init_point_mlp(arch, rng);
  tape::Adam adam({cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm, cfg.warmup_steps});
  tape::Ema ema(model.params, cfg.ema_decay);
  std::uniform_int_distribution<Eigen::Index> pick(0, task.train.rows() - 1);
  const Mat& val = task.validation.rows() > 0 ? task.validation : task.train;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double p_ot = ot_chance(cfg, epoch);
    TraceRow row;
    row.epoch = epoch;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      Mat z0(cfg.batch_size, arch.dim);
      for (int i = 0; i < cfg.batch_size; ++i) z0.row(i) = task.train.row(pick(rng));
      const auto mode = (p_ot > 0.0 && uniform01(rng) < p_ot) ? ot_mode(cfg) : coupling::Mode::kProduct;
      model.params.zero_grad();
      double loss = 0.0;
      try {
        loss = point_loss_pass(model.params, arch, cfg, task.prior, z0, rng, true, mode);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
      }
      adam.step(model.params);
      ema.update(model.params);
      row.loss += loss / cfg.steps_per_epoch;
    }
    row.coord = row.loss;
    model.ema = ema.shadow();
    row.val_loss = point_validation_loss(model, val, cfg.seed ^ kValidationSalt);
    if (task.eval_target.rows() > 0) {
      Rng eval_rng(cfg.seed ^ (kValidationSalt << 1));
      Mat samples = sample_points(model, cfg.eval_samples, cfg.eval_steps, eval_rng);
      if (task.haar_group) samples = symgroup::finite_randomize(*task.haar_group, samples, eval_rng);
      row.val_energy = stats::energy_distance(samples, task.eval_target);
    }
    res.trace.push_back(row);
  }
  model.ema = ema.shadow();
  return res;
}

namespace {

constexpr const char* kFormat = "canonflow-checkpoint";
constexpr int kVersion = 1;

nlohmann::json params_json(const ParamStore& store, const std::vector<Mat>* values) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < store.size(); ++i) {
    const Mat& m = values ? (*values)[static_cast<std::size_t>(i)] : store[i].value;
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
    }
    arr.push_back({{"name", store[i].name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}});
  }
  return arr;
}

Mat param_from_json(const nlohmann::json& e) {
  const auto rows = e.at("rows").get<Eigen::Index>();
  const auto cols = e.at("cols").get<Eigen::Index>();
  const auto flat = e.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(flat.size()) != rows * cols) {
    throw InputError("checkpoint: parameter '" + e.at("name").get<std::string>() + "' has inconsistent shape");
  }
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  }
  if (!m.allFinite()) throw InputError("checkpoint: non-finite parameter values");
  return m;
}

}  // namespace

nlohmann::json checkpoint_json(const FlowModel& model) {
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["kind"] = model.kind == ModelKind::kCanonLite ? "canonlite" : "point_mlp";
  j["train_config"] = model.train_cfg;
  j["params"] = params_json(model.params, nullptr);
  j["ema"] = model.ema.empty() ? nlohmann::json::array() : params_json(model.params, &model.ema);
  if (model.kind == ModelKind::kCanonLite) {
    j["config"] = model.graph_cfg;
    j["vocabulary"] = model.vocab;
    j["priors"] = model.graph_priors;
  } else {
    j["config"] = model.point_cfg;
    j["priors"] = model.point_prior;
    j["group"] = model.point_group;
  }
  return j;
}

FlowModel checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kFormat) throw InputError("checkpoint: unknown format");
    if (j.at("version").get<int>() != kVersion) throw InputError("checkpoint: unsupported version");
    FlowModel model;
    const auto kind = j.at("kind").get<std::string>();
    Rng rng(0);
    if (kind == "canonlite") {
      model.kind = ModelKind::kCanonLite;
      j.at("config").get_to(model.graph_cfg);
      j.at("vocabulary").get_to(model.vocab);
      j.at("priors").get_to(model.graph_priors);
      model.params = init_canonlite(model.graph_cfg, rng);
    } else if (kind == "point_mlp") {
      model.kind = ModelKind::kPointMlp;
      j.at("config").get_to(model.point_cfg);
      j.at("priors").get_to(model.point_prior);
      j.at("group").get_to(model.point_group);
      model.params = init_point_mlp(model.point_cfg, rng);
    } else {
      throw InputError("checkpoint: unknown model kind '" + kind + "'");
    }
    j.at("train_config").get_to(model.train_cfg);
    const auto& ps = j.at("params");
    if (static_cast<int>(ps.size()) != model.params.size()) throw InputError("checkpoint: parameter count mismatch");
    for (const auto& e : ps) {
      auto& p = model.params.at(e.at("name").get<std::string>());
      Mat m = param_from_json(e);
      if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
        throw InputError("checkpoint: parameter '" + p.name + "' does not match the configuration");
      }
      p.value = std::move(m);
    }
    const auto& es = j.at("ema");
    if (!es.empty()) {
      if (static_cast<int>(es.size()) != model.params.size()) throw InputError("checkpoint: EMA count mismatch");
      model.ema.resize(es.size());
      for (const auto& e : es) {
        const int idx = model.params.index(e.at("name").get<std::string>());
        model.ema[static_cast<std::size_t>(idx)] = param_from_json(e);
      }
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint: malformed document: ") + e.what());
  }
}

void save_checkpoint(const FlowModel& model, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << checkpoint_json(model).dump(1) << '\n';
  if (!f) throw Error("failed writing " + path);
}

FlowModel load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(), 0);
  }
  return checkpoint_from_json(j);
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << "epoch,loss,coord,type,bond,charge,rank,val_loss,val_energy\n";
  f << std::setprecision(10);
  for (const auto& r : trace) {
    f << r.epoch << ',' << r.loss << ',' << r.coord << ',' << r.type << ',' << r.bond << ',' << r.charge << ','
      << r.rank << ',' << r.val_loss << ',';
    if (r.val_energy >= 0.0) f << r.val_energy;
    f << '\n';
  }
}

Mat c4_blobs(int n, Rng& rng, double radius, double stddev) {
  if (n < 0) throw InputError("c4_blobs: negative count");
  static const double centers[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  std::uniform_int_distribution<int> pick(0, 3);
  Mat x(n, 2);
  for (int i = 0; i < n; ++i) {
    const int c = pick(rng);
    x(i, 0) = radius * centers[c][0] + stddev * standard_normal(rng);
    x(i, 1) = radius * centers[c][1] + stddev * standard_normal(rng);
  }
  return x;
}

PointTask c4_blob_task(bool canonical, Rng& rng, int n_train, int n_val, int n_target) {
  if (n_train < 2 || n_val < 1 || n_target < 1) throw InputError("c4 task: sample counts too small");
  const auto c4 = symgroup::FiniteGroupSpec::cyclic2d(4);
  const Mat train = c4_blobs(n_train, rng);
  const Mat val = c4_blobs(n_val, rng);
  PointTask task;
  task.eval_target = c4_blobs(n_target, rng);
  if (canonical) {
    task.train = canonicalize_points(train, c4);
    task.validation = canonicalize_points(val, c4);
    task.prior = priors::fit_gaussian(task.train);
    task.haar_group = c4;
    task.group_name = "c4";
  } else {
    task.train = train;
    task.validation = val;
    task.prior = priors::GaussianPrior::standard(2);
  }
  return task;
}

Mat canonical_reference(int dim) {
  if (dim < 1) throw InputError("canonical_reference: dimension must be positive");
  Mat r(1, dim);
  for (int i = 0; i < dim; ++i) r(0, i) = static_cast<double>(dim - i);
  if (dim == 2) r << 1.0, 0.0;
  return r / r.norm();
}

Mat canonicalize_points(const Mat& points, const symgroup::FiniteGroupSpec& spec) {
  if (points.cols() != spec.dim()) throw InputError("canonicalize_points: dimension mismatch");
  const Mat ref = canonical_reference(spec.dim());
  Mat out(points.rows(), points.cols());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Mat row = points.row(i);
    const int m = symgroup::finite_canonical_index(spec, row, ref);
    out.row(i) = row * spec.elements[static_cast<std::size_t>(m)];
  }
  return out;
}

symgroup::FiniteGroupSpec group_by_name(const std::string& name) {
  using symgroup::FiniteGroupSpec;
  if (name == "signflip") return FiniteGroupSpec::sign_flip();
  if (name == "s3") return FiniteGroupSpec::permutations3();
  if (name == "trivial" || name == "none") return FiniteGroupSpec::trivial(2);
  if (name.size() > 1 && name[0] == 'c') {
    try {
      std::size_t used = 0;
      const int m = std::stoi(name.substr(1), &used);
      if (used == name.size() - 1 && m >= 1) return FiniteGroupSpec::cyclic2d(m);
    } catch (const std::exception&) {
    }
  }
  throw InputError("unknown group: " + name);
}

}  // namespace canonflow::flow
