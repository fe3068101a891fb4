#include "canonflow/canonlite.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace canonflow::flow {

using tape::ParamStore;
using tape::Tape;
using tape::Var;

void to_json(nlohmann::json& j, const CanonLiteConfig& c) {
  j = {{"n_types", c.n_types}, {"n_charges", c.n_charges}, {"n_bonds", c.n_bonds},
       {"n_sets", c.n_sets},   {"d_model", c.d_model},     {"d_rank", c.d_rank},
       {"n_layers", c.n_layers}, {"d_pe", c.d_pe},         {"pe_scale", c.pe_scale}};
}

void from_json(const nlohmann::json& j, CanonLiteConfig& c) {
  j.at("n_types").get_to(c.n_types);
  j.at("n_charges").get_to(c.n_charges);
  j.at("n_bonds").get_to(c.n_bonds);
  j.at("n_sets").get_to(c.n_sets);
  j.at("d_model").get_to(c.d_model);
  j.at("d_rank").get_to(c.d_rank);
  j.at("n_layers").get_to(c.n_layers);
  j.at("d_pe").get_to(c.d_pe);
  j.at("pe_scale").get_to(c.pe_scale);
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"type", w.type}, {"bond", w.bond}, {"charge", w.charge}, {"rank", w.rank}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  j.at("type").get_to(w.type);
  j.at("bond").get_to(w.bond);
  j.at("charge").get_to(w.charge);
  j.at("rank").get_to(w.rank);
}

void to_json(nlohmann::json& j, const PointMlpConfig& c) {
  j = {{"dim", c.dim}, {"hidden", c.hidden}, {"n_layers", c.n_layers}, {"n_freq", c.n_freq}};
}

void from_json(const nlohmann::json& j, PointMlpConfig& c) {
  j.at("dim").get_to(c.dim);
  j.at("hidden").get_to(c.hidden);
  j.at("n_layers").get_to(c.n_layers);
  j.at("n_freq").get_to(c.n_freq);
}

Vec canonical_pe(double rank, int d_pe, double max_scale) {
  if (d_pe < 1) throw InputError("canonical_pe: dimension must be positive");
  Vec pe(d_pe);
  for (int i = 0; i < d_pe; ++i) {
    const int k = i / 2;
    const double freq = std::pow(10000.0, -2.0 * k / d_pe);
    const double arg = rank * max_scale * freq;
    pe(i) = (i % 2 == 0) ? std::sin(arg) : std::cos(arg);
  }
  return pe;
}

namespace {

std::string lp(int l, const char* name) { return "layer" + std::to_string(l) + "." + name; }

void add_linear(ParamStore& s, const std::string& name, int in, int out, Rng& rng) {
  s.add(name + ".w", tape::glorot(in, out, rng));
  s.add(name + ".b", Mat::Zero(1, out));
}

Var linear(Tape& tp, Var x, const std::string& name) {
  return tp.add_row(tp.matmul(x, tp.param(name + ".w")), tp.param(name + ".b"));
}

int message_out(const CanonLiteConfig& c) { return c.d_model + c.n_sets + c.d_rank; }

// T[k, 3k + c] = 1: expands one value per set to its three coordinates.
Mat set_expand(int k) {
  Mat t = Mat::Zero(k, 3 * k);
  for (int s = 0; s < k; ++s) t.block(s, 3 * s, 1, 3).setOnes();
  return t;
}

// M[c, 3k + c] = 1
Mat coord_mask(int k) {
  Mat m = Mat::Zero(3, 3 * k);
  for (int s = 0; s < k; ++s) m.block(0, 3 * s, 3, 3) = Mat::Identity(3, 3);
  return m;
}

Mat one_hot(const std::vector<int>& idx, int classes, const char* what) {
  Mat m = Mat::Zero(static_cast<Eigen::Index>(idx.size()), classes);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= classes) throw InputError(std::string("canonlite: ") + what + " index out of range");
    m(static_cast<Eigen::Index>(i), idx[i]) = 1.0;
  }
  return m;
}

}  // namespace

ParamStore init_canonlite(const CanonLiteConfig& c, Rng& rng) {
  if (c.n_types < 1 || c.n_charges < 1 || c.n_bonds < 1 || c.n_sets < 1 || c.d_model < 1 || c.d_rank < 1 ||
      c.n_layers < 0 || c.d_pe < 1) {
    throw InputError("canonlite: invalid configuration");
  }
  ParamStore s;
  const int in_dim = c.n_types + c.n_charges + 1 + c.d_pe;
  s.add("fake_pe", Mat::Zero(1, c.d_pe));
  add_linear(s, "in1", in_dim, c.d_model, rng);
  add_linear(s, "in2", c.d_model, c.d_model, rng);
  add_linear(s, "rank_in", c.d_pe + 1, c.d_rank, rng);
  Mat a(1, c.n_sets);
  for (int k = 0; k < c.n_sets; ++k) a(0, k) = 1.0 + 0.1 * standard_normal(rng);
  s.add("cs_scale", a);
  for (int l = 0; l < c.n_layers; ++l) {
    const int half = std::max(1, c.d_model / 2);
    s.add(lp(l, "w_h"), tape::glorot(c.d_model, half, rng));
    s.add(lp(l, "w_r"), tape::glorot(c.d_rank, c.d_rank, rng));
    const int min = 2 * half + 2 * c.d_rank + c.n_sets + c.n_bonds;
    add_linear(s, lp(l, "msg1"), min, c.d_model, rng);
    add_linear(s, lp(l, "msg2"), c.d_model, message_out(c), rng);
    Mat w2 = s.at(lp(l, "msg2") + ".w").value;
    // small initial coordinate messages keep early updates stable
    w2.middleCols(c.d_model, c.n_sets) *= 0.1;
    s.at(lp(l, "msg2") + ".w").value = w2;
    add_linear(s, lp(l, "h_upd"), c.d_model, c.d_model, rng);
    add_linear(s, lp(l, "r_upd"), c.d_rank, c.d_rank, rng);
  }
  Mat coef(c.n_sets, 1);
  for (int k = 0; k < c.n_sets; ++k) coef(k, 0) = 0.1 * standard_normal(rng);
  s.add("coord_head", coef);
  add_linear(s, "type_head", c.d_model, c.n_types, rng);
  add_linear(s, "charge_head", c.d_model, c.n_charges, rng);
  add_linear(s, "bond_head", c.d_model, c.n_bonds, rng);
  add_linear(s, "rank_head1", c.d_model + c.d_rank, c.d_model, rng);
  add_linear(s, "rank_head2", c.d_model, 1, rng);
  return s;
}

CanonLiteOutput canonlite_forward(Tape& tp, const CanonLiteConfig& c, const GraphInput& in) {
  const int n = static_cast<int>(in.coords.rows());
  if (n < 1) throw InputError("canonlite: empty graph");
  if (static_cast<int>(in.types.size()) != n || static_cast<int>(in.charges.size()) != n ||
      static_cast<int>(in.ranks.size()) != n || in.bonds.rows() != n || in.bonds.cols() != n) {
    throw InputError("canonlite: input shape mismatch");
  }
  CanonLiteOutput out;
  std::vector<int> src, dst;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      out.pairs.emplace_back(i, j);
      src.push_back(i);
      dst.push_back(j);
    }
  }
  const int p = static_cast<int>(src.size());

  const Mat ones_n = Mat::Ones(n, 1);
  Var pe;
  if (in.pe_dropped) {
    pe = tp.matmul(tp.constant(ones_n), tp.param("fake_pe"));
  } else {
    Mat m(n, c.d_pe);
    for (int i = 0; i < n; ++i) m.row(i) = canonical_pe(in.ranks[static_cast<std::size_t>(i)], c.d_pe, c.pe_scale).transpose();
    pe = tp.constant(std::move(m));
  }
  const Var tcol = tp.constant(Mat::Constant(n, 1, in.t));
  const Var feats = tp.concat_cols({tp.constant(one_hot(in.types, c.n_types, "type")),
                                    tp.constant(one_hot(in.charges, c.n_charges, "charge")), tcol, pe});
  Var h = linear(tp, tp.silu(linear(tp, feats, "in1")), "in2");
  Var r = linear(tp, tp.concat_cols({pe, tcol}), "rank_in");

  const Mat expand = set_expand(c.n_sets);
  const Mat mask = coord_mask(c.n_sets);
  const Var scale_row = tp.matmul(tp.param("cs_scale"), tp.constant(expand));  // 1 x 3K
  const Var kron = tp.mul(tp.matmul(tp.constant(Mat::Ones(3, 1)), scale_row), tp.constant(mask));
  Var cs = tp.matmul(tp.constant(Mat(in.coords)), kron);  // N x 3K

  Mat edges = Mat::Zero(p, c.n_bonds);
  for (int e = 0; e < p; ++e) {
    const int b = in.bonds(src[static_cast<std::size_t>(e)], dst[static_cast<std::size_t>(e)]);
    if (b < 0 || b >= c.n_bonds) throw InputError("canonlite: bond class out of range");
    edges(e, b) = 1.0;
  }
  const Var edge_feat = tp.constant(std::move(edges));
  const Var sum3 = tp.constant(expand.transpose());  // 3K x K
  const Var expand_v = tp.constant(expand);

  for (int l = 0; l < c.n_layers; ++l) {
    const Var hw = tp.matmul(h, tp.param(lp(l, "w_h")));
    const Var rw = tp.matmul(r, tp.param(lp(l, "w_r")));
    const Var cs_i = tp.gather_rows(cs, src);
    const Var cs_j = tp.gather_rows(cs, dst);
    const Var gram = tp.softsign(tp.matmul(tp.mul(cs_i, cs_j), sum3));
    const Var msg_in = tp.concat_cols({tp.gather_rows(hw, src), tp.gather_rows(hw, dst), tp.gather_rows(rw, src),
                                       tp.gather_rows(rw, dst), gram, edge_feat});
    const Var msg = linear(tp, tp.silu(linear(tp, msg_in, lp(l, "msg1"))), lp(l, "msg2"));
    const Var m_h = tp.slice_cols(msg, 0, c.d_model);
    const Var m_c = tp.tanh(tp.slice_cols(msg, c.d_model, c.n_sets));
    const Var m_r = tp.slice_cols(msg, c.d_model + c.n_sets, c.d_rank);

    const Var agg_h = tp.segment_mean(m_h, src, n);
    const Var agg_r = tp.segment_mean(m_r, src, n);
    const Var diff = tp.sub(cs_i, cs_j);
    const Var agg_c = tp.segment_mean(tp.mul(diff, tp.matmul(m_c, expand_v)), src, n);

    h = tp.add(h, linear(tp, tp.silu(agg_h), lp(l, "h_upd")));
    r = tp.add(r, linear(tp, tp.silu(agg_r), lp(l, "r_upd")));
    cs = tp.add(cs, agg_c);
  }

  const Var coef_col = tp.matmul(tp.constant(expand.transpose()), tp.param("coord_head"));  // 3K x 1
  const Var head = tp.mul(tp.matmul(coef_col, tp.constant(Mat::Ones(1, 3))), tp.constant(mask.transpose()));
  out.velocity = tp.matmul(cs, head);
  out.type_logits = linear(tp, h, "type_head");
  out.charge_logits = linear(tp, h, "charge_head");
  out.bond_logits = linear(tp, tp.mul(tp.gather_rows(h, src), tp.gather_rows(h, dst)), "bond_head");
  const Var rank_raw = linear(tp, tp.silu(linear(tp, tp.concat_cols({h, r}), "rank_head1")), "rank_head2");
  out.rank = tp.minmax(tp.sigmoid(rank_raw));
  return out;
}

LossTerms graph_loss(Tape& tp, const CanonLiteOutput& out, const GraphTargets& target, const LossWeights& w) {
  const Mat& vel = tp.value(out.velocity);
  const int n = static_cast<int>(vel.rows());
  if (target.velocity.rows() != n || static_cast<int>(target.types.size()) != n ||
      static_cast<int>(target.charges.size()) != n || static_cast<int>(target.ranks.size()) != n) {
    throw InputError("graph_loss: target shape mismatch");
  }
  LossTerms terms;
  const Var coord = tp.mean(tp.square(tp.sub(out.velocity, tp.constant(Mat(target.velocity)))));
  const Var type = tp.softmax_ce(out.type_logits, target.types, {}, n);
  const Var charge = tp.softmax_ce(out.charge_logits, target.charges, {}, n);
  Mat rk(n, 1);
  for (int i = 0; i < n; ++i) rk(i, 0) = target.ranks[static_cast<std::size_t>(i)];
  const Var rank = tp.mean(tp.square(tp.sub(out.rank, tp.constant(std::move(rk)))));

  Var total = tp.add(coord, tp.scale(type, w.type));
  total = tp.add(total, tp.scale(charge, w.charge));
  total = tp.add(total, tp.scale(rank, w.rank));
  if (!out.pairs.empty()) {
    std::vector<int> bt;
    bt.reserve(out.pairs.size());
    for (const auto& [i, j] : out.pairs) bt.push_back(target.bonds(i, j));
    const Var bond = tp.softmax_ce(out.bond_logits, bt, {}, static_cast<double>(n) * n);
    total = tp.add(total, tp.scale(bond, w.bond));
    terms.bond = tp.scalar(bond);
  }
  terms.total = total;
  terms.coord = tp.scalar(coord);
  terms.type = tp.scalar(type);
  terms.charge = tp.scalar(charge);
  terms.rank = tp.scalar(rank);
  return terms;
}

ParamStore init_point_mlp(const PointMlpConfig& c, Rng& rng) {
  if (c.dim < 1 || c.hidden < 1 || c.n_layers < 1 || c.n_freq < 0) throw InputError("point mlp: invalid configuration");
  ParamStore s;
  int in = c.dim + 1 + 2 * c.n_freq;
  for (int l = 0; l < c.n_layers; ++l) {
    add_linear(s, "mlp" + std::to_string(l), in, c.hidden, rng);
    in = c.hidden;
  }
  add_linear(s, "out", in, c.dim, rng);
  return s;
}

Var point_mlp_forward(Tape& tp, const PointMlpConfig& c, const Mat& x, const Vec& t) {
  if (x.cols() != c.dim || t.size() != x.rows()) throw InputError("point mlp: input shape mismatch");
  Mat feats(x.rows(), c.dim + 1 + 2 * c.n_freq);
  feats.leftCols(c.dim) = x;
  feats.col(c.dim) = t;
  for (int f = 0; f < c.n_freq; ++f) {
    const double w = std::numbers::pi * (f + 1);
    feats.col(c.dim + 1 + 2 * f) = (w * t.array()).sin();
    feats.col(c.dim + 2 + 2 * f) = (w * t.array()).cos();
  }
  Var h = tp.constant(std::move(feats));
  for (int l = 0; l < c.n_layers; ++l) h = tp.silu(linear(tp, h, "mlp" + std::to_string(l)));
  return linear(tp, h, "out");
}

}  // namespace canonflow::flow
