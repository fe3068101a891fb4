#include "canonflow/tape.hpp"

#include <algorithm>
#include <cmath>

namespace canonflow::tape {

int ParamStore::add(const std::string& name, Mat init) {
  if (lookup_.count(name)) throw InputError("duplicate parameter: " + name);
  Param p;
  p.name = name;
  p.grad = Mat::Zero(init.rows(), init.cols());
  p.m = p.grad;
  p.v = p.grad;
  p.value = std::move(init);
  params_.push_back(std::move(p));
  const int idx = static_cast<int>(params_.size()) - 1;
  lookup_[name] = idx;
  return idx;
}

int ParamStore::index(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw InputError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::n_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) s += p.grad.squaredNorm();
  return std::sqrt(s);
}

void ParamStore::scale_grad(double s) {
  for (auto& p : params_) p.grad *= s;
}

Var Tape::push(Mat value, bool needs_grad, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw InputError("tape: invalid variable");
}

void Tape::accumulate(Var v, const Mat& g) {
  Node& n = node(v);
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Var Tape::constant(Mat value) { return push(std::move(value), false); }

Var Tape::param(int index) {
  if (!store_) throw InputError("tape: no parameter store bound");
  Var v = push((*store_)[index].value, true);
  node(v).param = index;
  return v;
}

Var Tape::param(const std::string& name) {
  if (!store_) throw InputError("tape: no parameter store bound");
  return param(store_->index(name));
}

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  if (value(a).cols() != value(b).rows()) throw InputError("tape matmul: shape mismatch");
  Var out = push(value(a) * value(b), needs(a) || needs(b));
  node(out).back = [this, a, b, out] {
    const Mat& g = grad(out);
    if (needs(a)) accumulate(a, g * value(b).transpose());
    if (needs(b)) accumulate(b, value(a).transpose() * g);
  };
  return out;
}

namespace {

void same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError(std::string("tape ") + op + ": shape mismatch");
}

}  // namespace

Var Tape::add(Var a, Var b) {
  same_shape(value(a), value(b), "add");
  Var out = push(value(a) + value(b), needs(a) || needs(b));
  node(out).back = [this, a, b, out] {
    accumulate(a, grad(out));
    accumulate(b, grad(out));
  };
  return out;
}

Var Tape::sub(Var a, Var b) {
  same_shape(value(a), value(b), "sub");
  Var out = push(value(a) - value(b), needs(a) || needs(b));
  node(out).back = [this, a, b, out] {
    accumulate(a, grad(out));
    if (needs(b)) accumulate(b, -grad(out));
  };
  return out;
}

Var Tape::mul(Var a, Var b) {
  same_shape(value(a), value(b), "mul");
  Var out = push(value(a).cwiseProduct(value(b)), needs(a) || needs(b));
  node(out).back = [this, a, b, out] {
    if (needs(a)) accumulate(a, grad(out).cwiseProduct(value(b)));
    if (needs(b)) accumulate(b, grad(out).cwiseProduct(value(a)));
  };
  return out;
}

Var Tape::scale(Var a, double s) {
  Var out = push(value(a) * s, needs(a));
  node(out).back = [this, a, out, s] { accumulate(a, grad(out) * s); };
  return out;
}

Var Tape::add_scalar(Var a, double s) {
  Var out = push(value(a).array() + s, needs(a));
  node(out).back = [this, a, out] { accumulate(a, grad(out)); };
  return out;
}

Var Tape::add_row(Var a, Var row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols()) throw InputError("tape add_row: shape mismatch");
  Mat v = value(a);
  v.rowwise() += value(row).row(0);
  Var out = push(std::move(v), needs(a) || needs(row));
  node(out).back = [this, a, row, out] {
    accumulate(a, grad(out));
    if (needs(row)) accumulate(row, grad(out).colwise().sum());
  };
  return out;
}

Var Tape::mul_col(Var a, Var col) {
  if (value(col).cols() != 1 || value(col).rows() != value(a).rows()) throw InputError("tape mul_col: shape mismatch");
  Mat v = value(a).array().colwise() * value(col).col(0).array();
  Var out = push(std::move(v), needs(a) || needs(col));
  node(out).back = [this, a, col, out] {
    if (needs(a)) accumulate(a, grad(out).array().colwise() * value(col).col(0).array());
    if (needs(col)) accumulate(col, grad(out).cwiseProduct(value(a)).rowwise().sum());
  };
  return out;
}

Var Tape::silu(Var a) {
  const Mat s = (1.0 + (-value(a).array()).exp()).inverse().matrix();
  Var out = push(value(a).cwiseProduct(s), needs(a));
  node(out).back = [this, a, out, s] {
    const auto x = value(a).array();
    accumulate(a, (grad(out).array() * (s.array() * (1.0 + x * (1.0 - s.array())))).matrix());
  };
  return out;
}

Var Tape::sigmoid(Var a) {
  Mat s = (1.0 + (-value(a).array()).exp()).inverse().matrix();
  Var out = push(s, needs(a));
  node(out).back = [this, a, out] {
    const auto y = value(out).array();
    accumulate(a, (grad(out).array() * y * (1.0 - y)).matrix());
  };
  return out;
}

Var Tape::tanh(Var a) {
  Var out = push(value(a).array().tanh().matrix(), needs(a));
  node(out).back = [this, a, out] {
    const auto y = value(out).array();
    accumulate(a, (grad(out).array() * (1.0 - y * y)).matrix());
  };
  return out;
}

Var Tape::softsign(Var a) {
  const Mat denom = (1.0 + value(a).array().abs()).matrix();
  Var out = push(value(a).cwiseQuotient(denom), needs(a));
  node(out).back = [this, a, out, denom] {
    accumulate(a, (grad(out).array() / denom.array().square()).matrix());
  };
  return out;
}

Var Tape::square(Var a) {
  Var out = push(value(a).cwiseAbs2(), needs(a));
  node(out).back = [this, a, out] { accumulate(a, 2.0 * grad(out).cwiseProduct(value(a))); };
  return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("tape concat_cols: no inputs");
  const auto rows = value(parts.front()).rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw InputError("tape concat_cols: row mismatch");
    cols += value(p).cols();
    ng = ng || needs(p);
  }
  Mat v(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    v.middleCols(c, value(p).cols()) = value(p);
    c += value(p).cols();
  }
  Var out = push(std::move(v), ng);
  node(out).back = [this, parts, out] {
    Eigen::Index c = 0;
    for (Var p : parts) {
      const auto w = value(p).cols();
      if (needs(p)) accumulate(p, grad(out).middleCols(c, w));
      c += w;
    }
  };
  return out;
}

Var Tape::slice_cols(Var a, int start, int count) {
  if (start < 0 || count < 0 || start + count > value(a).cols()) throw InputError("tape slice_cols: out of range");
  Var out = push(value(a).middleCols(start, count), needs(a));
  node(out).back = [this, a, out, start, count] {
    Mat g = Mat::Zero(value(a).rows(), value(a).cols());
    g.middleCols(start, count) = grad(out);
    accumulate(a, g);
  };
  return out;
}

Var Tape::gather_rows(Var a, const std::vector<int>& rows) {
  const Mat& src = value(a);
  Mat v(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= src.rows()) throw InputError("tape gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
  }
  Var out = push(std::move(v), needs(a));
  node(out).back = [this, a, out, rows] {
    Mat g = Mat::Zero(value(a).rows(), value(a).cols());
    const Mat& go = grad(out);
    for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += go.row(static_cast<Eigen::Index>(i));
    accumulate(a, g);
  };
  return out;
}

Var Tape::segment_mean(Var a, const std::vector<int>& segment, int n_segments) {
  const Mat& src = value(a);
  if (static_cast<Eigen::Index>(segment.size()) != src.rows()) throw InputError("tape segment_mean: size mismatch");
  std::vector<double> count(static_cast<std::size_t>(n_segments), 0.0);
  Mat v = Mat::Zero(n_segments, src.cols());
  for (std::size_t i = 0; i < segment.size(); ++i) {
    if (segment[i] < 0 || segment[i] >= n_segments) throw InputError("tape segment_mean: segment out of range");
    v.row(segment[i]) += src.row(static_cast<Eigen::Index>(i));
    count[static_cast<std::size_t>(segment[i])] += 1.0;
  }
  for (int s = 0; s < n_segments; ++s) {
    if (count[static_cast<std::size_t>(s)] > 0.0) v.row(s) /= count[static_cast<std::size_t>(s)];
  }
  Var out = push(std::move(v), needs(a));
  node(out).back = [this, a, out, segment, count] {
    Mat g(value(a).rows(), value(a).cols());
    const Mat& go = grad(out);
    for (std::size_t i = 0; i < segment.size(); ++i) {
      g.row(static_cast<Eigen::Index>(i)) = go.row(segment[i]) / count[static_cast<std::size_t>(segment[i])];
    }
    accumulate(a, g);
  };
  return out;
}

Var Tape::sum(Var a) {
  Mat v(1, 1);
  v(0, 0) = value(a).sum();
  Var out = push(std::move(v), needs(a));
  node(out).back = [this, a, out] {
    accumulate(a, Mat::Constant(value(a).rows(), value(a).cols(), grad(out)(0, 0)));
  };
  return out;
}

Var Tape::mean(Var a) {
  const double n = static_cast<double>(std::max<Eigen::Index>(1, value(a).size()));
  return scale(sum(a), 1.0 / n);
}

Var Tape::softmax_ce(Var logits, const std::vector<int>& targets, const std::vector<double>& weights, double denom) {
  const Mat& z = value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != z.rows()) throw InputError("tape softmax_ce: target count mismatch");
  if (!weights.empty() && weights.size() != targets.size()) throw InputError("tape softmax_ce: weight count mismatch");
  if (denom <= 0.0) throw InputError("tape softmax_ce: denominator must be positive");
  Mat probs(z.rows(), z.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    if (y < 0 || y >= z.cols()) throw InputError("tape softmax_ce: target out of range");
    const double mx = z.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(r).array() - mx).exp().matrix();
    const double s = e.sum();
    probs.row(r) = e / s;
    const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(r)];
    total += w * (std::log(s) + mx - z(r, y));
  }
  Mat v(1, 1);
  v(0, 0) = total / denom;
  Var out = push(std::move(v), needs(logits));
  node(out).back = [this, logits, out, probs, targets, weights, denom] {
    Mat g = probs;
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      g(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
      const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(r)];
      g.row(r) *= w;
    }
    accumulate(logits, g * (grad(out)(0, 0) / denom));
  };
  return out;
}

Var Tape::minmax(Var a) {
  const Mat& x = value(a);
  if (x.cols() != 1 || x.rows() == 0) throw InputError("tape minmax: expects a non-empty column");
  Eigen::Index imin = 0, imax = 0;
  const double lo = x.col(0).minCoeff(&imin);
  const double hi = x.col(0).maxCoeff(&imax);
  const double range = hi - lo;
  if (range <= 0.0) {
    Var out = push(Mat::Zero(x.rows(), 1), false);
    return out;
  }
  Var out = push((x.array() - lo).matrix() / range, needs(a));
  node(out).back = [this, a, out, imin, imax, range] {
    const Mat& go = grad(out);
    const Mat& y = value(out);
    Mat g = go / range;
    // d y_i / d lo = (y_i - 1) / range, d y_i / d hi = -y_i / range
    g(imin, 0) += (go.cwiseProduct((y.array() - 1.0).matrix())).sum() / range;
    g(imax, 0) += -(go.cwiseProduct(y)).sum() / range;
    accumulate(a, g);
  };
  return out;
}

void Tape::backward(Var out) {
  check(out);
  if (value(out).size() != 1) throw InputError("tape backward: output must be scalar");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  node(out).grad = Mat::Ones(1, 1);
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) n.back();
    if (n.param >= 0 && store_) (*store_)[n.param].grad += n.grad;
  }
}

void Adam::step(ParamStore& store) {
  ++t_;
  if (cfg_.clip_norm > 0.0) {
    const double norm = store.grad_norm();
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    if (norm > cfg_.clip_norm) store.scale_grad(cfg_.clip_norm / norm);
  }
  const double lr = current_lr();
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : store) {
    p.m = cfg_.beta1 * p.m + (1.0 - cfg_.beta1) * p.grad;
    p.v = cfg_.beta2 * p.v + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (p.m.array() / bc1) / ((p.v.array() / bc2).sqrt() + cfg_.eps);
  }
}

double Adam::current_lr() const {
  if (cfg_.warmup_steps > 0 && t_ < cfg_.warmup_steps) {
    return cfg_.lr * static_cast<double>(std::max<long>(t_, 1)) / cfg_.warmup_steps;
  }
  return cfg_.lr;
}

Ema::Ema(const ParamStore& store, double decay) : decay_(decay) {
  if (decay < 0.0 || decay >= 1.0) throw InputError("ema: decay must lie in [0, 1)");
  for (const auto& p : store) shadow_.push_back(p.value);
}

void Ema::update(const ParamStore& store) {
  std::size_t i = 0;
  for (const auto& p : store) {
    shadow_[i] = decay_ * shadow_[i] + (1.0 - decay_) * p.value;
    ++i;
  }
}

ParamStore Ema::apply(const ParamStore& store) const {
  ParamStore out = store;
  for (int i = 0; i < out.size(); ++i) out[i].value = shadow_[static_cast<std::size_t>(i)];
  return out;
}

Mat glorot(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / (rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = (2.0 * uniform01(rng) - 1.0) * a;
  }
  return m;
}

}  // namespace canonflow::tape
