#pragma once

#include "canonflow/common.hpp"

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace canonflow::tape {

/// Named trainable matrices with gradient and Adam moment buffers.
class ParamStore {
 public:
  struct Param {
    std::string name;
    Mat value;
    Mat grad;
    Mat m;
    Mat v;
  };

  int add(const std::string& name, Mat init);
  int index(const std::string& name) const;
  bool contains(const std::string& name) const { return lookup_.count(name) > 0; }
  Param& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Param& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  Param& at(const std::string& name) { return (*this)[index(name)]; }
  const Param& at(const std::string& name) const { return (*this)[index(name)]; }
  int size() const { return static_cast<int>(params_.size()); }
  std::size_t n_scalars() const;

  void zero_grad();
  double grad_norm() const;
  void scale_grad(double s);

  std::vector<Param>::iterator begin() { return params_.begin(); }
  std::vector<Param>::iterator end() { return params_.end(); }
  std::vector<Param>::const_iterator begin() const { return params_.begin(); }
  std::vector<Param>::const_iterator end() const { return params_.end(); }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, int> lookup_;
};

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode recorder over dense matrices. Values are computed eagerly;
/// backward() walks the records in reverse and accumulates parameter
/// gradients into the bound ParamStore.
class Tape {
 public:
  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  Var constant(Mat value);
  Var param(int index);
  Var param(const std::string& name);

  const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  const Mat& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  double scalar(Var v) const { return value(v)(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  /// a (n x c) + row (1 x c) broadcast over rows.
  Var add_row(Var a, Var row);
  /// a (n x c) * col (n x 1) broadcast over columns.
  Var mul_col(Var a, Var col);
  Var silu(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var softsign(Var a);
  Var square(Var a);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, int start, int count);
  Var gather_rows(Var a, const std::vector<int>& rows);
  /// Mean of the rows in each segment; empty segments give zero rows.
  Var segment_mean(Var a, const std::vector<int>& segment, int n_segments);
  Var sum(Var a);
  Var mean(Var a);
  /// sum_r w_r * CE(softmax(logits_r), target_r) / denom; w empty = all 1.
  Var softmax_ce(Var logits, const std::vector<int>& targets, const std::vector<double>& weights, double denom);
  /// Column vector min-max normalised to [0, 1]; a constant input maps to 0.
  Var minmax(Var a);

  /// Seeds d(out)/d(out) = 1 for a 1 x 1 output.
  void backward(Var out);

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> back;
    int param = -1;
    bool needs_grad = false;
  };

  Var push(Mat value, bool needs_grad, std::function<void()> back = {});
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  void accumulate(Var v, const Mat& g);
  void check(Var v) const;

  ParamStore* store_;
  std::vector<Node> nodes_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  ///< <= 0 disables clipping
  int warmup_steps = 0;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  /// Applies clipping, the warmup schedule and one Adam update.
  void step(ParamStore& store);
  double current_lr() const;
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
};

/// Exponential moving average of a store's values.
class Ema {
 public:
  Ema() = default;
  Ema(const ParamStore& store, double decay);
  void update(const ParamStore& store);
  /// Writes the shadow values into a copy of store.
  ParamStore apply(const ParamStore& store) const;
  const std::vector<Mat>& shadow() const { return shadow_; }
  std::vector<Mat>& shadow() { return shadow_; }
  double decay() const { return decay_; }

 private:
  std::vector<Mat> shadow_;
  double decay_ = 0.999;
};

/// Glorot-uniform init.
Mat glorot(int rows, int cols, Rng& rng);

}  // namespace canonflow::tape
