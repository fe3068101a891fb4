#include "canonflow/priors.hpp"

#include "json_eigen.hpp"

#include <algorithm>
#include <cmath>

namespace canonflow::priors {

using detail::matrix_from_json;
using detail::matrix_to_json;
using detail::vector_from_json;
using detail::vector_to_json;

GaussianPrior GaussianPrior::standard(int d) {
  GaussianPrior p;
  p.mean = Vec::Zero(d);
  p.cov = Mat::Identity(d, d);
  p.sqrt_cov = Mat::Identity(d, d);
  p.isotropic = true;
  return p;
}

GaussianPrior GaussianPrior::from_moments(const Vec& mean, const Mat& cov, double floor) {
  const auto d = mean.size();
  if (cov.rows() != d || cov.cols() != d) throw InputError("gaussian prior: covariance shape mismatch");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10) throw InputError("gaussian prior: covariance not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (cov + cov.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("gaussian prior: eigensolver failed");
  if (es.eigenvalues().minCoeff() < -1e-10) throw InputError("gaussian prior: covariance is not positive semidefinite");
  const Vec clamped = es.eigenvalues().cwiseMax(floor);
  GaussianPrior p;
  p.mean = mean;
  p.cov = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
  p.sqrt_cov = es.eigenvectors() * clamped.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  const double scale = clamped.mean();
  p.isotropic = (p.cov - scale * Mat::Identity(d, d)).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, scale);
  return p;
}

GaussianPrior fit_gaussian(const Mat& samples) {
  if (samples.rows() < 2) throw InputError("fit_gaussian: need at least 2 samples");
  const Vec mean = samples.colwise().mean().transpose();
  const Mat centered = samples.rowwise() - mean.transpose();
  const Mat cov = (centered.transpose() * centered) / static_cast<double>(samples.rows());
  return GaussianPrior::from_moments(mean, 0.5 * (cov + cov.transpose()));
}

Mat sample_gaussian(const GaussianPrior& p, int n, Rng& rng) {
  if (n < 0) throw InputError("sample_gaussian: negative count");
  const Mat eps = standard_normal_matrix(n, p.dim(), rng);
  return (eps * p.sqrt_cov.transpose()).rowwise() + p.mean.transpose();
}

PositionalCategoricalPrior fit_positional(const std::vector<RankedCategory>& observations, int n_bins,
                                          int n_categories, double epsilon, double beta, Vec base) {
  if (n_bins < 1 || n_categories < 1) throw InputError("fit_positional: need at least one bin and one category");
  if (epsilon <= 0.0) throw InputError("fit_positional: smoothing must be positive");
  if (beta < 0.0 || beta > 1.0) throw InputError("fit_positional: beta must lie in [0, 1]");
  if (base.size() == 0) base = Vec::Constant(n_categories, 1.0 / n_categories);
  if (base.size() != n_categories || std::abs(base.sum() - 1.0) > 1e-9) {
    throw InputError("fit_positional: base distribution has wrong size or does not sum to 1");
  }
  Mat counts = Mat::Zero(n_bins, n_categories);
  for (const auto& obs : observations) {
    if (obs.category < 0 || obs.category >= n_categories) throw InputError("fit_positional: category out of range");
    if (obs.rank < 0.0 || obs.rank >= 1.0) throw InputError("fit_positional: rank outside [0, 1)");
    const int k = std::min(n_bins - 1, static_cast<int>(std::floor(obs.rank * n_bins)));
    counts(k, obs.category) += 1.0;
  }
  counts.array() += epsilon;
  PositionalCategoricalPrior p;
  p.n_bins = n_bins;
  p.bins = counts.array().colwise() / counts.rowwise().sum().array();
  p.base = std::move(base);
  p.beta = beta;
  return p;
}

Vec eval_positional(const PositionalCategoricalPrior& p, double rank) {
  const double r = std::clamp(rank, 0.0, 1.0);
  const double scaled = r * p.n_bins;
  const int k0 = std::min(p.n_bins - 1, static_cast<int>(std::floor(scaled)));
  const int k1 = std::min(k0 + 1, p.n_bins - 1);
  const double delta = std::clamp(scaled - k0, 0.0, 1.0);
  const Vec empirical = (1.0 - delta) * p.bins.row(k0).transpose() + delta * p.bins.row(k1).transpose();
  return p.beta * p.base + (1.0 - p.beta) * empirical;
}

int sample_category(const Vec& probs, Rng& rng) {
  const double u = uniform01(rng) * probs.sum();
  double acc = 0.0;
  for (Eigen::Index c = 0; c < probs.size(); ++c) {
    acc += probs(c);
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(probs.size()) - 1;
}

RankGaussianPrior fit_rank_gaussian(const std::vector<RankedPoint>& observations, int n_bins, double beta) {
  if (observations.empty()) throw InputError("fit_rank_gaussian: no observations");
  if (n_bins < 1) throw InputError("fit_rank_gaussian: need at least one bin");
  const auto d = observations.front().value.size();
  Mat sum = Mat::Zero(n_bins, d), sq = Mat::Zero(n_bins, d);
  Vec count = Vec::Zero(n_bins);
  Vec gsum = Vec::Zero(d), gsq = Vec::Zero(d);
  for (const auto& obs : observations) {
    if (obs.value.size() != d) throw InputError("fit_rank_gaussian: inconsistent dimensions");
    const int k = std::clamp(static_cast<int>(std::floor(obs.rank * n_bins)), 0, n_bins - 1);
    sum.row(k) += obs.value.transpose();
    sq.row(k) += obs.value.cwiseAbs2().transpose();
    count(k) += 1.0;
    gsum += obs.value;
    gsq += obs.value.cwiseAbs2();
  }
  const double n = static_cast<double>(observations.size());
  const Vec gmean = gsum / n;
  const Vec gvar = (gsq / n - gmean.cwiseAbs2()).cwiseMax(kCovarianceFloor);
  RankGaussianPrior p;
  p.n_bins = n_bins;
  p.beta = beta;
  p.means.resize(n_bins, d);
  p.variances.resize(n_bins, d);
  for (int k = 0; k < n_bins; ++k) {
    if (count(k) < 2.0) {
      p.means.row(k) = gmean.transpose();
      p.variances.row(k) = gvar.transpose();
      continue;
    }
    const Vec mean = sum.row(k).transpose() / count(k);
    p.means.row(k) = mean.transpose();
    p.variances.row(k) = (sq.row(k).transpose() / count(k) - mean.cwiseAbs2()).cwiseMax(kCovarianceFloor).transpose();
  }
  return p;
}

Mat sample_rank_gaussian(const RankGaussianPrior& p, const std::vector<double>& ranks, Rng& rng) {
  const int d = p.dim();
  Mat out(static_cast<Eigen::Index>(ranks.size()), d);
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    const bool from_base = p.beta > 0.0 && uniform01(rng) < p.beta;
    const int k = std::clamp(static_cast<int>(std::floor(ranks[i] * p.n_bins)), 0, p.n_bins - 1);
    for (int c = 0; c < d; ++c) {
      const double eps = standard_normal(rng);
      out(static_cast<Eigen::Index>(i), c) =
          from_base ? eps : p.means(k, c) + std::sqrt(p.variances(k, c)) * eps;
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const GaussianPrior& p) {
  j = {{"type", "gaussian"},
       {"mean", vector_to_json(p.mean)},
       {"cov", matrix_to_json(p.cov)},
       {"sqrt_cov", matrix_to_json(p.sqrt_cov)},
       {"isotropic", p.isotropic}};
}

void from_json(const nlohmann::json& j, GaussianPrior& p) {
  p.mean = vector_from_json(j.at("mean"));
  p.cov = matrix_from_json(j.at("cov"));
  p.sqrt_cov = matrix_from_json(j.at("sqrt_cov"));
  p.isotropic = j.at("isotropic").get<bool>();
  if (p.cov.rows() != p.mean.size() || p.sqrt_cov.rows() != p.mean.size()) {
    throw InputError("gaussian prior JSON: inconsistent shapes");
  }
}

void to_json(nlohmann::json& j, const PositionalCategoricalPrior& p) {
  j = {{"type", "positional_categorical"},
       {"n_bins", p.n_bins},
       {"bins", matrix_to_json(p.bins)},
       {"base", vector_to_json(p.base)},
       {"beta", p.beta}};
}

void from_json(const nlohmann::json& j, PositionalCategoricalPrior& p) {
  p.n_bins = j.at("n_bins").get<int>();
  p.bins = matrix_from_json(j.at("bins"));
  p.base = vector_from_json(j.at("base"));
  p.beta = j.at("beta").get<double>();
  if (p.bins.rows() != p.n_bins || p.bins.cols() != p.base.size()) {
    throw InputError("positional prior JSON: inconsistent shapes");
  }
}

void to_json(nlohmann::json& j, const RankGaussianPrior& p) {
  j = {{"type", "rank_gaussian"},
       {"n_bins", p.n_bins},
       {"means", matrix_to_json(p.means)},
       {"variances", matrix_to_json(p.variances)},
       {"beta", p.beta}};
}

void from_json(const nlohmann::json& j, RankGaussianPrior& p) {
  p.n_bins = j.at("n_bins").get<int>();
  p.means = matrix_from_json(j.at("means"));
  p.variances = matrix_from_json(j.at("variances"));
  p.beta = j.at("beta").get<double>();
  if (p.means.rows() != p.n_bins || p.variances.rows() != p.n_bins) {
    throw InputError("rank gaussian JSON: inconsistent shapes");
  }
}

}  // namespace canonflow::priors
