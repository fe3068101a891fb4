#pragma once

#include "canonflow/common.hpp"

#include <nlohmann/json_fwd.hpp>

#include <utility>
#include <vector>

namespace canonflow::priors {

/// Eigenvalue floor applied when fitting; canonical slices are often
/// lower-dimensional, so the empirical covariance is singular.
inline constexpr double kCovarianceFloor = 1e-8;

struct GaussianPrior {
  Vec mean;
  Mat cov;
  Mat sqrt_cov;  ///< symmetric principal square root of cov
  bool isotropic = false;

  int dim() const { return static_cast<int>(mean.size()); }
  static GaussianPrior standard(int d);
  /// Throws InputError on shape mismatch or a non-symmetric / negative
  /// definite covariance.
  static GaussianPrior from_moments(const Vec& mean, const Mat& cov, double floor = kCovarianceFloor);
};

/// Moment match (mean, covariance with denominator n) of the rows.
GaussianPrior fit_gaussian(const Mat& samples);

/// n x d draws mean + sqrt_cov * eps.
Mat sample_gaussian(const GaussianPrior& p, int n, Rng& rng);

/// Empirical category distribution per rank bin, Laplace-smoothed, mixed
/// with a base distribution at weight beta.
struct PositionalCategoricalPrior {
  int n_bins = 1;
  Mat bins;   ///< n_bins x n_categories, rows sum to 1
  Vec base;   ///< p_prior
  double beta = 0.1;

  int n_categories() const { return static_cast<int>(base.size()); }
};

struct RankedCategory {
  double rank;  ///< in [0, 1)
  int category;
};

/// Counts binned by floor(r K) with add-epsilon smoothing. An empty base
/// means uniform.
PositionalCategoricalPrior fit_positional(const std::vector<RankedCategory>& observations, int n_bins,
                                          int n_categories, double epsilon = 1.0, double beta = 0.1,
                                          Vec base = {});

/// beta * base + (1 - beta) * linear interpolation between bins
/// floor(rK) and min(floor(rK) + 1, K - 1).
Vec eval_positional(const PositionalCategoricalPrior& p, double rank);

int sample_category(const Vec& probs, Rng& rng);

/// Coordinate prior binned by canonical rank: per-bin mean and diagonal
/// variance; with probability beta an atom is drawn from N(0, I) instead.
struct RankGaussianPrior {
  int n_bins = 1;
  Mat means;      ///< n_bins x d
  Mat variances;  ///< n_bins x d
  double beta = 0.0;

  int dim() const { return static_cast<int>(means.cols()); }
};

struct RankedPoint {
  double rank;
  Vec value;
};

/// Empty bins fall back to the global statistics.
RankGaussianPrior fit_rank_gaussian(const std::vector<RankedPoint>& observations, int n_bins, double beta = 0.0);

/// One row per rank.
Mat sample_rank_gaussian(const RankGaussianPrior& p, const std::vector<double>& ranks, Rng& rng);

void to_json(nlohmann::json& j, const GaussianPrior& p);
void from_json(const nlohmann::json& j, GaussianPrior& p);
void to_json(nlohmann::json& j, const PositionalCategoricalPrior& p);
void from_json(const nlohmann::json& j, PositionalCategoricalPrior& p);
void to_json(nlohmann::json& j, const RankGaussianPrior& p);
void from_json(const nlohmann::json& j, RankGaussianPrior& p);

}  // namespace canonflow::priors
