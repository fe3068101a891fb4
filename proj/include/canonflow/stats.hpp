#pragma once

#include "canonflow/common.hpp"

#include <vector>

namespace canonflow::stats {

double normal_cdf(double x);

/// Asymptotic Kolmogorov survival function P(K > lambda).
double kolmogorov_survival(double lambda);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample test against N(0, 1).
KsResult ks_normal(std::vector<double> x);
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Critical value of the one-sample statistic at level alpha (asymptotic).
double ks_critical(double alpha, std::size_t n);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// V-statistic 2E|X-Y| - E|X-X'| - E|Y-Y'| on rows.
double energy_distance(const Mat& x, const Mat& y);

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

MeanStderr mean_stderr(const std::vector<double>& x);

}  // namespace canonflow::stats
