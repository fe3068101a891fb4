#pragma once

#include "canonflow/common.hpp"
#include "canonflow/symgroup.hpp"

#include <string>
#include <utility>
#include <vector>

namespace canonflow::coupling {

enum class Mode { kProduct, kOtExact, kOtSinkhorn };

std::string mode_name(Mode m);

/// Pairs (data index, noise index) forming a bijection on the batch.
struct CouplingPlan {
  std::vector<std::pair<int, int>> pairs;
  Mode mode = Mode::kProduct;
  double cost = 0.0;

  /// noise_for[i] = noise index paired with data row i.
  std::vector<int> noise_for() const;
};

inline constexpr int kMaxExactBatch = 4096;

/// Rows of cost are workers; returns the column assigned to every row of a
/// square cost matrix (minimum total cost).
std::vector<int> hungarian(const Mat& cost);

/// Squared Euclidean distances between rows.
Mat squared_cost(const Mat& data, const Mat& noise);

CouplingPlan product_pair(int n);
CouplingPlan product_pair(const Mat& data, const Mat& noise);

struct SinkhornOptions {
  double reg_scale = 0.05;  ///< epsilon = reg_scale * median cost
  int iterations = 200;
};

CouplingPlan ot_pair(const Mat& data, const Mat& noise, Mode mode = Mode::kOtExact,
                     const SinkhornOptions& opts = {});

/// Entropic plan in the log domain; rows and columns have mass 1/n.
Mat sinkhorn_plan(const Mat& cost, double epsilon, int iterations);

/// Greedy argmax per row in order of decreasing confidence; a taken column
/// is repaired by the next best free column.
std::vector<int> round_plan(const Mat& plan);

struct KabschResult {
  Mat3 rotation;
  MatX3 aligned;
  double rmsd_before = 0.0;
  double rmsd_after = 0.0;
};

/// Rotation minimising ||target - source R^T||_F; both inputs centered.
KabschResult kabsch_align(const MatX3& target, const MatX3& source);

double rmsd(const MatX3& a, const MatX3& b);

/// Rotate the noise cloud onto the data cloud, then reassign its rows by
/// Hungarian matching. Returns the aligned, permuted noise.
MatX3 molecule_ot(const MatX3& data, const MatX3& noise);

struct AnnealSchedule {
  int max_epochs = 1;
};

double ot_probability(int epoch, const AnnealSchedule& sched);

/// One shared group element per pair; rows of z0, z1 are flattened points
/// of dimension spec.dim().
void group_aligned_lift(const symgroup::FiniteGroupSpec& spec, Mat& z0, Mat& z1, Rng& rng,
                        std::vector<int>* chosen = nullptr);

/// Same with Haar-random rotations of SO(d), d = z0.cols() in {2, 3}.
void group_aligned_lift_so(Mat& z0, Mat& z1, Rng& rng);

}  // namespace canonflow::coupling
