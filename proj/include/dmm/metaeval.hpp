#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dmm/error.hpp"

namespace dmm {

// Tie-adjusted Kendall rank correlation, O(n log n) (sort + merge count).
// Raises InputError when either vector is fully tied.
double kendall_tau_b(std::span<const double> a, std::span<const double> b);

// Product-moment correlation; raises InputError on constant input.
double pearson(std::span<const double> a, std::span<const double> b);

struct GroupEntry {
  std::string system_id;
  double metric = 0.0;
  double human = 0.0;
};

// Within-segment comparison groups; groups with fewer than two systems are
// unusable for pairwise statistics and only counted.
struct SegmentGroupView {
  std::vector<std::vector<GroupEntry>> groups;
  std::size_t n_skipped_groups = 0;
};

struct ScoredInstance {
  std::string segment_id;
  std::string system_id;
  double metric = 0.0;
  double human = 0.0;
};

SegmentGroupView build_groups(const std::vector<ScoredInstance>& rows);

// Fraction of within-segment system pairs whose predicted relation matches
// gold. Predicted tie iff |m_i - m_j| <= epsilon; gold tie iff exact equality.
double pairwise_accuracy_with_ties(const SegmentGroupView& groups, double epsilon);

struct TieCalibrationResult {
  double epsilon_star = 0.0;
  double accuracy = 0.0;
  std::int64_t n_pairs = 0;
};

// Sweeps tie thresholds over {0} + midpoints between consecutive distinct
// |metric difference| values (+ the max), subsampled to max_candidates, and
// returns the accuracy-maximizing epsilon (accuracy ties -> smaller epsilon).
TieCalibrationResult calibrate_ties(const SegmentGroupView& groups,
                                    std::size_t max_candidates = 10000);

// Per-system per-segment score matrices sharing one segment axis.
struct SystemMatrix {
  std::vector<std::string> systems;
  std::vector<std::string> segments;
  Eigen::MatrixXd metric;  // systems x segments
  Eigen::MatrixXd human;   // systems x segments
};

struct SPAResult {
  double spa = 0.0;
  int n_system_pairs = 0;
  int n_resamples = 0;
  std::uint64_t seed = 0;
};

// Soft pairwise accuracy: paired-bootstrap win rates with the same resample
// index sets on the human and metric sides; pair score 1 - |p_H - p_M|.
SPAResult spa(const SystemMatrix& data, int n_resamples, std::uint64_t seed);

}  // namespace dmm
