#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "dmm/corpus.hpp"

namespace dmm {

// Per-metric z-scaling fit on training data and reused everywhere.
struct Standardizer {
  std::vector<std::string> metric_names;
  Eigen::VectorXd mu;     // per-column train mean
  Eigen::VectorXd sigma;  // per-column train population std, floored

  static constexpr double kSigmaFloor = 1e-8;
};

// Uses population (1/n) std so that standardizing the fit data gives
// exactly mean 0 / std 1 per column. Constant columns are floored and
// map to all zeros.
Standardizer fit_standardizer(const MetricMatrix& train_matrix);
MetricMatrix apply_standardizer(const Standardizer& std, const MetricMatrix& matrix);
// Column-checked variant for raw matrices already in manifest order.
Eigen::MatrixXd standardize(const Standardizer& std, const Eigen::MatrixXd& scores);

nlohmann::ordered_json standardizer_to_json(const Standardizer& std);
Standardizer standardizer_from_json(const nlohmann::json& j);

struct CellKey {
  int year = 0;
  std::string lang_pair;
  friend auto operator<=>(const CellKey&, const CellKey&) = default;
};

struct CellStats {
  double mean = 0.0;
  double std = 1.0;
};

// Human-score normalization within (year, lang_pair) annotation cells,
// fit on training instances only.
struct CellNormalizer {
  std::map<CellKey, CellStats> cells;
};

CellNormalizer fit_cell_normalizer(const std::vector<Instance>& train_instances);
// Normalizes y in place per cell. Instances from a cell unseen at fit time
// raise InputError unless pass_through_unseen is set.
std::vector<Instance> apply_cell_normalizer(const CellNormalizer& cn,
                                            std::vector<Instance> instances,
                                            bool pass_through_unseen = false);

nlohmann::ordered_json cell_normalizer_to_json(const CellNormalizer& cn);
CellNormalizer cell_normalizer_from_json(const nlohmann::json& j);

}  // namespace dmm
