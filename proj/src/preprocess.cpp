#include "dmm/preprocess.hpp"

#include <cmath>

namespace dmm {

using nlohmann::json;
using nlohmann::ordered_json;

Standardizer fit_standardizer(const MetricMatrix& train_matrix) {
  const Eigen::Index n = train_matrix.rows();
  const Eigen::Index d = train_matrix.cols();
  if (n < 2) throw InputError("fit_standardizer needs at least 2 rows, got " + std::to_string(n));

  Standardizer std_;
  std_.metric_names = train_matrix.metric_names;
  std_.mu = train_matrix.scores.colwise().mean();
  std_.sigma.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var =
        (train_matrix.scores.col(j).array() - std_.mu[j]).square().sum() / static_cast<double>(n);
    std_.sigma[j] = std::max(std::sqrt(var), Standardizer::kSigmaFloor);
  }
  return std_;
}

Eigen::MatrixXd standardize(const Standardizer& std_, const Eigen::MatrixXd& scores) {
  if (scores.cols() != std_.mu.size())
    throw InputError("standardizer expects " + std::to_string(std_.mu.size()) + " columns, got " +
                     std::to_string(scores.cols()));
  return (scores.rowwise() - std_.mu.transpose()).array().rowwise() /
         std_.sigma.transpose().array();
}

MetricMatrix apply_standardizer(const Standardizer& std_, const MetricMatrix& matrix) {
  if (matrix.metric_names != std_.metric_names)
    throw InputError("metric name/order mismatch between standardizer and matrix");
  MetricMatrix out = matrix;
  out.scores = standardize(std_, matrix.scores);
  return out;
}

ordered_json standardizer_to_json(const Standardizer& std_) {
  ordered_json j;
  j["metric_names"] = std_.metric_names;
  j["mu"] = std::vector<double>(std_.mu.begin(), std_.mu.end());
  j["sigma"] = std::vector<double>(std_.sigma.begin(), std_.sigma.end());
  return j;
}

Standardizer standardizer_from_json(const json& j) {
  Standardizer std_;
  std_.metric_names = j.at("metric_names").get<std::vector<std::string>>();
  const auto mu = j.at("mu").get<std::vector<double>>();
  const auto sigma = j.at("sigma").get<std::vector<double>>();
  if (mu.size() != std_.metric_names.size() || sigma.size() != std_.metric_names.size())
    throw InputError("standardizer JSON: array sizes do not match metric_names");
  std_.mu = Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size()));
  std_.sigma =
      Eigen::Map<const Eigen::VectorXd>(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
  return std_;
}

namespace {

std::string cell_name(const CellKey& key) {
  return "(" + std::to_string(key.year) + ", " + key.lang_pair + ")";
}

}  // namespace

CellNormalizer fit_cell_normalizer(const std::vector<Instance>& train_instances) {
  std::map<CellKey, std::vector<double>> scores_by_cell;
  for (const Instance& inst : train_instances)
    scores_by_cell[{inst.year, inst.lang_pair}].push_back(inst.human_score);

  CellNormalizer cn;
  for (const auto& [key, scores] : scores_by_cell) {
    if (scores.size() < 2)
      throw InputError("annotation cell " + cell_name(key) +
                       " has fewer than 2 training instances");
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(scores.size());
    cn.cells[key] = {mean, std::max(std::sqrt(var), Standardizer::kSigmaFloor)};
  }
  return cn;
}

std::vector<Instance> apply_cell_normalizer(const CellNormalizer& cn,
                                            std::vector<Instance> instances,
                                            bool pass_through_unseen) {
  for (Instance& inst : instances) {
    const CellKey key{inst.year, inst.lang_pair};
    auto it = cn.cells.find(key);
    if (it == cn.cells.end()) {
      if (pass_through_unseen) continue;
      throw InputError("annotation cell " + cell_name(key) + " was not seen at fit time");
    }
    inst.human_score = (inst.human_score - it->second.mean) / it->second.std;
  }
  return instances;
}

ordered_json cell_normalizer_to_json(const CellNormalizer& cn) {
  ordered_json cells = ordered_json::array();
  for (const auto& [key, stats] : cn.cells) {
    ordered_json c;
    c["year"] = key.year;
    c["lang_pair"] = key.lang_pair;
    c["mean"] = stats.mean;
    c["std"] = stats.std;
    cells.push_back(std::move(c));
  }
  ordered_json j;
  j["cells"] = std::move(cells);
  return j;
}

CellNormalizer cell_normalizer_from_json(const json& j) {
  CellNormalizer cn;
  for (const auto& c : j.at("cells")) {
    CellKey key{c.at("year").get<int>(), c.at("lang_pair").get<std::string>()};
    cn.cells[key] = {c.at("mean").get<double>(), c.at("std").get<double>()};
  }
  return cn;
}

}  // namespace dmm
