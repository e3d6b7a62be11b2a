#include "dmm/context.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "dmm/rng.hpp"

namespace dmm {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Collapses byte-identical vectors, keeping first occurrence in segment-id
// order so the point set is a pure function of the table contents.
Eigen::MatrixXd deduplicated_points(const EmbeddingTable& table) {
  std::set<std::string> seen;
  std::vector<const Eigen::VectorXd*> unique;
  for (const auto& [id, vec] : table.vectors) {
    std::string bytes(reinterpret_cast<const char*>(vec.data()),
                      sizeof(double) * static_cast<std::size_t>(vec.size()));
    if (seen.insert(std::move(bytes)).second) unique.push_back(&vec);
  }
  Eigen::MatrixXd points(static_cast<Eigen::Index>(unique.size()), table.dim);
  for (std::size_t i = 0; i < unique.size(); ++i)
    points.row(static_cast<Eigen::Index>(i)) = unique[i]->transpose();
  return points;
}

Eigen::MatrixXd kmeanspp_seed(const Eigen::MatrixXd& points, int K, Rng& rng) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd centers(K, points.cols());
  centers.row(0) = points.row(static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int k = 1; k < K; ++k) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      const double target = rng.next_double() * total;
      double cum = 0.0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        cum += d2[i];
        if (cum >= target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(n)));
    }
    centers.row(k) = points.row(chosen);
    d2 = d2.cwiseMin((points.rowwise() - centers.row(k)).rowwise().squaredNorm());
  }
  return centers;
}

struct LloydResult {
  Eigen::MatrixXd centers;
  double inertia = std::numeric_limits<double>::infinity();
};

LloydResult lloyd(const Eigen::MatrixXd& points, Eigen::MatrixXd centers, int max_iter,
                  double tol) {
  const Eigen::Index n = points.rows();
  const int K = static_cast<int>(centers.rows());
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(K), 0);
  double prev_inertia = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < max_iter; ++iter) {
    // Assignment step; ties go to the lowest centroid index.
    std::fill(counts.begin(), counts.end(), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (points.row(i) - centers.row(0)).squaredNorm();
      for (int k = 1; k < K; ++k) {
        const double d = (points.row(i) - centers.row(k)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      assign[static_cast<std::size_t>(i)] = best;
      ++counts[static_cast<std::size_t>(best)];
    }

    // Keep K clusters populated: hand each empty cluster the point farthest
    // from its current centroid (never emptying a singleton donor).
    for (int k = 0; k < K; ++k) {
      if (counts[static_cast<std::size_t>(k)] > 0) continue;
      Eigen::Index farthest = -1;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int a = assign[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(a)] <= 1) continue;
        const double d = (points.row(i) - centers.row(a)).squaredNorm();
        if (d > far_d) {
          far_d = d;
          farthest = i;
        }
      }
      if (farthest < 0) throw InputError("k-means: cannot populate empty cluster");
      --counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(farthest)])];
      assign[static_cast<std::size_t>(farthest)] = k;
      ++counts[static_cast<std::size_t>(k)];
    }

    // Update step.
    Eigen::MatrixXd new_centers = Eigen::MatrixXd::Zero(K, points.cols());
    for (Eigen::Index i = 0; i < n; ++i)
      new_centers.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
    for (int k = 0; k < K; ++k)
      new_centers.row(k) /= static_cast<double>(counts[static_cast<std::size_t>(k)]);

    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      inertia += (points.row(i) - new_centers.row(assign[static_cast<std::size_t>(i)])).squaredNorm();

    // Lloyd iterations never increase the objective; a violation beyond
    // rounding noise means the update step is broken.
    if (inertia > prev_inertia * (1.0 + 1e-12) + 1e-12)
      throw std::logic_error("k-means inertia increased across an iteration");
    const double shift = (new_centers - centers).rowwise().norm().maxCoeff();
    centers = std::move(new_centers);
    prev_inertia = inertia;
    if (shift < tol) break;
  }

  // Final assignment against the final centers.
  double final_inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k)
      best_d = std::min(best_d, (points.row(i) - centers.row(k)).squaredNorm());
    final_inertia += best_d;
  }
  return {std::move(centers), final_inertia};
}

}  // namespace

ClusterModel fit_kmeans(const EmbeddingTable& train_embeddings, int K, std::uint64_t seed,
                        const KMeansParams& params) {
  if (K < 1) throw InputError("K must be >= 1");
  if (train_embeddings.empty()) throw InputError("cannot fit k-means on an empty embedding table");
  if (train_embeddings.normalized) {
    for (const auto& [id, vec] : train_embeddings.vectors)
      if (std::abs(vec.norm() - 1.0) > 1e-6)
        throw InputError("embedding table claims unit normalization but segment '" + id +
                         "' has norm " + std::to_string(vec.norm()));
  }

  const Eigen::MatrixXd points = deduplicated_points(train_embeddings);
  if (K > points.rows())
    throw InputError("K = " + std::to_string(K) + " exceeds the " +
                     std::to_string(points.rows()) + " distinct embedding vectors");

  ClusterModel best;
  best.K = K;
  best.dim = train_embeddings.dim;
  best.seed = seed;
  best.inertia = std::numeric_limits<double>::infinity();

  for (int restart = 0; restart < params.n_restarts; ++restart) {
    Rng rng(derive_seed(seed, "kmeans:restart:" + std::to_string(restart)));
    Eigen::MatrixXd init = kmeanspp_seed(points, K, rng);
    LloydResult result = lloyd(points, std::move(init), params.max_iter, params.tol);
    if (result.inertia < best.inertia) {
      best.inertia = result.inertia;
      best.centroids = std::move(result.centers);
    }
  }
  return best;
}

Eigen::VectorXd squared_distances(const ClusterModel& model, const Eigen::VectorXd& e) {
  if (e.size() != model.dim)
    throw InputError("embedding dimension " + std::to_string(e.size()) +
                     " does not match cluster model dimension " + std::to_string(model.dim));
  return (model.centroids.rowwise() - e.transpose()).rowwise().squaredNorm();
}

Responsibilities responsibilities(const Eigen::VectorXd& distances, double temperature) {
  if (!(temperature > 0.0)) throw InputError("temperature must be > 0");
  if (distances.size() == 0) throw InputError("empty distance vector");
  Eigen::ArrayXd logits = -distances.array() / temperature;
  logits -= logits.maxCoeff();  // max-shift: exp never overflows, top entry is exp(0)
  Eigen::ArrayXd r = logits.exp();
  r /= r.sum();
  return {r.matrix(), temperature};
}

int hard_assign(const Eigen::VectorXd& distances) {
  if (distances.size() == 0) throw InputError("empty distance vector");
  Eigen::Index idx = 0;
  distances.minCoeff(&idx);
  return static_cast<int>(idx);
}

ordered_json cluster_model_to_json(const ClusterModel& model) {
  ordered_json j;
  j["K"] = model.K;
  j["dim"] = model.dim;
  j["seed"] = model.seed;
  ordered_json rows = ordered_json::array();
  for (Eigen::Index k = 0; k < model.centroids.rows(); ++k) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index jj = 0; jj < model.centroids.cols(); ++jj)
      row.push_back(model.centroids(k, jj));
    rows.push_back(std::move(row));
  }
  j["centroids"] = std::move(rows);
  j["inertia"] = model.inertia;
  return j;
}

ClusterModel cluster_model_from_json(const json& j) {
  ClusterModel model;
  model.K = j.at("K").get<int>();
  model.dim = j.at("dim").get<int>();
  model.seed = j.at("seed").get<std::uint64_t>();
  model.inertia = j.at("inertia").get<double>();
  const auto& rows = j.at("centroids");
  model.centroids.resize(model.K, model.dim);
  if (static_cast<int>(rows.size()) != model.K)
    throw InputError("cluster model JSON: centroid count does not match K");
  for (int k = 0; k < model.K; ++k) {
    const auto& row = rows[static_cast<std::size_t>(k)];
    if (static_cast<int>(row.size()) != model.dim)
      throw InputError("cluster model JSON: centroid dimension mismatch");
    for (int c = 0; c < model.dim; ++c) model.centroids(k, c) = row[static_cast<std::size_t>(c)];
  }
  return model;
}

}  // namespace dmm
