#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <json.hpp>

#include "dmm/corpus.hpp"

namespace dmm {

// K centroids over the source-embedding space.
struct ClusterModel {
  Eigen::MatrixXd centroids;  // K x m
  int K = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  double inertia = 0.0;  // within-cluster SSE on the deduplicated fit points
};

struct KMeansParams {
  int n_restarts = 10;
  int max_iter = 300;
  double tol = 1e-4;  // convergence threshold on max centroid shift
};

// Lloyd's algorithm with k-means++ seeding. Duplicate vectors are collapsed
// to one point before fitting; the best of n_restarts by inertia wins.
// Deterministic for a fixed seed.
ClusterModel fit_kmeans(const EmbeddingTable& train_embeddings, int K, std::uint64_t seed,
                        const KMeansParams& params = {});

// D_k = squared Euclidean distance from e to centroid k.
Eigen::VectorXd squared_distances(const ClusterModel& model, const Eigen::VectorXd& e);

struct Responsibilities {
  Eigen::VectorXd r;  // sums to 1
  double temperature = 1.0;
};

// softmax(-D/T), max-shifted for stability.
Responsibilities responsibilities(const Eigen::VectorXd& distances, double temperature);

// argmin distance; ties broken by lowest index.
int hard_assign(const Eigen::VectorXd& distances);

nlohmann::ordered_json cluster_model_to_json(const ClusterModel& model);
ClusterModel cluster_model_from_json(const nlohmann::json& j);

}  // namespace dmm
