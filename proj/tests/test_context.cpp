#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dmm/context.hpp"
#include "dmm/rng.hpp"
#include "oracles.hpp"

using namespace dmm;

namespace {

// Three tight blobs around orthogonal unit vectors; returns generating labels.
EmbeddingTable blob_table(int points_per_blob, double sigma, std::uint64_t seed,
                          std::vector<int>* labels) {
  Rng rng(seed);
  EmbeddingTable table;
  table.dim = 8;
  int id = 0;
  for (int blob = 0; blob < 3; ++blob) {
    Eigen::VectorXd center = Eigen::VectorXd::Zero(8);
    center[blob] = 1.0;
    for (int i = 0; i < points_per_blob; ++i) {
      Eigen::VectorXd v = center;
      for (int j = 0; j < 8; ++j) v[j] += sigma * rng.gaussian();
      char buf[16];
      std::snprintf(buf, sizeof(buf), "s%04d", id++);
      table.vectors[buf] = v;
      if (labels) labels->push_back(blob);
    }
  }
  table.normalized = false;
  return table;
}

}  // namespace

TEST_CASE("fit_kmeans recovers well-separated blobs") {
  std::vector<int> truth;
  const EmbeddingTable table = blob_table(100, 0.01, 99, &truth);
  const ClusterModel model = fit_kmeans(table, 3, 0);
  std::vector<int> found;
  for (const auto& [id, vec] : table.vectors)
    found.push_back(hard_assign(squared_distances(model, vec)));
  // map iteration is sorted by id = generation order, so labels align
  CHECK(oracle::adjusted_rand_index(truth, found) >= 0.99);
}

TEST_CASE("fit_kmeans: K=1 closed form is the mean of deduplicated vectors") {
  EmbeddingTable table;
  table.dim = 2;
  table.vectors["a"] = Eigen::Vector2d(1, 0);
  table.vectors["b"] = Eigen::Vector2d(0, 1);
  table.vectors["c"] = Eigen::Vector2d(0, 1);  // duplicate of b, collapses
  const ClusterModel model = fit_kmeans(table, 1, 3);
  CHECK(model.centroids(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(model.centroids(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  // centroid is off the unit sphere and not renormalized
  CHECK(model.centroids.row(0).norm() < 0.8);
}

TEST_CASE("fit_kmeans: deterministic bit-for-bit for a fixed seed") {
  const EmbeddingTable table = blob_table(40, 0.05, 123, nullptr);
  const ClusterModel a = fit_kmeans(table, 3, 17);
  const ClusterModel b = fit_kmeans(table, 3, 17);
  CHECK(a.centroids == b.centroids);
  CHECK(a.inertia == b.inertia);
}

TEST_CASE("fit_kmeans: K above the distinct-point count is an error") {
  EmbeddingTable table;
  table.dim = 2;
  table.vectors["a"] = Eigen::Vector2d(1, 0);
  table.vectors["b"] = Eigen::Vector2d(1, 0);
  table.vectors["c"] = Eigen::Vector2d(0, 1);
  CHECK_THROWS_AS(fit_kmeans(table, 3, 0), InputError);  // only 2 distinct vectors
  CHECK_NOTHROW(fit_kmeans(table, 2, 0));
}

TEST_CASE("fit_kmeans: inconsistent normalization flag is an error") {
  EmbeddingTable table;
  table.dim = 2;
  table.vectors["a"] = Eigen::Vector2d(3, 4);
  table.normalized = true;  // lie about it
  CHECK_THROWS_AS(fit_kmeans(table, 1, 0), InputError);
}

TEST_CASE("squared_distances") {
  ClusterModel model;
  model.K = 2;
  model.dim = 2;
  model.centroids.resize(2, 2);
  model.centroids << 1, 0, 0, 1;
  const Eigen::VectorXd d = squared_distances(model, Eigen::Vector2d(1, 0));
  CHECK(d[0] == 0.0);
  CHECK(d[1] == doctest::Approx(2.0));
  CHECK_THROWS_AS(squared_distances(model, Eigen::Vector3d(1, 0, 0)), InputError);
}

TEST_CASE("squared_distances: invariant under simultaneous rotation") {
  Rng rng(7);
  ClusterModel model;
  model.K = 3;
  model.dim = 3;
  model.centroids.resize(3, 3);
  Eigen::VectorXd e(3);
  for (int i = 0; i < 3; ++i) {
    e[i] = rng.gaussian();
    for (int j = 0; j < 3; ++j) model.centroids(i, j) = rng.gaussian();
  }
  // Householder reflection as an exact orthogonal map.
  Eigen::Vector3d u(1.0, 2.0, -1.0);
  u.normalize();
  const Eigen::Matrix3d Q = Eigen::Matrix3d::Identity() - 2.0 * u * u.transpose();
  ClusterModel rotated = model;
  rotated.centroids = model.centroids * Q.transpose();
  const Eigen::VectorXd d1 = squared_distances(model, e);
  const Eigen::VectorXd d2 = squared_distances(rotated, Q * e);
  CHECK((d1 - d2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("responsibilities: symmetric distances") {
  const Responsibilities r = responsibilities(Eigen::Vector2d(1, 1), 0.37);
  CHECK(r.r[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.r[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("responsibilities: direct softmax evaluation") {
  const Responsibilities r = responsibilities(Eigen::Vector2d(0, 1), 1.0);
  CHECK(r.r[0] == doctest::Approx(0.7310585786300049).epsilon(1e-9));
  CHECK(r.r[1] == doctest::Approx(0.2689414213699951).epsilon(1e-9));
}

TEST_CASE("responsibilities: T->0 approaches one-hot, T->inf approaches uniform") {
  const Responsibilities sharp = responsibilities(Eigen::Vector2d(0, 1), 1e-6);
  CHECK(sharp.r[0] >= 1.0 - 1e-9);
  CHECK(sharp.r[1] <= 1e-9);

  Eigen::VectorXd d(4);
  d << 0.3, 1.2, 0.8, 0.1;
  const Responsibilities flat = responsibilities(d, 1e6);
  CHECK((flat.r.array() - 0.25).abs().maxCoeff() < 1e-4);
}

TEST_CASE("responsibilities: large distances do not underflow to 0/0") {
  Eigen::VectorXd d(2);
  d << 1000.0, 1001.0;  // naive exp(-1000/T) underflows at T=1
  const Responsibilities r = responsibilities(d, 1.0);
  CHECK(std::isfinite(r.r[0]));
  CHECK(r.r.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.r[0] > r.r[1]);
}

TEST_CASE("responsibilities: properties on random inputs") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int K = 2 + static_cast<int>(rng.next_below(6));
    Eigen::VectorXd d(K);
    for (int k = 0; k < K; ++k) d[k] = 3.0 * rng.next_double();
    const double T = 0.05 + 2.0 * rng.next_double();
    const Responsibilities r = responsibilities(d, T);
    CHECK(std::abs(r.r.sum() - 1.0) <= 1e-12);
    CHECK(r.r.minCoeff() >= 0.0);
    // monotonicity: smaller distance -> larger responsibility
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j)
        if (d[i] < d[j]) CHECK(r.r[i] > r.r[j]);
    // permutation equivariance: reverse the distances
    Eigen::VectorXd rev = d.reverse();
    const Responsibilities rr = responsibilities(rev, T);
    CHECK((rr.r.reverse() - r.r).cwiseAbs().maxCoeff() < 1e-15);
    // argmin(D) == argmax(r)
    Eigen::Index amin, amax;
    d.minCoeff(&amin);
    r.r.maxCoeff(&amax);
    CHECK(amin == amax);
  }
}

TEST_CASE("responsibilities: T <= 0 is an error") {
  CHECK_THROWS_AS(responsibilities(Eigen::Vector2d(0, 1), 0.0), InputError);
  CHECK_THROWS_AS(responsibilities(Eigen::Vector2d(0, 1), -1.0), InputError);
}

TEST_CASE("hard_assign: argmin with lowest-index tie-break") {
  Eigen::VectorXd d(3);
  d << 3, 1, 2;
  CHECK(hard_assign(d) == 1);
  CHECK(hard_assign(Eigen::Vector2d(1, 1)) == 0);
}

TEST_CASE("cluster model JSON round-trip") {
  const EmbeddingTable table = blob_table(20, 0.05, 5, nullptr);
  const ClusterModel model = fit_kmeans(table, 2, 9);
  const ClusterModel back = cluster_model_from_json(cluster_model_to_json(model));
  CHECK(back.K == model.K);
  CHECK(back.dim == model.dim);
  CHECK(back.seed == model.seed);
  CHECK(back.inertia == model.inertia);
  CHECK(back.centroids == model.centroids);
}
