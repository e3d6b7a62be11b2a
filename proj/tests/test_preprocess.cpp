#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dmm/preprocess.hpp"
#include "dmm/rng.hpp"

using namespace dmm;

namespace {

MetricMatrix make_matrix(const std::vector<std::string>& names,
                         const std::vector<std::vector<double>>& rows) {
  MetricMatrix m;
  m.metric_names = names;
  m.scores.resize(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < names.size(); ++j)
      m.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  for (std::size_t i = 0; i < rows.size(); ++i)
    m.row_keys.push_back({"s" + std::to_string(i), "x"});
  return m;
}

}  // namespace

TEST_CASE("fit_standardizer: population statistics") {
  const MetricMatrix m = make_matrix({"a"}, {{1}, {2}, {3}});
  const Standardizer std_ = fit_standardizer(m);
  CHECK(std_.mu[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(std_.sigma[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("fit_standardizer: constant column floored") {
  const MetricMatrix m = make_matrix({"a"}, {{5}, {5}, {5}});
  const Standardizer std_ = fit_standardizer(m);
  CHECK(std_.sigma[0] == Standardizer::kSigmaFloor);
  const MetricMatrix out = apply_standardizer(std_, m);
  CHECK(out.scores.col(0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit_standardizer: columns are independent") {
  const MetricMatrix both = make_matrix({"a", "b"}, {{1, 10}, {2, 20}, {3, 60}});
  const MetricMatrix only_b = make_matrix({"b"}, {{10}, {20}, {60}});
  const Standardizer s_both = fit_standardizer(both);
  const Standardizer s_b = fit_standardizer(only_b);
  CHECK(s_both.mu[1] == s_b.mu[0]);
  CHECK(s_both.sigma[1] == s_b.sigma[0]);
}

TEST_CASE("fit_standardizer: rejects single row") {
  CHECK_THROWS_AS(fit_standardizer(make_matrix({"a"}, {{1}})), InputError);
}

TEST_CASE("apply_standardizer: centering identity and the derived column") {
  const MetricMatrix m = make_matrix({"a"}, {{1}, {2}, {3}});
  const Standardizer std_ = fit_standardizer(m);
  const MetricMatrix out = apply_standardizer(std_, m);
  CHECK(out.scores(0, 0) == doctest::Approx(-1.224744871391589).epsilon(1e-12));
  CHECK(out.scores(1, 0) == doctest::Approx(0.0));
  CHECK(out.scores(2, 0) == doctest::Approx(1.224744871391589).epsilon(1e-12));

  const MetricMatrix at_mean = make_matrix({"a"}, {{2}});
  CHECK(apply_standardizer(std_, at_mean).scores(0, 0) == 0.0);
}

TEST_CASE("apply_standardizer: name/order mismatch is an error") {
  const Standardizer std_ = fit_standardizer(make_matrix({"a", "b"}, {{1, 2}, {3, 4}}));
  CHECK_THROWS_AS(apply_standardizer(std_, make_matrix({"b", "a"}, {{1, 2}})), InputError);
}

TEST_CASE("standardizing own fit data gives mean 0, std 1") {
  Rng rng(11);
  MetricMatrix m;
  m.metric_names = {"a", "b", "c"};
  m.scores.resize(200, 3);
  for (Eigen::Index i = 0; i < 200; ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      m.scores(i, j) = 3.0 * rng.gaussian() + static_cast<double>(j) * 10.0;
  const Standardizer std_ = fit_standardizer(m);
  const Eigen::MatrixXd z = standardize(std_, m.scores);
  for (Eigen::Index j = 0; j < 3; ++j) {
    CHECK(std::abs(z.col(j).mean()) < 1e-9);
    const double var = (z.col(j).array() - z.col(j).mean()).square().sum() / 200.0;
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
  }
}

TEST_CASE("standardization is affine per column") {
  Rng rng(12);
  MetricMatrix m;
  m.metric_names = {"a"};
  m.scores.resize(50, 1);
  for (Eigen::Index i = 0; i < 50; ++i) m.scores(i, 0) = rng.gaussian();
  const double a = 2.5, b = -7.0;
  MetricMatrix transformed = m;
  transformed.scores = (a * m.scores.array() + b).matrix();

  const Standardizer s1 = fit_standardizer(m);
  const Standardizer s2 = fit_standardizer(transformed);
  // apply(a x + b) under the transformed standardizer equals apply(x): the
  // affine map is absorbed by (mu, sigma).
  const Eigen::MatrixXd z1 = standardize(s1, m.scores);
  const Eigen::MatrixXd z2 = standardize(s2, transformed.scores);
  CHECK((z1 - z2).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("standardizer JSON round-trip") {
  const Standardizer std_ = fit_standardizer(make_matrix({"a", "b"}, {{1, 2}, {3, 4}, {5, 9}}));
  const Standardizer back = standardizer_from_json(standardizer_to_json(std_));
  CHECK(back.metric_names == std_.metric_names);
  CHECK(back.mu == std_.mu);
  CHECK(back.sigma == std_.sigma);
}

namespace {

Instance inst(int year, const std::string& lp, double score) {
  static int counter = 0;
  return {"s" + std::to_string(counter++), "sys", lp, year, "t", score, Split::train};
}

}  // namespace

TEST_CASE("fit_cell_normalizer: two-point cell") {
  const CellNormalizer cn = fit_cell_normalizer({inst(2024, "en-cs", 0), inst(2024, "en-cs", 10)});
  const CellStats stats = cn.cells.at({2024, "en-cs"});
  CHECK(stats.mean == doctest::Approx(5.0));
  CHECK(stats.std == doctest::Approx(5.0));
}

TEST_CASE("fit_cell_normalizer: cells are independent") {
  const CellNormalizer cn = fit_cell_normalizer({inst(2024, "en-cs", 0), inst(2024, "en-cs", 10),
                                                 inst(2023, "en-cs", 100),
                                                 inst(2023, "en-cs", 200)});
  CHECK(cn.cells.at({2024, "en-cs"}).mean == doctest::Approx(5.0));
  CHECK(cn.cells.at({2023, "en-cs"}).mean == doctest::Approx(150.0));
}

TEST_CASE("fit_cell_normalizer: singleton cell names the cell") {
  try {
    fit_cell_normalizer({inst(2024, "en-cs", 0), inst(2024, "en-cs", 1), inst(2021, "en-uk", 5)});
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2021") != std::string::npos);
    CHECK(msg.find("en-uk") != std::string::npos);
  }
}

TEST_CASE("apply_cell_normalizer: normalizes and errors on unseen cells") {
  const CellNormalizer cn = fit_cell_normalizer({inst(2024, "en-cs", 0), inst(2024, "en-cs", 10)});
  std::vector<Instance> target{inst(2024, "en-cs", 10), inst(2024, "en-cs", 5)};
  const auto out = apply_cell_normalizer(cn, target);
  CHECK(out[0].human_score == doctest::Approx(1.0));
  CHECK(out[1].human_score == doctest::Approx(0.0));

  std::vector<Instance> unseen{inst(1999, "xx-yy", 1)};
  CHECK_THROWS_AS(apply_cell_normalizer(cn, unseen), InputError);
  const auto passed = apply_cell_normalizer(cn, unseen, /*pass_through_unseen=*/true);
  CHECK(passed[0].human_score == 1.0);
}

TEST_CASE("cell normalization of its own fit cell gives mean 0, std 1") {
  Rng rng(5);
  std::vector<Instance> train;
  for (int i = 0; i < 100; ++i) train.push_back(inst(2024, "en-cs", 4.0 + 2.0 * rng.gaussian()));
  const CellNormalizer cn = fit_cell_normalizer(train);
  const auto out = apply_cell_normalizer(cn, train);
  double mean = 0.0;
  for (const auto& i : out) mean += i.human_score;
  mean /= static_cast<double>(out.size());
  double var = 0.0;
  for (const auto& i : out) var += (i.human_score - mean) * (i.human_score - mean);
  var /= static_cast<double>(out.size());
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
}

TEST_CASE("cell normalizer JSON round-trip") {
  const CellNormalizer cn = fit_cell_normalizer({inst(2024, "en-cs", 0), inst(2024, "en-cs", 10),
                                                 inst(2023, "en-ja", 1), inst(2023, "en-ja", 3)});
  const CellNormalizer back = cell_normalizer_from_json(cell_normalizer_to_json(cn));
  REQUIRE(back.cells.size() == cn.cells.size());
  for (const auto& [key, stats] : cn.cells) {
    CHECK(back.cells.at(key).mean == stats.mean);
    CHECK(back.cells.at(key).std == stats.std);
  }
}
