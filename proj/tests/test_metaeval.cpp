#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dmm/metaeval.hpp"
#include "dmm/rng.hpp"
#include "oracles.hpp"

using namespace dmm;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n, double tie_rate) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && rng.next_double() < tie_rate) {
      v[i] = v[rng.next_below(i)];  // copy an earlier value: injects ties
    } else {
      v[i] = std::floor(rng.next_double() * 100.0) / 10.0;
    }
  }
  return v;
}

bool all_tied(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
}

SegmentGroupView groups_of(const std::vector<std::vector<std::pair<double, double>>>& segments) {
  std::vector<ScoredInstance> rows;
  int seg = 0;
  for (const auto& segment : segments) {
    int sys = 0;
    for (const auto& [metric, human] : segment)
      rows.push_back({"seg" + std::to_string(seg), "sys" + std::to_string(sys++), metric, human});
    ++seg;
  }
  return build_groups(rows);
}

// Exhaustive tie-calibration sweep: every midpoint threshold plus 0 and the
// max, each evaluated by direct counting.
TieCalibrationResult calibrate_oracle(const SegmentGroupView& view) {
  struct Pair {
    double dm;
    int ms, gold;
  };
  std::vector<Pair> pairs;
  for (const auto& group : view.groups)
    for (std::size_t i = 0; i < group.size(); ++i)
      for (std::size_t j = i + 1; j < group.size(); ++j) {
        const double dm = group[i].metric - group[j].metric;
        const double dh = group[i].human - group[j].human;
        pairs.push_back({std::abs(dm), dm > 0 ? 1 : (dm < 0 ? -1 : 0),
                         dh > 0 ? 1 : (dh < 0 ? -1 : 0)});
      }
  std::vector<double> values;
  for (const auto& p : pairs) values.push_back(p.dm);
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> thresholds{0.0};
  for (std::size_t i = 0; i + 1 < values.size(); ++i)
    thresholds.push_back((values[i] + values[i + 1]) / 2.0);
  if (!values.empty() && values.back() > 0.0) thresholds.push_back(values.back());

  TieCalibrationResult best;
  best.n_pairs = static_cast<std::int64_t>(pairs.size());
  best.accuracy = -1.0;
  for (double eps : thresholds) {
    std::size_t correct = 0;
    for (const auto& p : pairs) {
      const int predicted = p.dm <= eps ? 0 : p.ms;
      if (predicted == p.gold) ++correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(pairs.size());
    if (acc > best.accuracy) {
      best.accuracy = acc;
      best.epsilon_star = eps;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("kendall_tau_b: hand cases") {
  const std::vector<double> inc{1, 2, 3};
  const std::vector<double> dec{3, 2, 1};
  CHECK(kendall_tau_b(inc, inc) == doctest::Approx(1.0));
  CHECK(kendall_tau_b(inc, dec) == doctest::Approx(-1.0));
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> b{1, 3, 2, 4};
  CHECK(kendall_tau_b(a, b) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));  // 5 C, 1 D
}

TEST_CASE("kendall_tau_b: fully tied input is an error") {
  const std::vector<double> tied{2, 2, 2};
  const std::vector<double> ok{1, 2, 3};
  CHECK_THROWS_AS(kendall_tau_b(tied, ok), InputError);
  CHECK_THROWS_AS(kendall_tau_b(ok, tied), InputError);
}

TEST_CASE("kendall_tau_b: fast path equals brute force exactly on 200 random vectors") {
  Rng rng(2024);
  int checked = 0;
  while (checked < 200) {
    const std::size_t n = 2 + rng.next_below(49);
    const std::vector<double> a = random_vector(rng, n, 0.3);
    const std::vector<double> b = random_vector(rng, n, 0.3);
    if (all_tied(a) || all_tied(b)) continue;
    CHECK(kendall_tau_b(a, b) == oracle::kendall_tau_b_brute(a, b));
    ++checked;
  }
}

TEST_CASE("pearson: hand cases") {
  const std::vector<double> a{1, 2, 3};
  std::vector<double> b{1, 2, 4};
  CHECK(pearson(a, a) == doctest::Approx(1.0));
  std::vector<double> neg(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) neg[i] = -2.0 * a[i] + 7.0;
  CHECK(pearson(a, neg) == doctest::Approx(-1.0));
  CHECK(pearson(a, b) == doctest::Approx(0.9819805060619659).epsilon(1e-9));
  const std::vector<double> constant{5, 5, 5};
  CHECK_THROWS_AS(pearson(a, constant), InputError);
}

TEST_CASE("build_groups: singleton segments are skipped and counted") {
  const SegmentGroupView view = groups_of({{{1, 1}, {2, 2}}, {{5, 5}}});
  CHECK(view.groups.size() == 1);
  CHECK(view.n_skipped_groups == 1);
}

TEST_CASE("pairwise_accuracy_with_ties: hand cases") {
  // perfect metric
  const SegmentGroupView perfect = groups_of({{{1, 1}, {2, 2}}, {{3, 3}, {1, 1}}});
  CHECK(pairwise_accuracy_with_ties(perfect, 0.0) == 1.0);

  // predicted tie vs gold non-tie
  const SegmentGroupView tie_wrong = groups_of({{{5, 1}, {5, 2}}});
  CHECK(pairwise_accuracy_with_ties(tie_wrong, 0.0) == 0.0);

  // epsilon-tie matches gold tie
  const SegmentGroupView tie_right = groups_of({{{3.0, 1}, {3.05, 1}}});
  CHECK(pairwise_accuracy_with_ties(tie_right, 0.1) == 1.0);

  // cross-segment pairs are never compared: two segments, one system pair each
  const SegmentGroupView two_segments = groups_of({{{1, 2}, {2, 1}}, {{9, 1}, {1, 9}}});
  CHECK(pairwise_accuracy_with_ties(two_segments, 0.0) == 0.0);
}

TEST_CASE("pairwise accuracy at epsilon=0 is invariant to monotone metric transforms") {
  Rng rng(3);
  std::vector<std::vector<std::pair<double, double>>> raw, transformed;
  for (int seg = 0; seg < 10; ++seg) {
    std::vector<std::pair<double, double>> a, b;
    const std::size_t n_sys = 2 + rng.next_below(3);
    for (std::size_t s = 0; s < n_sys; ++s) {
      const double m = rng.next_double() * 4.0 - 2.0;
      const double h = std::floor(rng.next_double() * 5.0);
      a.push_back({m, h});
      b.push_back({std::exp(m) + m * m * m, h});  // strictly increasing on [-2, 2]
    }
    raw.push_back(a);
    transformed.push_back(b);
  }
  CHECK(pairwise_accuracy_with_ties(groups_of(raw), 0.0) ==
        pairwise_accuracy_with_ties(groups_of(transformed), 0.0));
}

TEST_CASE("calibrate_ties: perfect metric needs no threshold") {
  const SegmentGroupView perfect = groups_of({{{1, 1}, {2, 2}, {3, 3}}});
  const TieCalibrationResult result = calibrate_ties(perfect);
  CHECK(result.epsilon_star == 0.0);
  CHECK(result.accuracy == 1.0);
  CHECK(result.n_pairs == 3);
}

TEST_CASE("calibrate_ties: all-tied gold rewards declaring everything tied") {
  const SegmentGroupView view = groups_of({{{0.1, 5}, {0.9, 5}, {0.4, 5}}});
  const TieCalibrationResult result = calibrate_ties(view);
  CHECK(result.accuracy == 1.0);
  CHECK(result.epsilon_star >= 0.8);  // must cover the largest |dm|
}

TEST_CASE("calibrate_ties: equals the exhaustive sweep oracle on 100 random instances") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<std::pair<double, double>>> segments;
    const std::size_t n_seg = 1 + rng.next_below(15);
    for (std::size_t g = 0; g < n_seg; ++g) {
      std::vector<std::pair<double, double>> entries;
      const std::size_t n_sys = 2 + rng.next_below(3);
      for (std::size_t s = 0; s < n_sys; ++s)
        entries.push_back({std::floor(rng.next_double() * 20.0) / 4.0,
                           std::floor(rng.next_double() * 4.0)});
      segments.push_back(entries);
    }
    const SegmentGroupView view = groups_of(segments);
    const TieCalibrationResult fast = calibrate_ties(view);
    const TieCalibrationResult brute = calibrate_oracle(view);
    CHECK(fast.accuracy == brute.accuracy);
    CHECK(fast.epsilon_star == brute.epsilon_star);
    CHECK(fast.accuracy >= pairwise_accuracy_with_ties(view, 0.0));
  }
}

TEST_CASE("calibrate_ties: candidate cap keeps 0 and the extremes") {
  Rng rng(13);
  std::vector<std::vector<std::pair<double, double>>> segments;
  for (int g = 0; g < 60; ++g) {
    std::vector<std::pair<double, double>> entries;
    for (int s = 0; s < 4; ++s) entries.push_back({rng.next_double() * 10.0, 1.0});
    segments.push_back(entries);
  }
  const SegmentGroupView view = groups_of(segments);
  // gold all tied within segments, so declare-everything-tied is optimal and
  // reachable only through the retained max threshold
  const TieCalibrationResult capped = calibrate_ties(view, 16);
  CHECK(capped.accuracy == 1.0);
}

TEST_CASE("calibrate_ties: invariant to permuting segments and systems") {
  std::vector<std::vector<std::pair<double, double>>> segments{
      {{1.0, 2.0}, {1.5, 2.0}, {0.2, 1.0}},
      {{4.0, 1.0}, {2.0, 3.0}},
      {{0.0, 0.0}, {0.3, 0.0}, {2.0, 5.0}},
  };
  const TieCalibrationResult base = calibrate_ties(groups_of(segments));
  std::reverse(segments.begin(), segments.end());
  for (auto& s : segments) std::reverse(s.begin(), s.end());
  const TieCalibrationResult permuted = calibrate_ties(groups_of(segments));
  CHECK(base.accuracy == permuted.accuracy);
  CHECK(base.epsilon_star == permuted.epsilon_star);
}

namespace {

SystemMatrix make_system_matrix(const std::vector<std::vector<double>>& metric,
                                const std::vector<std::vector<double>>& human) {
  SystemMatrix sm;
  const std::size_t n_sys = metric.size();
  const std::size_t n_seg = metric[0].size();
  for (std::size_t s = 0; s < n_sys; ++s) sm.systems.push_back("sys" + std::to_string(s));
  for (std::size_t t = 0; t < n_seg; ++t) sm.segments.push_back("seg" + std::to_string(t));
  sm.metric.resize(static_cast<Eigen::Index>(n_sys), static_cast<Eigen::Index>(n_seg));
  sm.human.resize(static_cast<Eigen::Index>(n_sys), static_cast<Eigen::Index>(n_seg));
  for (std::size_t s = 0; s < n_sys; ++s)
    for (std::size_t t = 0; t < n_seg; ++t) {
      sm.metric(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) = metric[s][t];
      sm.human(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) = human[s][t];
    }
  return sm;
}

}  // namespace

TEST_CASE("spa: metric identical to human gives exactly 1") {
  const std::vector<std::vector<double>> scores{{0.2, 0.9, 0.1, 0.5}, {0.3, 0.1, 0.2, 0.6},
                                                {0.9, 0.2, 0.8, 0.1}};
  const SPAResult result = spa(make_system_matrix(scores, scores), 500, 11);
  CHECK(result.spa == 1.0);
  CHECK(result.n_system_pairs == 3);
}

TEST_CASE("spa: fully inverted toy case gives exactly 0") {
  // human: A >> B on every segment; metric: B >> A on every segment
  const std::vector<std::vector<double>> human{{10, 10, 10, 10, 10}, {0, 0, 0, 0, 0}};
  const std::vector<std::vector<double>> metric{{0, 0, 0, 0, 0}, {10, 10, 10, 10, 10}};
  const SPAResult result = spa(make_system_matrix(metric, human), 1000, 42);
  CHECK(result.spa == 0.0);
}

TEST_CASE("spa: deterministic for a fixed seed") {
  Rng rng(9);
  std::vector<std::vector<double>> metric(3, std::vector<double>(6)), human = metric;
  for (auto& row : metric)
    for (auto& v : row) v = rng.next_double();
  for (auto& row : human)
    for (auto& v : row) v = rng.next_double();
  const SystemMatrix sm = make_system_matrix(metric, human);
  const SPAResult a = spa(sm, 200, 5);
  const SPAResult b = spa(sm, 200, 5);
  CHECK(a.spa == b.spa);
  const SPAResult c = spa(sm, 200, 6);
  CHECK(a.spa != c.spa);  // different seed, different resamples (generically)
}

TEST_CASE("spa: bounded, label-symmetric, and shift-invariant") {
  Rng rng(31);
  std::vector<std::vector<double>> metric(4, std::vector<double>(5)), human = metric;
  for (auto& row : metric)
    for (auto& v : row) v = rng.next_double();
  for (auto& row : human)
    for (auto& v : row) v = rng.next_double();
  const SPAResult base = spa(make_system_matrix(metric, human), 300, 8);
  CHECK(base.spa >= 0.0);
  CHECK(base.spa <= 1.0);

  // shifting every metric score by a constant preserves mean differences
  std::vector<std::vector<double>> shifted = metric;
  for (auto& row : shifted)
    for (auto& v : row) v += 1234.5;
  const SPAResult shift = spa(make_system_matrix(shifted, human), 300, 8);
  CHECK(shift.spa == doctest::Approx(base.spa).epsilon(1e-12));

  // permuting system labels (with their rows) leaves the mean unchanged
  std::vector<std::vector<double>> metric_swapped = metric, human_swapped = human;
  std::swap(metric_swapped[0], metric_swapped[3]);
  std::swap(human_swapped[0], human_swapped[3]);
  const SPAResult swapped = spa(make_system_matrix(metric_swapped, human_swapped), 300, 8);
  CHECK(swapped.spa == doctest::Approx(base.spa).epsilon(1e-12));
}

TEST_CASE("spa: input validation") {
  const std::vector<std::vector<double>> one_system{{1, 2}};
  CHECK_THROWS_AS(spa(make_system_matrix(one_system, one_system), 10, 0), InputError);
  SystemMatrix sm = make_system_matrix({{1, 2}, {3, 4}}, {{1, 2}, {3, 4}});
  CHECK_THROWS_AS(spa(sm, 0, 0), InputError);
}
