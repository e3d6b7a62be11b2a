#include "dmm/metaeval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "dmm/rng.hpp"

namespace dmm {

namespace {

// Counts pairs tied within ties-sorted vector v: sum over groups of t(t-1)/2.
long long tied_pairs_sorted(const std::vector<double>& v) {
  long long total = 0;
  std::size_t i = 0;
  while (i < v.size()) {
    std::size_t j = i + 1;
    while (j < v.size() && v[j] == v[i]) ++j;
    const long long t = static_cast<long long>(j - i);
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

// Merge-sorts v in place, returning the number of inversions (strict).
long long merge_count_inversions(std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<double> buf(n);
  long long inversions = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t left = 0; left < n; left += 2 * width) {
      const std::size_t mid = std::min(left + width, n);
      const std::size_t right = std::min(left + 2 * width, n);
      std::size_t i = left, j = mid, k = left;
      while (i < mid && j < right) {
        if (v[j] < v[i]) {
          inversions += static_cast<long long>(mid - i);
          buf[k++] = v[j++];
        } else {
          buf[k++] = v[i++];
        }
      }
      while (i < mid) buf[k++] = v[i++];
      while (j < right) buf[k++] = v[j++];
      std::copy(buf.begin() + static_cast<std::ptrdiff_t>(left),
                buf.begin() + static_cast<std::ptrdiff_t>(right),
                v.begin() + static_cast<std::ptrdiff_t>(left));
    }
  }
  return inversions;
}

}  // namespace

double kendall_tau_b(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n != b.size()) throw InputError("kendall_tau_b: length mismatch");
  if (n < 2) throw InputError("kendall_tau_b needs at least 2 observations");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (a[i] != a[j]) return a[i] < a[j];
    return b[i] < b[j];
  });

  const long long n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;

  // Tie bookkeeping over the (a, b)-sorted sequence.
  long long ties_a = 0, ties_joint = 0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i + 1;
      while (j < n && a[order[j]] == a[order[i]]) ++j;
      const long long t = static_cast<long long>(j - i);
      ties_a += t * (t - 1) / 2;
      std::size_t u = i;
      while (u < j) {
        std::size_t v = u + 1;
        while (v < j && b[order[v]] == b[order[u]]) ++v;
        const long long tj = static_cast<long long>(v - u);
        ties_joint += tj * (tj - 1) / 2;
        u = v;
      }
      i = j;
    }
  }

  std::vector<double> b_in_a_order(n);
  for (std::size_t i = 0; i < n; ++i) b_in_a_order[i] = b[order[i]];
  const long long discordant = merge_count_inversions(b_in_a_order);
  const long long ties_b = tied_pairs_sorted(b_in_a_order);

  if (ties_a == n0) throw InputError("kendall_tau_b: first vector is fully tied");
  if (ties_b == n0) throw InputError("kendall_tau_b: second vector is fully tied");

  const long long con_minus_dis = n0 - ties_a - ties_b + ties_joint - 2 * discordant;
  return static_cast<double>(con_minus_dis) /
         std::sqrt(static_cast<double>(n0 - ties_a) * static_cast<double>(n0 - ties_b));
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n != b.size()) throw InputError("pearson: length mismatch");
  if (n < 2) throw InputError("pearson needs at least 2 observations");

  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);

  double ss_a = 0.0, ss_b = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    ss_a += da * da;
    ss_b += db * db;
    cross += da * db;
  }
  if (ss_a == 0.0 || ss_b == 0.0) throw InputError("pearson: constant input vector");
  return cross / std::sqrt(ss_a * ss_b);
}

SegmentGroupView build_groups(const std::vector<ScoredInstance>& rows) {
  std::map<std::string, std::vector<GroupEntry>> by_segment;
  for (const ScoredInstance& row : rows)
    by_segment[row.segment_id].push_back({row.system_id, row.metric, row.human});

  SegmentGroupView view;
  for (auto& [segment, entries] : by_segment) {
    if (entries.size() < 2) {
      ++view.n_skipped_groups;
      continue;
    }
    std::sort(entries.begin(), entries.end(),
              [](const GroupEntry& x, const GroupEntry& y) { return x.system_id < y.system_id; });
    view.groups.push_back(std::move(entries));
  }
  return view;
}

namespace {

struct PairRecord {
  double abs_diff = 0.0;  // |m_i - m_j|
  int metric_sign = 0;    // sign(m_i - m_j)
  int gold_rel = 0;       // -1 / 0 / +1
};

std::vector<PairRecord> collect_pairs(const SegmentGroupView& groups) {
  std::vector<PairRecord> pairs;
  for (const auto& group : groups.groups) {
    for (std::size_t i = 0; i < group.size(); ++i) {
      for (std::size_t j = i + 1; j < group.size(); ++j) {
        PairRecord p;
        const double dm = group[i].metric - group[j].metric;
        p.abs_diff = std::abs(dm);
        p.metric_sign = dm > 0.0 ? 1 : (dm < 0.0 ? -1 : 0);
        const double dh = group[i].human - group[j].human;
        p.gold_rel = dh > 0.0 ? 1 : (dh < 0.0 ? -1 : 0);
        pairs.push_back(p);
      }
    }
  }
  return pairs;
}

double accuracy_at(const std::vector<PairRecord>& pairs, double epsilon) {
  std::size_t correct = 0;
  for (const PairRecord& p : pairs) {
    const int predicted = p.abs_diff <= epsilon ? 0 : p.metric_sign;
    if (predicted == p.gold_rel) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

}  // namespace

double pairwise_accuracy_with_ties(const SegmentGroupView& groups, double epsilon) {
  if (epsilon < 0.0) throw InputError("epsilon must be >= 0");
  const std::vector<PairRecord> pairs = collect_pairs(groups);
  if (pairs.empty()) throw InputError("no usable within-segment system pairs");
  return accuracy_at(pairs, epsilon);
}

TieCalibrationResult calibrate_ties(const SegmentGroupView& groups, std::size_t max_candidates) {
  const std::vector<PairRecord> pairs = collect_pairs(groups);
  if (pairs.empty()) throw InputError("no usable within-segment system pairs");

  std::vector<double> diffs;
  diffs.reserve(pairs.size());
  for (const PairRecord& p : pairs) diffs.push_back(p.abs_diff);
  std::sort(diffs.begin(), diffs.end());
  diffs.erase(std::unique(diffs.begin(), diffs.end()), diffs.end());

  // 0, midpoints between consecutive distinct |dm|, and the max itself
  // (which declares every pair tied).
  std::vector<double> candidates;
  candidates.push_back(0.0);
  for (std::size_t i = 0; i + 1 < diffs.size(); ++i)
    candidates.push_back(0.5 * (diffs[i] + diffs[i + 1]));
  if (!diffs.empty() && diffs.back() > 0.0) candidates.push_back(diffs.back());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  if (max_candidates >= 2 && candidates.size() > max_candidates) {
    std::vector<double> kept;
    kept.reserve(max_candidates);
    const std::size_t last = candidates.size() - 1;
    for (std::size_t i = 0; i < max_candidates; ++i) {
      const std::size_t idx = static_cast<std::size_t>(
          std::llround(static_cast<double>(i) * static_cast<double>(last) /
                       static_cast<double>(max_candidates - 1)));
      kept.push_back(candidates[idx]);  // endpoints survive: i=0 -> 0, i=max-1 -> last
    }
    kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
    candidates = std::move(kept);
  }

  TieCalibrationResult result;
  result.n_pairs = static_cast<std::int64_t>(pairs.size());
  result.epsilon_star = candidates.front();
  result.accuracy = accuracy_at(pairs, candidates.front());
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double acc = accuracy_at(pairs, candidates[i]);
    if (acc > result.accuracy) {  // strict: accuracy ties keep the smaller epsilon
      result.accuracy = acc;
      result.epsilon_star = candidates[i];
    }
  }
  return result;
}

SPAResult spa(const SystemMatrix& data, int n_resamples, std::uint64_t seed) {
  const Eigen::Index n_systems = data.metric.rows();
  const Eigen::Index n_segments = data.metric.cols();
  if (n_systems < 2) throw InputError("SPA needs at least 2 systems");
  if (n_segments < 1) throw InputError("SPA needs at least 1 segment");
  if (data.human.rows() != n_systems || data.human.cols() != n_segments)
    throw InputError("SPA: metric/human matrix shape mismatch");
  if (n_resamples < 1) throw InputError("SPA needs n_resamples >= 1");

  // One resample index set per bootstrap draw, shared by the human and
  // metric sides and by every system pair.
  Rng rng(seed);
  Eigen::MatrixXd mean_metric(n_systems, n_resamples);
  Eigen::MatrixXd mean_human(n_systems, n_resamples);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n_segments));
  for (int b = 0; b < n_resamples; ++b) {
    for (Eigen::Index t = 0; t < n_segments; ++t)
      idx[static_cast<std::size_t>(t)] =
          static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(n_segments)));
    for (Eigen::Index s = 0; s < n_systems; ++s) {
      double sum_m = 0.0, sum_h = 0.0;
      for (Eigen::Index t = 0; t < n_segments; ++t) {
        sum_m += data.metric(s, idx[static_cast<std::size_t>(t)]);
        sum_h += data.human(s, idx[static_cast<std::size_t>(t)]);
      }
      mean_metric(s, b) = sum_m / static_cast<double>(n_segments);
      mean_human(s, b) = sum_h / static_cast<double>(n_segments);
    }
  }

  double total = 0.0;
  int n_pairs = 0;
  for (Eigen::Index i = 0; i < n_systems; ++i) {
    for (Eigen::Index j = i + 1; j < n_systems; ++j) {
      double wins_m = 0.0, wins_h = 0.0;
      for (int b = 0; b < n_resamples; ++b) {
        if (mean_metric(i, b) > mean_metric(j, b)) wins_m += 1.0;
        else if (mean_metric(i, b) == mean_metric(j, b)) wins_m += 0.5;
        if (mean_human(i, b) > mean_human(j, b)) wins_h += 1.0;
        else if (mean_human(i, b) == mean_human(j, b)) wins_h += 0.5;
      }
      const double p_m = wins_m / static_cast<double>(n_resamples);
      const double p_h = wins_h / static_cast<double>(n_resamples);
      total += 1.0 - std::abs(p_h - p_m);
      ++n_pairs;
    }
  }

  SPAResult result;
  result.spa = total / static_cast<double>(n_pairs);
  result.n_system_pairs = n_pairs;
  result.n_resamples = n_resamples;
  result.seed = seed;
  return result;
}

}  // namespace dmm
