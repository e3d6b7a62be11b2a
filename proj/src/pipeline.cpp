#include "dmm/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "dmm/json_util.hpp"
#include "dmm/parallel.hpp"
#include "dmm/rng.hpp"

namespace dmm {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string pooling_name(Pooling p) { return p == Pooling::pooled ? "pooled" : "separate"; }

std::string conditioning_name(Conditioning c) {
  switch (c) {
    case Conditioning::none: return "none";
    case Conditioning::hard: return "hard";
    default: return "soft";
  }
}

std::string model_class_name(ModelClass m) {
  switch (m) {
    case ModelClass::ols: return "ols";
    case ModelClass::mlp: return "mlp";
    case ModelClass::gp: return "gp";
    default: return "cl";
  }
}

Pooling parse_pooling(const std::string& s) {
  if (s == "pooled") return Pooling::pooled;
  if (s == "separate") return Pooling::separate;
  throw InputError("unknown pooling '" + s + "' (expected pooled or separate)");
}

Conditioning parse_conditioning(const std::string& s) {
  if (s == "none") return Conditioning::none;
  if (s == "hard") return Conditioning::hard;
  if (s == "soft") return Conditioning::soft;
  throw InputError("unknown conditioning '" + s + "' (expected none, hard, or soft)");
}

ModelClass parse_model_class(const std::string& s) {
  if (s == "ols") return ModelClass::ols;
  if (s == "mlp") return ModelClass::mlp;
  if (s == "gp") return ModelClass::gp;
  if (s == "cl") return ModelClass::contextual_linear;
  throw InputError("unknown model '" + s + "' (expected ols, mlp, gp, or cl)");
}

void EnsembleConfig::validate() const {
  if (conditioning == Conditioning::soft && model_class != ModelClass::contextual_linear)
    throw InputError("soft conditioning requires model cl");
  if (model_class == ModelClass::contextual_linear && conditioning != Conditioning::soft)
    throw InputError("model cl requires soft conditioning");
  if (conditioning != Conditioning::none && K < 1)
    throw InputError("conditioning requires K >= 1");
  if (conditioning == Conditioning::soft && !(T > 0.0))
    throw InputError("soft conditioning requires temperature T > 0");
  if (ridge_alpha < 0.0) throw InputError("ridge alpha must be >= 0");
}

namespace {

std::string target_norm_name(TargetNorm t) {
  switch (t) {
    case TargetNorm::off: return "off";
    case TargetNorm::on: return "on";
    default: return "auto";
  }
}

TargetNorm parse_target_norm(const std::string& s) {
  if (s == "off") return TargetNorm::off;
  if (s == "on") return TargetNorm::on;
  if (s == "auto") return TargetNorm::auto_on_multi_year;
  throw InputError("unknown target normalization mode '" + s + "' (expected off/on/auto)");
}

}  // namespace

ordered_json config_to_json(const EnsembleConfig& c) {
  ordered_json j;
  j["pooling"] = pooling_name(c.pooling);
  j["conditioning"] = conditioning_name(c.conditioning);
  j["model"] = model_class_name(c.model_class);
  j["k"] = c.K;
  j["t"] = c.T;
  j["seed"] = c.seed;
  j["target_norm"] = target_norm_name(c.target_norm);
  j["allow_fallback"] = c.allow_fallback;
  j["pooled_companion"] = c.pooled_companion;
  j["ridge_alpha"] = c.ridge_alpha;
  j["mlp"] = {{"learning_rate", c.mlp.learning_rate},
              {"batch_size", c.mlp.batch_size},
              {"epochs", c.mlp.epochs},
              {"dropout", c.mlp.dropout}};
  j["gp"] = {{"n_init", c.gp.n_init},
             {"n_iter", c.gp.n_iter},
             {"n_candidates", c.gp.n_candidates},
             {"length_scale", c.gp.length_scale},
             {"noise", c.gp.noise}};
  return j;
}

EnsembleConfig config_from_json(const json& j) {
  EnsembleConfig c;
  c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  c.conditioning = parse_conditioning(j.at("conditioning").get<std::string>());
  c.model_class = parse_model_class(j.at("model").get<std::string>());
  c.K = j.at("k").get<int>();
  c.T = j.at("t").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.target_norm = parse_target_norm(j.at("target_norm").get<std::string>());
  c.allow_fallback = j.at("allow_fallback").get<bool>();
  c.pooled_companion = j.at("pooled_companion").get<bool>();
  c.ridge_alpha = j.at("ridge_alpha").get<double>();
  const auto& mlp = j.at("mlp");
  c.mlp.learning_rate = mlp.at("learning_rate").get<double>();
  c.mlp.batch_size = mlp.at("batch_size").get<int>();
  c.mlp.epochs = mlp.at("epochs").get<int>();
  c.mlp.dropout = mlp.at("dropout").get<double>();
  const auto& gp = j.at("gp");
  c.gp.n_init = gp.at("n_init").get<int>();
  c.gp.n_iter = gp.at("n_iter").get<int>();
  c.gp.n_candidates = gp.at("n_candidates").get<int>();
  c.gp.length_scale = gp.at("length_scale").get<double>();
  c.gp.noise = gp.at("noise").get<double>();
  return c;
}

const Combiner* TrainedEnsemble::find(const std::string& routing,
                                      const std::string& cluster) const {
  auto it = combiners.find({routing, cluster});
  return it == combiners.end() ? nullptr : &it->second;
}

namespace {

std::vector<std::size_t> training_rows(const Dataset& dataset) {
  bool any_assigned = false;
  for (const Instance& inst : dataset.instances)
    if (inst.split != Split::unassigned) {
      any_assigned = true;
      break;
    }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < dataset.instances.size(); ++i)
    if (!any_assigned || dataset.instances[i].split == Split::train) rows.push_back(i);
  return rows;
}

bool target_norm_active(const EnsembleConfig& config, const Dataset& dataset,
                        const std::vector<std::size_t>& train_rows) {
  if (config.target_norm == TargetNorm::off) return false;
  if (config.target_norm == TargetNorm::on) return true;
  std::set<int> years;
  for (std::size_t i : train_rows) years.insert(dataset.instances[i].year);
  return years.size() > 1;
}

struct FitTask {
  std::string routing;
  std::string cluster;
  std::vector<std::size_t> rows;  // local indices into the training split
};

Combiner fit_plain_combiner(const EnsembleConfig& config, const Eigen::MatrixXd& X,
                            const Eigen::VectorXd& y, std::uint64_t seed) {
  switch (config.model_class) {
    case ModelClass::ols: return fit_ols(X, y);
    case ModelClass::mlp: return fit_mlp(X, y, config.mlp, seed);
    case ModelClass::gp: return fit_gp_weights(X, y, seed, config.gp);
    default: throw InputError("model cl requires soft conditioning");
  }
}

}  // namespace

TrainedEnsemble train(const Dataset& dataset, const EnsembleConfig& config, int jobs) {
  config.validate();
  if (dataset.instances.empty()) throw InputError("train: dataset has no instances");
  if (static_cast<std::size_t>(dataset.metrics.rows()) != dataset.instances.size())
    throw InputError("train: dataset metric matrix is not aligned to the instances");
  const Eigen::Index d = dataset.metrics.cols();

  const std::vector<std::size_t> rows = training_rows(dataset);
  if (rows.empty()) throw InputError("train: no training rows in dataset");

  TrainedEnsemble ens;
  ens.config = config;
  ens.metric_names = dataset.metrics.metric_names;

  MetricMatrix train_matrix;
  train_matrix.metric_names = ens.metric_names;
  train_matrix.scores.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    train_matrix.scores.row(static_cast<Eigen::Index>(i)) =
        dataset.metrics.scores.row(static_cast<Eigen::Index>(rows[i]));
  ens.standardizer = fit_standardizer(train_matrix);
  const Eigen::MatrixXd X = standardize(ens.standardizer, train_matrix.scores);

  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  if (target_norm_active(config, dataset, rows)) {
    std::vector<Instance> train_instances;
    train_instances.reserve(rows.size());
    for (std::size_t i : rows) train_instances.push_back(dataset.instances[i]);
    ens.cell_normalizer = fit_cell_normalizer(train_instances);
    const std::vector<Instance> normalized =
        apply_cell_normalizer(*ens.cell_normalizer, std::move(train_instances));
    for (std::size_t i = 0; i < rows.size(); ++i)
      y[static_cast<Eigen::Index>(i)] = normalized[i].human_score;
  } else {
    for (std::size_t i = 0; i < rows.size(); ++i)
      y[static_cast<Eigen::Index>(i)] = dataset.instances[rows[i]].human_score;
  }

  // Routing keys over local training-row indices.
  std::map<std::string, std::vector<std::size_t>> key_rows;
  if (config.pooling == Pooling::pooled) {
    auto& all = key_rows[kAllKey];
    for (std::size_t i = 0; i < rows.size(); ++i) all.push_back(i);
  } else {
    for (std::size_t i = 0; i < rows.size(); ++i)
      key_rows[dataset.instances[rows[i]].lang_pair].push_back(i);
    if (config.pooled_companion) {
      auto& all = key_rows[kAllKey];
      for (std::size_t i = 0; i < rows.size(); ++i) all.push_back(i);
    }
  }

  // Cluster model on the training split's source embeddings.
  std::map<std::string, int> cluster_of_segment;
  std::map<std::string, Eigen::VectorXd> resp_of_segment;
  if (config.conditioning != Conditioning::none) {
    if (dataset.embeddings.empty())
      throw InputError("conditioning=" + conditioning_name(config.conditioning) +
                       " requires source embeddings");
    EmbeddingTable train_embeddings;
    train_embeddings.dim = dataset.embeddings.dim;
    train_embeddings.normalized = dataset.embeddings.normalized;
    for (std::size_t i : rows) {
      const std::string& id = dataset.instances[i].segment_id;
      if (!train_embeddings.vectors.count(id))
        train_embeddings.vectors.emplace(id, dataset.embeddings.at(id));
    }
    ens.clusters = fit_kmeans(train_embeddings, config.K, derive_seed(config.seed, "kmeans"));
    for (const auto& [id, vec] : train_embeddings.vectors) {
      const Eigen::VectorXd D = squared_distances(*ens.clusters, vec);
      if (config.conditioning == Conditioning::hard)
        cluster_of_segment[id] = hard_assign(D);
      else
        resp_of_segment[id] = responsibilities(D, config.T).r;
    }
  }

  std::vector<FitTask> tasks;
  const std::size_t threshold = std::max<std::size_t>(static_cast<std::size_t>(d) + 2, 20);

  if (config.conditioning == Conditioning::hard) {
    for (const auto& [key, krows] : key_rows) {
      std::vector<std::vector<std::size_t>> cells(static_cast<std::size_t>(config.K));
      for (std::size_t ri : krows)
        cells[static_cast<std::size_t>(
                  cluster_of_segment.at(dataset.instances[rows[ri]].segment_id))]
            .push_back(ri);
      bool need_global = false;
      for (int k = 0; k < config.K; ++k) {
        auto& cell = cells[static_cast<std::size_t>(k)];
        if (cell.size() >= threshold) {
          tasks.push_back({key, std::to_string(k), std::move(cell)});
        } else {
          if (!config.allow_fallback)
            throw InputError("training cell (" + key + ", cluster " + std::to_string(k) +
                             ") has " + std::to_string(cell.size()) +
                             " instances (minimum " + std::to_string(threshold) +
                             ") and fallback is disabled");
          ens.fallbacks.push_back({key, std::to_string(k),
                                   "cell has " + std::to_string(cell.size()) +
                                       " training instances, below threshold " +
                                       std::to_string(threshold),
                                   cell.size()});
          need_global = true;
        }
      }
      if (need_global) tasks.push_back({key, kGlobalCluster, krows});
    }
  } else {
    for (const auto& [key, krows] : key_rows) tasks.push_back({key, kGlobalCluster, krows});
  }

  std::sort(tasks.begin(), tasks.end(), [](const FitTask& a, const FitTask& b) {
    return std::tie(a.routing, a.cluster) < std::tie(b.routing, b.cluster);
  });

  std::vector<Combiner> fitted(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t t) {
    const FitTask& task = tasks[t];
    const Eigen::Index m = static_cast<Eigen::Index>(task.rows.size());
    Eigen::MatrixXd Xc(m, d);
    Eigen::VectorXd yc(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      Xc.row(i) = X.row(static_cast<Eigen::Index>(task.rows[static_cast<std::size_t>(i)]));
      yc[i] = y[static_cast<Eigen::Index>(task.rows[static_cast<std::size_t>(i)])];
    }
    const std::uint64_t task_seed =
        derive_seed(config.seed, "fit:" + task.routing + ":" + task.cluster);
    try {
      if (config.conditioning == Conditioning::soft) {
        Eigen::MatrixXd R(m, config.K);
        for (Eigen::Index i = 0; i < m; ++i)
          R.row(i) = resp_of_segment
                         .at(dataset.instances[rows[task.rows[static_cast<std::size_t>(i)]]]
                                 .segment_id)
                         .transpose();
        fitted[t] = fit_contextual_linear(Xc, R, yc, config.ridge_alpha, config.T);
      } else {
        fitted[t] = fit_plain_combiner(config, Xc, yc, task_seed);
      }
    } catch (const InputError& e) {
      throw InputError("fitting combiner (" + task.routing + ", " + task.cluster +
                       "): " + e.what());
    }
  });
  for (std::size_t t = 0; t < tasks.size(); ++t)
    ens.combiners.emplace(std::make_pair(tasks[t].routing, tasks[t].cluster),
                          std::move(fitted[t]));
  return ens;
}

ScoreResult score(const TrainedEnsemble& ens, const Dataset& dataset,
                  bool allow_pooled_fallback) {
  if (dataset.metrics.metric_names != ens.metric_names)
    throw InputError("metric manifest mismatch between dataset and ensemble");
  if (static_cast<std::size_t>(dataset.metrics.rows()) != dataset.instances.size())
    throw InputError("score: dataset metric matrix is not aligned to the instances");
  const Eigen::MatrixXd X = standardize(ens.standardizer, dataset.metrics.scores);

  const bool conditioned = ens.config.conditioning != Conditioning::none;
  if (conditioned && !ens.clusters)
    throw InputError("ensemble is conditioned but carries no cluster model");
  if (conditioned && dataset.embeddings.empty())
    throw InputError("scoring a conditioned ensemble requires source embeddings");

  std::set<std::string> routing_keys;
  for (const auto& [key, combiner] : ens.combiners) routing_keys.insert(key.first);

  // Routing depends only on the source segment, so per-segment results are
  // cached and shared by all hypotheses of that segment.
  std::map<std::string, int> hard_cache;
  std::map<std::string, Responsibilities> soft_cache;

  ScoreResult out;
  out.predictions.resize(dataset.instances.size());
  out.combiner_ids.resize(dataset.instances.size());

  for (std::size_t i = 0; i < dataset.instances.size(); ++i) {
    const Instance& inst = dataset.instances[i];
    std::string key = ens.config.pooling == Pooling::pooled ? kAllKey : inst.lang_pair;
    if (!routing_keys.count(key)) {
      if (ens.config.pooling == Pooling::separate && allow_pooled_fallback &&
          routing_keys.count(kAllKey)) {
        key = kAllKey;
      } else if (ens.config.pooling == Pooling::separate && allow_pooled_fallback) {
        throw InputError("unseen language pair '" + inst.lang_pair +
                         "' and the ensemble has no pooled companion model");
      } else {
        throw InputError("unseen language pair '" + inst.lang_pair +
                         "' under separate pooling; pass --fallback-pooled to route to a pooled "
                         "companion model");
      }
    }

    const Combiner* combiner = nullptr;
    std::string cluster_used = kGlobalCluster;
    if (!conditioned) {
      combiner = ens.find(key, kGlobalCluster);
    } else if (ens.config.conditioning == Conditioning::hard) {
      auto it = hard_cache.find(inst.segment_id);
      if (it == hard_cache.end()) {
        const Eigen::VectorXd D =
            squared_distances(*ens.clusters, dataset.embeddings.at(inst.segment_id));
        it = hard_cache.emplace(inst.segment_id, hard_assign(D)).first;
      }
      cluster_used = std::to_string(it->second);
      combiner = ens.find(key, cluster_used);
      if (!combiner) {  // recorded fallback cell: use the key-global model
        combiner = ens.find(key, kGlobalCluster);
        cluster_used = kGlobalCluster;
      }
    } else {
      combiner = ens.find(key, kGlobalCluster);
    }
    if (!combiner)
      throw InputError("no combiner available for routing key (" + key + ", " + cluster_used +
                       ")");

    const Eigen::VectorXd x = X.row(static_cast<Eigen::Index>(i)).transpose();
    double prediction = 0.0;
    if (const auto* lin = std::get_if<LinearCombiner>(combiner)) {
      prediction = predict_linear(*lin, x);
    } else if (const auto* mlp = std::get_if<MLPCombiner>(combiner)) {
      prediction = predict_mlp(*mlp, x);
    } else if (const auto* gp = std::get_if<WeightCombiner>(combiner)) {
      prediction = predict_weighted(*gp, x);
    } else {
      const auto& cl = std::get<ContextualLinearCombiner>(*combiner);
      auto it = soft_cache.find(inst.segment_id);
      if (it == soft_cache.end()) {
        const Eigen::VectorXd D =
            squared_distances(*ens.clusters, dataset.embeddings.at(inst.segment_id));
        it = soft_cache.emplace(inst.segment_id, responsibilities(D, cl.temperature)).first;
      }
      prediction = predict_contextual(cl, x, it->second);
    }
    out.predictions[i] = prediction;
    out.combiner_ids[i] = key + "/" + cluster_used;
  }
  return out;
}

double validation_pearson(const TrainedEnsemble& ensemble, const Dataset& dataset) {
  std::vector<std::size_t> val_rows;
  for (std::size_t i = 0; i < dataset.instances.size(); ++i)
    if (dataset.instances[i].split == Split::val) val_rows.push_back(i);
  if (val_rows.empty()) throw InputError("no validation rows in dataset");

  const ScoreResult scored = score(ensemble, dataset);
  std::vector<double> preds;
  preds.reserve(val_rows.size());
  for (std::size_t i : val_rows) preds.push_back(scored.predictions[i]);

  std::vector<double> targets;
  targets.reserve(val_rows.size());
  if (ensemble.cell_normalizer) {
    std::vector<Instance> val_instances;
    val_instances.reserve(val_rows.size());
    for (std::size_t i : val_rows) val_instances.push_back(dataset.instances[i]);
    const std::vector<Instance> normalized =
        apply_cell_normalizer(*ensemble.cell_normalizer, std::move(val_instances));
    for (const Instance& inst : normalized) targets.push_back(inst.human_score);
  } else {
    for (std::size_t i : val_rows) targets.push_back(dataset.instances[i].human_score);
  }
  return pearson(preds, targets);
}

std::pair<double, TrainedEnsemble> select_temperature(const Dataset& dataset,
                                                      EnsembleConfig config,
                                                      const std::vector<double>& t_grid,
                                                      int jobs) {
  if (config.conditioning != Conditioning::soft)
    throw InputError("select_temperature requires soft conditioning");
  if (t_grid.empty()) throw InputError("temperature grid is empty");

  std::vector<double> grid = t_grid;
  std::sort(grid.begin(), grid.end());

  bool have_best = false;
  double best_pearson = 0.0;
  double best_t = 0.0;
  TrainedEnsemble best_ensemble;
  for (double t : grid) {
    config.T = t;
    TrainedEnsemble candidate = train(dataset, config, jobs);
    double p;
    try {
      p = validation_pearson(candidate, dataset);
    } catch (const InputError&) {
      continue;  // constant predictions: Pearson undefined for this T
    }
    if (!have_best || p > best_pearson + 1e-12) {  // ties keep the smaller T
      have_best = true;
      best_pearson = p;
      best_t = t;
      best_ensemble = std::move(candidate);
    }
  }
  if (!have_best)
    throw InputError("validation Pearson is undefined for every temperature in the grid");
  return {best_t, std::move(best_ensemble)};
}

std::pair<int, TrainedEnsemble> select_k(const Dataset& dataset, EnsembleConfig config,
                                         const std::vector<int>& k_grid,
                                         const std::vector<double>& t_grid, int jobs) {
  if (config.conditioning == Conditioning::none)
    throw InputError("select_k requires conditioning");
  if (k_grid.empty()) throw InputError("K grid is empty");

  std::vector<int> grid = k_grid;
  std::sort(grid.begin(), grid.end());

  bool have_best = false;
  double best_pearson = 0.0;
  int best_k = 0;
  TrainedEnsemble best_ensemble;
  for (int k : grid) {
    config.K = k;
    TrainedEnsemble candidate;
    if (config.conditioning == Conditioning::soft && !t_grid.empty()) {
      candidate = select_temperature(dataset, config, t_grid, jobs).second;
    } else {
      candidate = train(dataset, config, jobs);
    }
    double p;
    try {
      p = validation_pearson(candidate, dataset);
    } catch (const InputError&) {
      continue;
    }
    if (!have_best || p > best_pearson) {  // strict: ties keep the smaller K
      have_best = true;
      best_pearson = p;
      best_k = k;
      best_ensemble = std::move(candidate);
    }
  }
  if (!have_best) throw InputError("validation Pearson is undefined for every K in the grid");
  return {best_k, std::move(best_ensemble)};
}

EvalReport evaluate_scored(const std::vector<Instance>& instances,
                           const std::vector<double>& predictions, int n_resamples,
                           std::uint64_t seed) {
  if (instances.size() != predictions.size())
    throw InputError("evaluate: predictions are not aligned to the instances");
  if (instances.empty()) throw InputError("evaluate: no instances");

  std::map<std::string, std::vector<std::size_t>> rows_by_pair;
  for (std::size_t i = 0; i < instances.size(); ++i)
    rows_by_pair[instances[i].lang_pair].push_back(i);

  EvalReport report;
  report.n_resamples = n_resamples;
  report.seed = seed;

  for (const auto& [lang_pair, rows] : rows_by_pair) {
    std::set<std::string> systems;
    for (std::size_t i : rows) systems.insert(instances[i].system_id);
    if (systems.size() < 2)
      throw InputError("lang pair " + lang_pair + " has fewer than 2 systems");

    std::vector<ScoredInstance> scored;
    scored.reserve(rows.size());
    for (std::size_t i : rows)
      scored.push_back({instances[i].segment_id, instances[i].system_id, predictions[i],
                        instances[i].human_score});

    EvalRow row;
    row.lang_pair = lang_pair;
    try {
      const SegmentGroupView groups = build_groups(scored);
      const TieCalibrationResult calibration = calibrate_ties(groups);
      row.acc_star_eq = calibration.accuracy;
      row.epsilon_star = calibration.epsilon_star;
      row.n_pairs = calibration.n_pairs;

      // System-level matrices; every system must cover the same segment set.
      std::set<std::string> segment_set;
      for (const ScoredInstance& s : scored) segment_set.insert(s.segment_id);
      std::vector<std::string> segments(segment_set.begin(), segment_set.end());
      SystemMatrix sm;
      sm.systems.assign(systems.begin(), systems.end());
      sm.segments = segments;
      const Eigen::Index S = static_cast<Eigen::Index>(sm.systems.size());
      const Eigen::Index n_seg = static_cast<Eigen::Index>(segments.size());
      sm.metric.resize(S, n_seg);
      sm.human.resize(S, n_seg);
      std::map<std::string, Eigen::Index> system_index, segment_index;
      for (Eigen::Index s = 0; s < S; ++s) system_index[sm.systems[static_cast<std::size_t>(s)]] = s;
      for (Eigen::Index t = 0; t < n_seg; ++t)
        segment_index[segments[static_cast<std::size_t>(t)]] = t;
      Eigen::MatrixXi filled = Eigen::MatrixXi::Zero(S, n_seg);
      for (const ScoredInstance& s : scored) {
        const Eigen::Index si = system_index.at(s.system_id);
        const Eigen::Index ti = segment_index.at(s.segment_id);
        sm.metric(si, ti) = s.metric;
        sm.human(si, ti) = s.human;
        filled(si, ti) = 1;
      }
      if (filled.sum() != S * n_seg)
        throw InputError("segment-set mismatch across systems");

      const SPAResult spa_result =
          spa(sm, n_resamples, derive_seed(seed, "spa:" + lang_pair));
      row.spa = spa_result.spa;
      row.n_system_pairs = spa_result.n_system_pairs;
    } catch (const InputError& e) {
      throw InputError("lang pair " + lang_pair + ": " + e.what());
    }
    report.rows.push_back(std::move(row));
  }

  EvalRow avg;
  avg.lang_pair = "Avg";
  for (const EvalRow& row : report.rows) {
    avg.acc_star_eq += row.acc_star_eq;
    avg.epsilon_star += row.epsilon_star;
    avg.spa += row.spa;
    avg.n_pairs += row.n_pairs;
    avg.n_system_pairs += row.n_system_pairs;
  }
  const double n = static_cast<double>(report.rows.size());
  avg.acc_star_eq /= n;
  avg.epsilon_star /= n;
  avg.spa /= n;
  report.avg = avg;
  return report;
}

EvalReport evaluate(const TrainedEnsemble& ensemble, const Dataset& dataset, int n_resamples,
                    std::uint64_t seed, bool allow_pooled_fallback) {
  const ScoreResult scored = score(ensemble, dataset, allow_pooled_fallback);
  return evaluate_scored(dataset.instances, scored.predictions, n_resamples, seed);
}

ordered_json report_to_json(const EvalReport& report) {
  auto row_json = [](const EvalRow& row) {
    ordered_json j;
    j["acc_star_eq"] = row.acc_star_eq;
    j["epsilon_star"] = row.epsilon_star;
    j["spa"] = row.spa;
    j["n_pairs"] = row.n_pairs;
    j["n_system_pairs"] = row.n_system_pairs;
    return j;
  };
  ordered_json pairs;
  for (const EvalRow& row : report.rows) pairs[row.lang_pair] = row_json(row);
  ordered_json j;
  j["pairs"] = std::move(pairs);
  j["avg"] = row_json(report.avg);
  j["n_resamples"] = report.n_resamples;
  j["seed"] = report.seed;
  return j;
}

std::string render_report_text(const EvalReport& report) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-16s %9s %12s %9s %10s %10s\n", "lang_pair", "acc*_eq",
                "eps*", "SPA", "n_pairs", "sys_pairs");
  out += buf;
  auto add_row = [&](const EvalRow& row) {
    std::snprintf(buf, sizeof(buf), "%-16s %9.4f %12.6g %9.4f %10lld %10d\n",
                  row.lang_pair.c_str(), row.acc_star_eq, row.epsilon_star, row.spa,
                  static_cast<long long>(row.n_pairs), row.n_system_pairs);
    out += buf;
  };
  for (const EvalRow& row : report.rows) add_row(row);
  add_row(report.avg);
  return out;
}

long whitespace_token_count(const std::string& text) {
  long count = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++count;
    }
  }
  return count;
}

namespace {

std::vector<RankedMetric> rank_within(const std::vector<std::string>& names,
                                      const Eigen::VectorXd& scores, double margin) {
  std::vector<std::size_t> order(names.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[static_cast<Eigen::Index>(a)] >
                            scores[static_cast<Eigen::Index>(b)];
                   });
  std::vector<RankedMetric> top;
  if (order.empty()) return top;
  const double best = scores[static_cast<Eigen::Index>(order[0])];
  for (std::size_t i : order) {
    const double s = scores[static_cast<Eigen::Index>(i)];
    if (best - s <= margin) top.push_back({names[i], s});
  }
  return top;
}

}  // namespace

std::vector<ClusterProfile> profile_clusters(const TrainedEnsemble& ensemble,
                                             const Dataset& dataset) {
  if (ensemble.config.conditioning != Conditioning::hard)
    throw InputError(
        "cluster profiling requires a hard-conditioned ensemble (conditioning=hard); " +
        conditioning_name(ensemble.config.conditioning) + " conditioning has no cluster cells");
  if (!ensemble.clusters) throw InputError("ensemble carries no cluster model");
  bool has_pooled = false;
  for (const auto& [key, combiner] : ensemble.combiners)
    if (key.first == kAllKey) has_pooled = true;
  if (!has_pooled)
    throw InputError("cluster profiling needs pooled combiners; train with --pooling pooled or "
                     "--pooled-companion");
  if (dataset.embeddings.empty())
    throw InputError("cluster profiling requires source embeddings");

  const int K = ensemble.clusters->K;
  // Deduplicated segments with their source text and cluster assignment.
  std::map<std::string, std::string> text_of_segment;
  for (const Instance& inst : dataset.instances)
    text_of_segment.emplace(inst.segment_id, inst.source_text);
  std::map<std::string, int> cluster_of_segment;
  for (const auto& [id, text] : text_of_segment)
    cluster_of_segment[id] =
        hard_assign(squared_distances(*ensemble.clusters, dataset.embeddings.at(id)));

  // Standardized features of the cluster's training instances, for MLP
  // gradient attributions.
  bool any_train = false;
  for (const Instance& inst : dataset.instances)
    if (inst.split == Split::train) {
      any_train = true;
      break;
    }
  const Eigen::MatrixXd X = standardize(ensemble.standardizer, dataset.metrics.scores);

  std::vector<ClusterProfile> profiles;
  for (int k = 0; k < K; ++k) {
    ClusterProfile profile;
    profile.cluster = k;

    std::vector<long> token_counts;
    for (const auto& [id, cluster] : cluster_of_segment) {
      if (cluster != k) continue;
      ++profile.n_segments;
      token_counts.push_back(whitespace_token_count(text_of_segment.at(id)));
    }
    if (!token_counts.empty()) {
      std::sort(token_counts.begin(), token_counts.end());
      profile.median_token_count = token_counts[(token_counts.size() - 1) / 2];
    }

    const Combiner* combiner = ensemble.find(kAllKey, std::to_string(k));
    if (!combiner) combiner = ensemble.find(kAllKey, kGlobalCluster);
    if (combiner) {
      if (const auto* gp = std::get_if<WeightCombiner>(combiner)) {
        profile.top_gp = rank_within(ensemble.metric_names, gp->w, 0.01);
      } else if (const auto* lin = std::get_if<LinearCombiner>(combiner)) {
        profile.top_gp = rank_within(ensemble.metric_names, lin->w.cwiseAbs(), 0.01);
      } else if (const auto* mlp = std::get_if<MLPCombiner>(combiner)) {
        Eigen::VectorXd attribution =
            Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ensemble.metric_names.size()));
        long n_rows = 0;
        for (std::size_t i = 0; i < dataset.instances.size(); ++i) {
          const Instance& inst = dataset.instances[i];
          if (any_train && inst.split != Split::train) continue;
          if (cluster_of_segment.at(inst.segment_id) != k) continue;
          attribution +=
              mlp_input_gradient(*mlp, X.row(static_cast<Eigen::Index>(i)).transpose())
                  .cwiseAbs();
          ++n_rows;
        }
        if (n_rows > 0) {
          attribution /= static_cast<double>(n_rows);
          const double top = attribution.maxCoeff();
          if (top > 0.0) attribution /= top;  // normalize to max 1 before the 0.01 rule
          profile.top_mlp = rank_within(ensemble.metric_names, attribution, 0.01);
        }
      }
    }
    profiles.push_back(std::move(profile));
  }
  return profiles;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kToolVersion = "0.1.0";

void write_json_file(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write file: " + path.string());
  out << j.dump(2) << '\n';
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": malformed JSON: " + e.what());
  }
}

std::string combiner_file_name(const std::string& routing, const std::string& cluster) {
  return routing + "__" + cluster + ".json";
}

}  // namespace

void save_ensemble(const TrainedEnsemble& ensemble, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root / "combiners");

  ordered_json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["tool_version"] = kToolVersion;
  manifest["config"] = config_to_json(ensemble.config);
  manifest["metric_names"] = ensemble.metric_names;
  manifest["has_cell_normalizer"] = ensemble.cell_normalizer.has_value();
  manifest["has_clusters"] = ensemble.clusters.has_value();
  ordered_json fallbacks = ordered_json::array();
  for (const FallbackRecord& f : ensemble.fallbacks) {
    ordered_json rec;
    rec["routing"] = f.routing;
    rec["cluster"] = f.cluster;
    rec["reason"] = f.reason;
    rec["n_instances"] = f.n_instances;
    fallbacks.push_back(std::move(rec));
  }
  manifest["fallbacks"] = std::move(fallbacks);
  ordered_json combiner_list = ordered_json::array();
  for (const auto& [key, combiner] : ensemble.combiners) {
    ordered_json entry;
    entry["routing"] = key.first;
    entry["cluster"] = key.second;
    entry["file"] = "combiners/" + combiner_file_name(key.first, key.second);
    combiner_list.push_back(std::move(entry));
  }
  manifest["combiners"] = std::move(combiner_list);
  write_json_file(root / "manifest.json", manifest);

  write_json_file(root / "standardizer.json", standardizer_to_json(ensemble.standardizer));
  if (ensemble.cell_normalizer)
    write_json_file(root / "cell_normalizer.json",
                    cell_normalizer_to_json(*ensemble.cell_normalizer));
  if (ensemble.clusters)
    write_json_file(root / "clusters.json", cluster_model_to_json(*ensemble.clusters));
  for (const auto& [key, combiner] : ensemble.combiners)
    write_json_file(root / "combiners" / combiner_file_name(key.first, key.second),
                    combiner_to_json(combiner));
}

TrainedEnsemble load_ensemble(const std::string& dir) {
  const fs::path root(dir);
  const json manifest = read_json_file(root / "manifest.json");
  if (manifest.at("format_version").get<int>() != kFormatVersion)
    throw InputError(dir + ": unsupported ensemble format version");

  TrainedEnsemble ensemble;
  ensemble.config = config_from_json(manifest.at("config"));
  ensemble.metric_names = manifest.at("metric_names").get<std::vector<std::string>>();
  ensemble.standardizer = standardizer_from_json(read_json_file(root / "standardizer.json"));
  if (manifest.at("has_cell_normalizer").get<bool>())
    ensemble.cell_normalizer =
        cell_normalizer_from_json(read_json_file(root / "cell_normalizer.json"));
  if (manifest.at("has_clusters").get<bool>())
    ensemble.clusters = cluster_model_from_json(read_json_file(root / "clusters.json"));
  for (const auto& f : manifest.at("fallbacks")) {
    FallbackRecord rec;
    rec.routing = f.at("routing").get<std::string>();
    rec.cluster = f.at("cluster").get<std::string>();
    rec.reason = f.at("reason").get<std::string>();
    rec.n_instances = f.at("n_instances").get<std::size_t>();
    ensemble.fallbacks.push_back(std::move(rec));
  }
  for (const auto& entry : manifest.at("combiners")) {
    const std::string routing = entry.at("routing").get<std::string>();
    const std::string cluster = entry.at("cluster").get<std::string>();
    const json combiner = read_json_file(root / entry.at("file").get<std::string>());
    ensemble.combiners.emplace(std::make_pair(routing, cluster), combiner_from_json(combiner));
  }
  return ensemble;
}

}  // namespace dmm
