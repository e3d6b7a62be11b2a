#pragma once

#include <cstdint>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmm/combiners.hpp"
#include "dmm/context.hpp"
#include "dmm/corpus.hpp"
#include "dmm/metaeval.hpp"
#include "dmm/preprocess.hpp"

namespace dmm {

enum class Pooling { pooled, separate };
enum class Conditioning { none, hard, soft };
enum class ModelClass { ols, mlp, gp, contextual_linear };

std::string pooling_name(Pooling p);
std::string conditioning_name(Conditioning c);
std::string model_class_name(ModelClass m);
Pooling parse_pooling(const std::string& s);
Conditioning parse_conditioning(const std::string& s);
ModelClass parse_model_class(const std::string& s);

enum class TargetNorm { off, on, auto_on_multi_year };

struct EnsembleConfig {
  Pooling pooling = Pooling::pooled;
  Conditioning conditioning = Conditioning::none;
  ModelClass model_class = ModelClass::ols;
  int K = 1;          // clusters; used when conditioning != none
  double T = 1.0;     // responsibility temperature; soft conditioning only
  std::uint64_t seed = 0;
  TargetNorm target_norm = TargetNorm::auto_on_multi_year;
  bool allow_fallback = true;      // undersized cluster cells fall back to the key-global model
  bool pooled_companion = false;   // under separate pooling, also train "ALL" models
  double ridge_alpha = 1.0;
  MLPConfig mlp;
  GpConfig gp;

  void validate() const;  // throws InputError on contradictory settings
};

nlohmann::ordered_json config_to_json(const EnsembleConfig& config);
EnsembleConfig config_from_json(const nlohmann::json& j);

// Routing keys: "ALL" or a language pair; cluster keys: "GLOBAL" or the
// cluster index as a string.
inline constexpr const char* kAllKey = "ALL";
inline constexpr const char* kGlobalCluster = "GLOBAL";

struct FallbackRecord {
  std::string routing;
  std::string cluster;
  std::string reason;
  std::size_t n_instances = 0;
};

struct TrainedEnsemble {
  EnsembleConfig config;
  std::vector<std::string> metric_names;
  Standardizer standardizer;
  std::optional<CellNormalizer> cell_normalizer;
  std::optional<ClusterModel> clusters;
  std::map<std::pair<std::string, std::string>, Combiner> combiners;
  std::vector<FallbackRecord> fallbacks;

  const Combiner* find(const std::string& routing, const std::string& cluster) const;
};

// Fits the configured ensemble on the dataset's training split (rows with
// split == train; if no rows carry splits the whole dataset is the training
// split). jobs bounds the fitting work pool; results do not depend on it.
TrainedEnsemble train(const Dataset& dataset, const EnsembleConfig& config, int jobs = 1);

struct ScoreResult {
  std::vector<double> predictions;        // aligned to dataset rows
  std::vector<std::string> combiner_ids;  // "routing/cluster" audit trail
};

ScoreResult score(const TrainedEnsemble& ensemble, const Dataset& dataset,
                  bool allow_pooled_fallback = false);

// Pearson of predictions vs (normalized) human scores on the val split.
double validation_pearson(const TrainedEnsemble& ensemble, const Dataset& dataset);

// Fits one model per temperature on the train split, evaluates validation
// Pearson, returns the winner (ties within 1e-12 -> smaller T).
std::pair<double, TrainedEnsemble> select_temperature(const Dataset& dataset,
                                                      EnsembleConfig config,
                                                      const std::vector<double>& t_grid,
                                                      int jobs = 1);

// Same over a K grid (soft configs may nest a temperature grid); ties ->
// smaller K.
std::pair<int, TrainedEnsemble> select_k(const Dataset& dataset, EnsembleConfig config,
                                         const std::vector<int>& k_grid,
                                         const std::vector<double>& t_grid = {}, int jobs = 1);

struct EvalRow {
  std::string lang_pair;
  double acc_star_eq = 0.0;
  double epsilon_star = 0.0;
  double spa = 0.0;
  std::int64_t n_pairs = 0;
  int n_system_pairs = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // one per language pair, sorted
  EvalRow avg;                // macro average ("Avg")
  int n_resamples = 0;
  std::uint64_t seed = 0;
};

EvalReport evaluate(const TrainedEnsemble& ensemble, const Dataset& dataset, int n_resamples,
                    std::uint64_t seed, bool allow_pooled_fallback = false);
// Evaluates externally produced predictions aligned to the instances.
EvalReport evaluate_scored(const std::vector<Instance>& instances,
                           const std::vector<double>& predictions, int n_resamples,
                           std::uint64_t seed);

nlohmann::ordered_json report_to_json(const EvalReport& report);
std::string render_report_text(const EvalReport& report);

struct RankedMetric {
  std::string name;
  double score = 0.0;
};

struct ClusterProfile {
  int cluster = 0;
  std::size_t n_segments = 0;
  long median_token_count = 0;
  std::vector<RankedMetric> top_gp;   // weight-ranked (GP or OLS combiners)
  std::vector<RankedMetric> top_mlp;  // gradient-attribution-ranked (MLP)
};

// Profiles a hard-conditioned ensemble's clusters over the given dataset:
// deduplicated segment counts, median whitespace token counts, and top
// metrics (everything within 0.01 of the top is listed).
std::vector<ClusterProfile> profile_clusters(const TrainedEnsemble& ensemble,
                                             const Dataset& dataset);

long whitespace_token_count(const std::string& text);

void save_ensemble(const TrainedEnsemble& ensemble, const std::string& dir);
TrainedEnsemble load_ensemble(const std::string& dir);

}  // namespace dmm
