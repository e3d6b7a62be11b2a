// dmm: fit / score / evaluate / profile meta-metric ensembles from the
// command line. TSV is the default interchange format, JSONL via --format.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "dmm/corpus.hpp"
#include "dmm/parallel.hpp"
#include "dmm/pipeline.hpp"
#include "dmm/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw dmm::InputError("cannot open file: " + path);
  std::uint64_t h = 14695981039346656037ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (got < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

void atomic_write(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw dmm::InputError("cannot write file: " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

// Written next to the declared outputs (never inside the ensemble directory)
// so seeded outputs stay byte-identical across runs.
struct RunManifest {
  std::string command;
  ordered_json resolved_config = ordered_json::object();
  ordered_json inputs = ordered_json::object();
  std::uint64_t seed = 0;
  ordered_json timings_ms = ordered_json::object();

  void add_input(const std::string& name, const std::string& path) {
    if (path.empty()) return;
    ordered_json entry;
    entry["path"] = path;
    entry["fnv1a64"] = file_digest(path);
    inputs[name] = std::move(entry);
  }

  void write(const std::string& out_path) const {
    ordered_json j;
    j["command"] = command;
    j["tool_version"] = kToolVersion;
    j["config"] = resolved_config;
    j["inputs"] = inputs;
    j["seed"] = seed;
    j["timings_ms"] = timings_ms;
    atomic_write(out_path + ".runmanifest.json", j.dump(2) + "\n");
  }
};

// --config FILE supplies defaults for any flag not given on the command
// line; CLI values take precedence.
json load_config_file(int argc, char** argv) {
  std::string path;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) path = argv[i + 1];
    else if (a.rfind("--config=", 0) == 0) path = a.substr(9);
  }
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw dmm::InputError("cannot open config file: " + path);
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw dmm::InputError(path + ": config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw dmm::InputError(path + ": malformed JSON: " + e.what());
  }
}

template <class T>
void config_default(const json& cfg, const char* key, T& var) {
  if (cfg.contains(key)) var = cfg.at(key).get<T>();
}

void require_flag(const std::string& value, const char* flag) {
  if (value.empty()) throw dmm::InputError(std::string("missing required flag ") + flag);
}

struct LoadedData {
  std::vector<dmm::Instance> instances;
  dmm::MetricMatrix metrics;
  dmm::EmbeddingTable embeddings;
  bool have_embeddings = false;
};

LoadedData load_inputs(const std::string& instances_path, const std::string& metrics_path,
                       const std::string& embeddings_path, dmm::TableFormat format,
                       std::vector<std::string> manifest, bool renormalize) {
  LoadedData data;
  dmm::InstanceLoadResult loaded = dmm::load_instances(instances_path, format);
  if (loaded.n_excluded > 0)
    std::cerr << "note: excluded " << loaded.n_excluded
              << " instance row(s) without a finite human score\n";
  data.instances = std::move(loaded.instances);
  if (manifest.empty()) manifest = dmm::sniff_metric_manifest(metrics_path, format);
  data.metrics = dmm::load_metric_scores(metrics_path, format, manifest);
  if (!embeddings_path.empty()) {
    data.embeddings = dmm::load_embeddings(embeddings_path, renormalize);
    data.have_embeddings = true;
  }
  return data;
}

dmm::Dataset make_dataset(LoadedData data) {
  if (data.have_embeddings)
    return dmm::assemble(std::move(data.instances), std::move(data.metrics),
                         std::move(data.embeddings));
  return dmm::assemble(std::move(data.instances), std::move(data.metrics));
}

std::string format_prediction(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitOptions {
  std::string instances, metrics, embeddings, out, format = "tsv";
  std::vector<std::string> metric_names;
  bool renormalize_embeddings = false;
  std::string pooling = "pooled", conditioning = "none", model = "ols";
  std::vector<int> k = {};
  double t = 1.0;
  std::vector<double> t_grid;
  std::uint64_t seed = 0;
  double train_frac = 0.8;
  std::string normalize_targets = "auto";
  bool no_fallback = false;
  bool pooled_companion = false;
  double ridge_alpha = 1.0;
  int gp_init = 5, gp_iters = 100;
  int jobs = dmm::default_jobs();
};

int run_fit(const FitOptions& opt) {
  const auto start = Clock::now();
  require_flag(opt.instances, "--instances");
  require_flag(opt.metrics, "--metrics");
  require_flag(opt.out, "--out");

  dmm::EnsembleConfig config;
  config.pooling = dmm::parse_pooling(opt.pooling);
  config.conditioning = dmm::parse_conditioning(opt.conditioning);
  config.model_class = dmm::parse_model_class(opt.model);
  config.seed = opt.seed;
  config.T = opt.t;
  config.ridge_alpha = opt.ridge_alpha;
  config.allow_fallback = !opt.no_fallback;
  config.pooled_companion = opt.pooled_companion;
  config.gp.n_init = opt.gp_init;
  config.gp.n_iter = opt.gp_iters;
  if (opt.normalize_targets == "auto") config.target_norm = dmm::TargetNorm::auto_on_multi_year;
  else if (opt.normalize_targets == "on") config.target_norm = dmm::TargetNorm::on;
  else if (opt.normalize_targets == "off") config.target_norm = dmm::TargetNorm::off;
  else throw dmm::InputError("--normalize-targets expects auto/on/off");

  std::vector<int> k_grid = opt.k;
  if (config.conditioning != dmm::Conditioning::none && k_grid.empty())
    throw dmm::InputError("--k is required when conditioning != none");
  if (!k_grid.empty()) config.K = k_grid.front();
  config.validate();

  if (config.conditioning != dmm::Conditioning::none && opt.embeddings.empty())
    throw dmm::InputError("--embeddings is required when conditioning != none");

  LoadedData data = load_inputs(opt.instances, opt.metrics, opt.embeddings,
                                dmm::parse_table_format(opt.format), opt.metric_names,
                                opt.renormalize_embeddings);
  data.instances = dmm::split_dataset(std::move(data.instances), opt.train_frac, opt.seed);
  const dmm::Dataset dataset = make_dataset(std::move(data));

  const auto train_start = Clock::now();
  dmm::TrainedEnsemble ensemble;
  if (k_grid.size() > 1) {
    auto [k_star, fitted] = dmm::select_k(dataset, config, k_grid, opt.t_grid, opt.jobs);
    std::cout << "selected K = " << k_star << "\n";
    ensemble = std::move(fitted);
  } else if (config.conditioning == dmm::Conditioning::soft && !opt.t_grid.empty()) {
    auto [t_star, fitted] = dmm::select_temperature(dataset, config, opt.t_grid, opt.jobs);
    std::cout << "selected T = " << t_star << "\n";
    ensemble = std::move(fitted);
  } else {
    ensemble = dmm::train(dataset, config, opt.jobs);
  }
  const double train_ms = ms_since(train_start);

  dmm::save_ensemble(ensemble, opt.out);
  std::cout << "trained " << ensemble.combiners.size() << " combiner(s), "
            << ensemble.fallbacks.size() << " fallback cell(s); ensemble written to " << opt.out
            << "\n";

  RunManifest manifest;
  manifest.command = "fit";
  manifest.resolved_config = dmm::config_to_json(ensemble.config);
  manifest.resolved_config["k_grid"] = k_grid;
  manifest.resolved_config["t_grid"] = opt.t_grid;
  manifest.resolved_config["train_frac"] = opt.train_frac;
  manifest.add_input("instances", opt.instances);
  manifest.add_input("metrics", opt.metrics);
  manifest.add_input("embeddings", opt.embeddings);
  manifest.seed = opt.seed;
  manifest.timings_ms["train"] = train_ms;
  manifest.timings_ms["total"] = ms_since(start);
  manifest.write(opt.out);
  return 0;
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

struct ScoreOptions {
  std::string ensemble, instances, metrics, embeddings, out, audit, format = "tsv";
  bool renormalize_embeddings = false;
  bool fallback_pooled = false;
};

int run_score(const ScoreOptions& opt) {
  const auto start = Clock::now();
  require_flag(opt.ensemble, "--ensemble");
  require_flag(opt.instances, "--instances");
  require_flag(opt.metrics, "--metrics");
  require_flag(opt.out, "--out");

  const dmm::TrainedEnsemble ensemble = dmm::load_ensemble(opt.ensemble);
  // Column order is resolved by name against the ensemble's manifest.
  LoadedData data = load_inputs(opt.instances, opt.metrics, opt.embeddings,
                                dmm::parse_table_format(opt.format), ensemble.metric_names,
                                opt.renormalize_embeddings);
  const dmm::Dataset dataset = make_dataset(std::move(data));
  const dmm::ScoreResult result = dmm::score(ensemble, dataset, opt.fallback_pooled);

  std::string tsv = "segment_id\tsystem_id\tlang_pair\tprediction\n";
  for (std::size_t i = 0; i < dataset.instances.size(); ++i) {
    const dmm::Instance& inst = dataset.instances[i];
    tsv += inst.segment_id + "\t" + inst.system_id + "\t" + inst.lang_pair + "\t" +
           format_prediction(result.predictions[i]) + "\n";
  }
  atomic_write(opt.out, tsv);

  if (!opt.audit.empty()) {
    std::string audit = "segment_id\tsystem_id\tcombiner_id\n";
    for (std::size_t i = 0; i < dataset.instances.size(); ++i)
      audit += dataset.instances[i].segment_id + "\t" + dataset.instances[i].system_id + "\t" +
               result.combiner_ids[i] + "\n";
    atomic_write(opt.audit, audit);
  }
  std::cout << "scored " << dataset.instances.size() << " instance(s) -> " << opt.out << "\n";

  RunManifest manifest;
  manifest.command = "score";
  manifest.resolved_config["ensemble"] = opt.ensemble;
  manifest.resolved_config["fallback_pooled"] = opt.fallback_pooled;
  manifest.add_input("instances", opt.instances);
  manifest.add_input("metrics", opt.metrics);
  manifest.add_input("embeddings", opt.embeddings);
  manifest.seed = ensemble.config.seed;
  manifest.timings_ms["total"] = ms_since(start);
  manifest.write(opt.out);
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions {
  std::string predictions, ensemble, instances, metrics, embeddings, out, format = "tsv";
  bool renormalize_embeddings = false;
  bool fallback_pooled = false;
  int bootstrap = 1000;
  std::uint64_t seed = 0;
};

std::vector<double> load_predictions(const std::string& path,
                                     const std::vector<dmm::Instance>& instances) {
  std::ifstream in(path);
  if (!in) throw dmm::InputError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw dmm::InputError(path + ": empty predictions file");
  std::map<std::pair<std::string, std::string>, double> by_key;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', pos);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(pos));
        break;
      }
      fields.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    if (fields.size() != 4)
      throw dmm::InputError(path + ":" + std::to_string(line_no) + ": expected 4 fields");
    double v;
    try {
      v = std::stod(fields[3]);
    } catch (...) {
      throw dmm::InputError(path + ":" + std::to_string(line_no) + ": bad prediction value");
    }
    if (!by_key.emplace(std::make_pair(fields[0], fields[1]), v).second)
      throw dmm::InputError(path + ":" + std::to_string(line_no) + ": duplicate prediction key");
  }
  std::vector<double> aligned(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto it = by_key.find({instances[i].segment_id, instances[i].system_id});
    if (it == by_key.end())
      throw dmm::InputError("no prediction for instance (" + instances[i].segment_id + ", " +
                            instances[i].system_id + ")");
    aligned[i] = it->second;
  }
  return aligned;
}

int run_evaluate(const EvaluateOptions& opt) {
  const auto start = Clock::now();
  require_flag(opt.instances, "--instances");
  require_flag(opt.out, "--out");
  if (opt.predictions.empty() && opt.ensemble.empty())
    throw dmm::InputError("evaluate needs --predictions or --ensemble");

  dmm::EvalReport report;
  RunManifest manifest;
  manifest.command = "evaluate";
  if (!opt.predictions.empty()) {
    dmm::InstanceLoadResult loaded =
        dmm::load_instances(opt.instances, dmm::parse_table_format(opt.format));
    if (loaded.n_excluded > 0)
      std::cerr << "note: excluded " << loaded.n_excluded
                << " instance row(s) without a finite human score\n";
    const std::vector<double> predictions = load_predictions(opt.predictions, loaded.instances);
    report = dmm::evaluate_scored(loaded.instances, predictions, opt.bootstrap, opt.seed);
    manifest.add_input("predictions", opt.predictions);
  } else {
    require_flag(opt.metrics, "--metrics");
    const dmm::TrainedEnsemble ensemble = dmm::load_ensemble(opt.ensemble);
    LoadedData data = load_inputs(opt.instances, opt.metrics, opt.embeddings,
                                  dmm::parse_table_format(opt.format), ensemble.metric_names,
                                  opt.renormalize_embeddings);
    const dmm::Dataset dataset = make_dataset(std::move(data));
    report = dmm::evaluate(ensemble, dataset, opt.bootstrap, opt.seed, opt.fallback_pooled);
    manifest.resolved_config["ensemble"] = opt.ensemble;
    manifest.add_input("metrics", opt.metrics);
    manifest.add_input("embeddings", opt.embeddings);
  }

  fs::create_directories(opt.out);
  atomic_write(fs::path(opt.out) / "report.json", dmm::report_to_json(report).dump(2) + "\n");
  const std::string text = dmm::render_report_text(report);
  atomic_write(fs::path(opt.out) / "report.txt", text);
  std::cout << text;

  manifest.resolved_config["bootstrap"] = opt.bootstrap;
  manifest.add_input("instances", opt.instances);
  manifest.seed = opt.seed;
  manifest.timings_ms["total"] = ms_since(start);
  manifest.write(opt.out);
  return 0;
}

// ---------------------------------------------------------------------------
// profile
// ---------------------------------------------------------------------------

struct ProfileOptions {
  std::string ensemble, instances, metrics, embeddings, out, format = "tsv";
  bool renormalize_embeddings = false;
};

int run_profile(const ProfileOptions& opt) {
  const auto start = Clock::now();
  require_flag(opt.ensemble, "--ensemble");
  require_flag(opt.instances, "--instances");
  require_flag(opt.metrics, "--metrics");
  require_flag(opt.embeddings, "--embeddings");
  require_flag(opt.out, "--out");

  const dmm::TrainedEnsemble ensemble = dmm::load_ensemble(opt.ensemble);
  LoadedData data = load_inputs(opt.instances, opt.metrics, opt.embeddings,
                                dmm::parse_table_format(opt.format), ensemble.metric_names,
                                opt.renormalize_embeddings);
  const dmm::Dataset dataset = make_dataset(std::move(data));
  const std::vector<dmm::ClusterProfile> profiles = dmm::profile_clusters(ensemble, dataset);

  auto join_names = [](const std::vector<dmm::RankedMetric>& ranked) {
    if (ranked.empty()) return std::string("-");
    std::string out;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      if (i) out += ",";
      out += ranked[i].name;
    }
    return out;
  };

  std::string tsv = "cluster\tn_segments\tmedian_tokens\tgp_top\tmlp_top\n";
  for (const dmm::ClusterProfile& p : profiles) {
    tsv += std::to_string(p.cluster) + "\t" + std::to_string(p.n_segments) + "\t" +
           std::to_string(p.median_token_count) + "\t" + join_names(p.top_gp) + "\t" +
           join_names(p.top_mlp) + "\n";
  }
  atomic_write(opt.out, tsv);
  std::cout << "profiled " << profiles.size() << " cluster(s) -> " << opt.out << "\n";

  RunManifest manifest;
  manifest.command = "profile";
  manifest.resolved_config["ensemble"] = opt.ensemble;
  manifest.add_input("instances", opt.instances);
  manifest.add_input("metrics", opt.metrics);
  manifest.add_input("embeddings", opt.embeddings);
  manifest.seed = ensemble.config.seed;
  manifest.timings_ms["total"] = ms_since(start);
  manifest.write(opt.out);
  return 0;
}

void add_common_input_flags(CLI::App* cmd, std::string& instances, std::string& metrics,
                            std::string& embeddings, std::string& format, bool& renorm) {
  cmd->add_option("--instances", instances, "instance table (TSV or JSONL)");
  cmd->add_option("--metrics", metrics, "wide metric-score table");
  cmd->add_option("--embeddings", embeddings, "source-segment embeddings (JSONL or packed binary)");
  cmd->add_option("--format", format, "table format: tsv or jsonl")->capture_default_str();
  cmd->add_flag("--renormalize-embeddings", renorm, "L2-renormalize embeddings at load");
}

}  // namespace

int main(int argc, char** argv) {
  json cfg;
  try {
    cfg = load_config_file(argc, argv);
  } catch (const dmm::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App app{"Dynamic meta-metric training and meta-evaluation toolkit"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file supplying flag defaults");

  FitOptions fit;
  config_default(cfg, "instances", fit.instances);
  config_default(cfg, "metrics", fit.metrics);
  config_default(cfg, "embeddings", fit.embeddings);
  config_default(cfg, "format", fit.format);
  config_default(cfg, "metric_names", fit.metric_names);
  config_default(cfg, "pooling", fit.pooling);
  config_default(cfg, "conditioning", fit.conditioning);
  config_default(cfg, "model", fit.model);
  config_default(cfg, "k", fit.k);
  config_default(cfg, "t", fit.t);
  config_default(cfg, "t_grid", fit.t_grid);
  config_default(cfg, "seed", fit.seed);
  config_default(cfg, "out", fit.out);
  config_default(cfg, "train_frac", fit.train_frac);
  config_default(cfg, "normalize_targets", fit.normalize_targets);
  config_default(cfg, "ridge_alpha", fit.ridge_alpha);
  config_default(cfg, "jobs", fit.jobs);

  CLI::App* fit_cmd = app.add_subcommand("fit", "train an ensemble");
  add_common_input_flags(fit_cmd, fit.instances, fit.metrics, fit.embeddings, fit.format,
                         fit.renormalize_embeddings);
  fit_cmd->add_option("--metric-names", fit.metric_names,
                      "metric manifest (default: all non-key columns in file order)")
      ->delimiter(',');
  fit_cmd->add_option("--pooling", fit.pooling, "pooled | separate")->capture_default_str();
  fit_cmd->add_option("--conditioning", fit.conditioning, "none | hard | soft")
      ->capture_default_str();
  fit_cmd->add_option("--model", fit.model, "ols | mlp | gp | cl")->capture_default_str();
  fit_cmd->add_option("--k", fit.k, "cluster count; several values form a selection grid")
      ->delimiter(',');
  fit_cmd->add_option("--t", fit.t, "responsibility temperature (soft)")->capture_default_str();
  fit_cmd->add_option("--t-grid", fit.t_grid, "temperature grid for validation selection")
      ->delimiter(',');
  fit_cmd->add_option("--seed", fit.seed, "master seed")->capture_default_str();
  fit_cmd->add_option("--out", fit.out, "output ensemble directory");
  fit_cmd->add_option("--train-frac", fit.train_frac,
                      "train fraction for the segment-level split when instances carry none")
      ->capture_default_str();
  fit_cmd->add_option("--normalize-targets", fit.normalize_targets,
                      "normalize human targets per (year, lang_pair) cell: auto | on | off")
      ->capture_default_str();
  fit_cmd->add_flag("--no-fallback", fit.no_fallback,
                    "error on undersized cluster cells instead of falling back");
  fit_cmd->add_flag("--pooled-companion", fit.pooled_companion,
                    "with separate pooling, also train pooled companion models");
  fit_cmd->add_option("--ridge-alpha", fit.ridge_alpha, "ridge strength for the cl model")
      ->capture_default_str();
  fit_cmd->add_option("--gp-init", fit.gp_init, "GP random initial evaluations")
      ->capture_default_str();
  fit_cmd->add_option("--gp-iters", fit.gp_iters, "GP optimization iterations")
      ->capture_default_str();
  fit_cmd->add_option("--jobs", fit.jobs, "work-pool size (DMM_JOBS); never changes results")
      ->capture_default_str();

  ScoreOptions score;
  config_default(cfg, "ensemble", score.ensemble);
  CLI::App* score_cmd = app.add_subcommand("score", "score instances with a trained ensemble");
  add_common_input_flags(score_cmd, score.instances, score.metrics, score.embeddings,
                         score.format, score.renormalize_embeddings);
  score_cmd->add_option("--ensemble", score.ensemble, "trained ensemble directory");
  score_cmd->add_option("--out", score.out, "output predictions TSV");
  score_cmd->add_option("--audit", score.audit, "also write a routing audit TSV");
  score_cmd->add_flag("--fallback-pooled", score.fallback_pooled,
                      "route unseen language pairs to the pooled companion model");

  EvaluateOptions evaluate;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "meta-evaluate predictions against gold");
  add_common_input_flags(eval_cmd, evaluate.instances, evaluate.metrics, evaluate.embeddings,
                         evaluate.format, evaluate.renormalize_embeddings);
  eval_cmd->add_option("--predictions", evaluate.predictions, "predictions TSV from `dmm score`");
  eval_cmd->add_option("--ensemble", evaluate.ensemble,
                       "score with this ensemble instead of --predictions");
  eval_cmd->add_option("--out", evaluate.out, "output report directory");
  eval_cmd->add_option("--bootstrap", evaluate.bootstrap, "SPA bootstrap resamples")
      ->capture_default_str();
  eval_cmd->add_option("--seed", evaluate.seed, "bootstrap seed")->capture_default_str();
  eval_cmd->add_flag("--fallback-pooled", evaluate.fallback_pooled,
                     "route unseen language pairs to the pooled companion model");

  ProfileOptions profile;
  CLI::App* profile_cmd = app.add_subcommand("profile", "profile a hard-conditioned ensemble");
  add_common_input_flags(profile_cmd, profile.instances, profile.metrics, profile.embeddings,
                         profile.format, profile.renormalize_embeddings);
  profile_cmd->add_option("--ensemble", profile.ensemble, "trained ensemble directory");
  profile_cmd->add_option("--out", profile.out, "output clusters TSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (fit_cmd->parsed()) return run_fit(fit);
    if (score_cmd->parsed()) return run_score(score);
    if (eval_cmd->parsed()) return run_evaluate(evaluate);
    if (profile_cmd->parsed()) return run_profile(profile);
    std::cerr << "error: no subcommand given\n";
    return 2;
  } catch (const dmm::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
