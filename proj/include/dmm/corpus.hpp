#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmm/error.hpp"

namespace dmm {

enum class Split { unassigned, train, val, test };

std::string split_name(Split s);
Split parse_split(const std::string& s);  // "" -> unassigned

// One (source segment, system hypothesis) pair with its gold human score.
struct Instance {
  std::string segment_id;
  std::string system_id;
  std::string lang_pair;
  int year = 0;
  std::string source_text;
  double human_score = 0.0;
  Split split = Split::unassigned;
};

struct RowKey {
  std::string segment_id;
  std::string system_id;
  friend auto operator<=>(const RowKey&, const RowKey&) = default;
};

// n x d base-metric scores aligned to instances by (segment_id, system_id).
// Column order is the canonical feature order for all downstream models.
struct MetricMatrix {
  std::vector<std::string> metric_names;
  Eigen::MatrixXd scores;  // n x d
  std::vector<RowKey> row_keys;

  Eigen::Index rows() const { return scores.rows(); }
  Eigen::Index cols() const { return scores.cols(); }
};

// Source-segment embeddings e(s). Ordered map so iteration is deterministic.
struct EmbeddingTable {
  int dim = 0;
  std::map<std::string, Eigen::VectorXd> vectors;
  bool normalized = false;

  bool empty() const { return vectors.empty(); }
  const Eigen::VectorXd& at(const std::string& segment_id) const;
};

// Joined, fully aligned view: metrics.row_keys[i] corresponds to instances[i].
struct Dataset {
  std::vector<Instance> instances;
  MetricMatrix metrics;
  EmbeddingTable embeddings;
};

enum class TableFormat { tsv, jsonl };

TableFormat parse_table_format(const std::string& s);

struct InstanceLoadResult {
  std::vector<Instance> instances;
  std::size_t n_excluded = 0;  // rows dropped for missing/non-finite human score
};

// Loads instances; rows without a parseable finite human_score are excluded
// and counted. Structural problems (bad field count, bad year, duplicate
// keys) raise InputError naming the line.
InstanceLoadResult load_instances(const std::string& path, TableFormat format);
void save_instances(const std::string& path, const std::vector<Instance>& instances,
                    TableFormat format);

// Wide score table keyed by (segment_id, system_id). Columns follow the
// manifest order exactly; any missing column or non-finite cell is an error.
MetricMatrix load_metric_scores(const std::string& path, TableFormat format,
                                const std::vector<std::string>& manifest);
// Reads the metric-column names from a file's header (TSV) or first record
// (JSONL), in file order, skipping the key columns.
std::vector<std::string> sniff_metric_manifest(const std::string& path, TableFormat format);
void save_metric_scores(const std::string& path, const MetricMatrix& matrix,
                        TableFormat format);

enum class EmbeddingFormat { jsonl, binary };

// Auto-detects JSONL vs the packed binary format by magic bytes.
EmbeddingTable load_embeddings(const std::string& path, bool renormalize);
void save_embeddings(const std::string& path, const EmbeddingTable& table,
                     EmbeddingFormat format);

// Assigns train/val splits at the segment level, independently per year.
// Instances that already carry splits are passed through unchanged.
std::vector<Instance> split_dataset(std::vector<Instance> instances, double train_frac,
                                    std::uint64_t seed);

// Verifies three-way alignment and reorders metric rows to instance order.
Dataset assemble(std::vector<Instance> instances, MetricMatrix metrics,
                 EmbeddingTable embeddings);
// Assembles without embeddings (valid for unconditioned models only).
Dataset assemble(std::vector<Instance> instances, MetricMatrix metrics);

}  // namespace dmm
