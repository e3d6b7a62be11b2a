#include "dmm/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "dmm/rng.hpp"

namespace dmm {

using nlohmann::json;
using nlohmann::ordered_json;

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    default: return "";
  }
}

Split parse_split(const std::string& s) {
  if (s.empty()) return Split::unassigned;
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InputError("unknown split value '" + s + "' (expected train/val/test)");
}

TableFormat parse_table_format(const std::string& s) {
  if (s == "tsv") return TableFormat::tsv;
  if (s == "jsonl") return TableFormat::jsonl;
  throw InputError("unknown table format '" + s + "' (expected tsv or jsonl)");
}

const Eigen::VectorXd& EmbeddingTable::at(const std::string& segment_id) const {
  auto it = vectors.find(segment_id);
  if (it == vectors.end())
    throw InputError("no embedding for segment_id '" + segment_id + "'");
  return it->second;
}

namespace {

std::ifstream open_input(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw InputError("cannot open file: " + path);
  return in;
}

std::ofstream open_output(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw InputError("cannot open file for writing: " + path);
  return out;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

bool parse_double(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_int(const std::string& s, int& out) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Column lookup for TSV headers; -1 when absent.
struct Header {
  std::vector<std::string> names;
  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }
  int require(const std::string& name, const std::string& path) const {
    const int i = index_of(name);
    if (i < 0) throw InputError(path + ": missing column " + name);
    return i;
  }
};

json parse_json_line(const std::string& path, std::size_t line_no, const std::string& line) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw InputError(path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
  }
}

std::string require_string(const json& obj, const char* key, const std::string& path,
                           std::size_t line_no) {
  if (!obj.contains(key) || !obj.at(key).is_string())
    throw InputError(path + ":" + std::to_string(line_no) + ": missing or non-string field '" +
                     key + "'");
  return obj.at(key).get<std::string>();
}

std::string instance_key_string(const Instance& inst) {
  return std::to_string(inst.year) + "|" + inst.lang_pair + "|" + inst.system_id + "|" +
         inst.segment_id;
}

// Accepts a JSON number or a numeric string; returns false when the value is
// absent, null, or not parseable as a finite double.
bool json_human_score(const json& obj, double& out) {
  if (!obj.contains("human_score")) return false;
  const json& v = obj.at("human_score");
  if (v.is_number()) {
    out = v.get<double>();
    return std::isfinite(out);
  }
  if (v.is_string()) return parse_double(v.get<std::string>(), out) && std::isfinite(out);
  return false;
}

}  // namespace

InstanceLoadResult load_instances(const std::string& path, TableFormat format) {
  InstanceLoadResult result;
  std::set<std::string> seen_keys;

  auto accept = [&](Instance inst, std::size_t line_no) {
    const std::string key = instance_key_string(inst);
    if (!seen_keys.insert(key).second)
      throw InputError(path + ":" + std::to_string(line_no) +
                       ": duplicate (year, lang_pair, system_id, segment_id) = (" + key + ")");
    result.instances.push_back(std::move(inst));
  };

  std::ifstream in = open_input(path);
  std::string line;
  std::size_t line_no = 0;

  if (format == TableFormat::tsv) {
    if (!std::getline(in, line)) throw InputError(path + ": empty file, header row expected");
    ++line_no;
    strip_cr(line);
    Header header{split_fields(line)};
    const int c_seg = header.require("segment_id", path);
    const int c_sys = header.require("system_id", path);
    const int c_lp = header.require("lang_pair", path);
    const int c_year = header.require("year", path);
    const int c_src = header.require("source_text", path);
    const int c_score = header.require("human_score", path);
    const int c_split = header.index_of("split");

    while (std::getline(in, line)) {
      ++line_no;
      strip_cr(line);
      if (line.empty()) continue;
      const std::vector<std::string> fields = split_fields(line);
      if (fields.size() != header.names.size())
        throw InputError(path + ":" + std::to_string(line_no) + ": expected " +
                         std::to_string(header.names.size()) + " fields, got " +
                         std::to_string(fields.size()));
      Instance inst;
      inst.segment_id = fields[c_seg];
      inst.system_id = fields[c_sys];
      inst.lang_pair = fields[c_lp];
      if (!parse_int(fields[c_year], inst.year))
        throw InputError(path + ":" + std::to_string(line_no) + ": bad year '" + fields[c_year] +
                         "'");
      inst.source_text = fields[c_src];
      if (c_split >= 0) {
        try {
          inst.split = parse_split(fields[c_split]);
        } catch (const InputError& e) {
          throw InputError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
      }
      double score;
      if (!parse_double(fields[c_score], score) || !std::isfinite(score)) {
        ++result.n_excluded;  // no human annotation: drop, do not fail
        continue;
      }
      inst.human_score = score;
      accept(std::move(inst), line_no);
    }
  } else {
    while (std::getline(in, line)) {
      ++line_no;
      strip_cr(line);
      if (line.empty()) continue;
      const json obj = parse_json_line(path, line_no, line);
      Instance inst;
      inst.segment_id = require_string(obj, "segment_id", path, line_no);
      inst.system_id = require_string(obj, "system_id", path, line_no);
      inst.lang_pair = require_string(obj, "lang_pair", path, line_no);
      if (!obj.contains("year") || !obj.at("year").is_number_integer())
        throw InputError(path + ":" + std::to_string(line_no) + ": missing or non-integer 'year'");
      inst.year = obj.at("year").get<int>();
      inst.source_text = require_string(obj, "source_text", path, line_no);
      if (obj.contains("split")) {
        try {
          inst.split = parse_split(obj.at("split").get<std::string>());
        } catch (const InputError& e) {
          throw InputError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
      }
      double score;
      if (!json_human_score(obj, score)) {
        ++result.n_excluded;
        continue;
      }
      inst.human_score = score;
      accept(std::move(inst), line_no);
    }
  }
  return result;
}

void save_instances(const std::string& path, const std::vector<Instance>& instances,
                    TableFormat format) {
  std::ofstream out = open_output(path);
  if (format == TableFormat::tsv) {
    out << "segment_id\tsystem_id\tlang_pair\tyear\tsource_text\thuman_score\tsplit\n";
    for (const Instance& inst : instances) {
      out << inst.segment_id << '\t' << inst.system_id << '\t' << inst.lang_pair << '\t'
          << inst.year << '\t' << inst.source_text << '\t' << format_double(inst.human_score)
          << '\t' << split_name(inst.split) << '\n';
    }
  } else {
    for (const Instance& inst : instances) {
      ordered_json obj;
      obj["segment_id"] = inst.segment_id;
      obj["system_id"] = inst.system_id;
      obj["lang_pair"] = inst.lang_pair;
      obj["year"] = inst.year;
      obj["source_text"] = inst.source_text;
      obj["human_score"] = inst.human_score;
      if (inst.split != Split::unassigned) obj["split"] = split_name(inst.split);
      out << obj.dump() << '\n';
    }
  }
}

MetricMatrix load_metric_scores(const std::string& path, TableFormat format,
                                const std::vector<std::string>& manifest) {
  if (manifest.empty()) throw InputError("metric manifest must name at least one metric");

  MetricMatrix matrix;
  matrix.metric_names = manifest;
  std::vector<std::vector<double>> rows;
  std::set<RowKey> seen;

  auto add_row = [&](RowKey key, std::vector<double> values, std::size_t line_no) {
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (!std::isfinite(values[j]))
        throw InputError(path + ":" + std::to_string(line_no) + ": non-finite value for metric '" +
                         manifest[j] + "' at row (" + key.segment_id + ", " + key.system_id + ")");
    }
    if (!seen.insert(key).second)
      throw InputError(path + ":" + std::to_string(line_no) + ": duplicate row key (" +
                       key.segment_id + ", " + key.system_id + ")");
    matrix.row_keys.push_back(std::move(key));
    rows.push_back(std::move(values));
  };

  std::ifstream in = open_input(path);
  std::string line;
  std::size_t line_no = 0;

  if (format == TableFormat::tsv) {
    if (!std::getline(in, line)) throw InputError(path + ": empty file, header row expected");
    ++line_no;
    strip_cr(line);
    Header header{split_fields(line)};
    const int c_seg = header.require("segment_id", path);
    const int c_sys = header.require("system_id", path);
    std::vector<int> metric_cols;
    for (const std::string& name : manifest) {
      const int c = header.index_of(name);
      if (c < 0) throw InputError(path + ": missing column " + name);
      metric_cols.push_back(c);
    }
    while (std::getline(in, line)) {
      ++line_no;
      strip_cr(line);
      if (line.empty()) continue;
      const std::vector<std::string> fields = split_fields(line);
      if (fields.size() != header.names.size())
        throw InputError(path + ":" + std::to_string(line_no) + ": expected " +
                         std::to_string(header.names.size()) + " fields, got " +
                         std::to_string(fields.size()));
      RowKey key{fields[c_seg], fields[c_sys]};
      std::vector<double> values(manifest.size());
      for (std::size_t j = 0; j < manifest.size(); ++j) {
        if (!parse_double(fields[metric_cols[j]], values[j]))
          throw InputError(path + ":" + std::to_string(line_no) + ": non-finite value for metric '" +
                           manifest[j] + "' at row (" + key.segment_id + ", " + key.system_id +
                           ")");
      }
      add_row(std::move(key), std::move(values), line_no);
    }
  } else {
    while (std::getline(in, line)) {
      ++line_no;
      strip_cr(line);
      if (line.empty()) continue;
      const json obj = parse_json_line(path, line_no, line);
      RowKey key{require_string(obj, "segment_id", path, line_no),
                 require_string(obj, "system_id", path, line_no)};
      std::vector<double> values(manifest.size());
      for (std::size_t j = 0; j < manifest.size(); ++j) {
        if (!obj.contains(manifest[j]))
          throw InputError(path + ": missing column " + manifest[j]);
        const json& v = obj.at(manifest[j]);
        if (!v.is_number())
          throw InputError(path + ":" + std::to_string(line_no) +
                           ": non-finite value for metric '" + manifest[j] + "' at row (" +
                           key.segment_id + ", " + key.system_id + ")");
        values[j] = v.get<double>();
      }
      add_row(std::move(key), std::move(values), line_no);
    }
  }

  matrix.scores.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(manifest.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < manifest.size(); ++j)
      matrix.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return matrix;
}

std::vector<std::string> sniff_metric_manifest(const std::string& path, TableFormat format) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw InputError(path + ": empty file");
  strip_cr(line);
  std::vector<std::string> names;
  if (format == TableFormat::tsv) {
    for (const std::string& name : split_fields(line))
      if (name != "segment_id" && name != "system_id") names.push_back(name);
  } else {
    const json obj = parse_json_line(path, 1, line);
    for (const auto& [key, value] : obj.items())
      if (key != "segment_id" && key != "system_id") names.push_back(key);
    std::sort(names.begin(), names.end());  // JSON objects carry no column order
  }
  if (names.empty()) throw InputError(path + ": no metric columns found");
  return names;
}

void save_metric_scores(const std::string& path, const MetricMatrix& matrix,
                        TableFormat format) {
  std::ofstream out = open_output(path);
  if (format == TableFormat::tsv) {
    out << "segment_id\tsystem_id";
    for (const std::string& name : matrix.metric_names) out << '\t' << name;
    out << '\n';
    for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
      out << matrix.row_keys[i].segment_id << '\t' << matrix.row_keys[i].system_id;
      for (Eigen::Index j = 0; j < matrix.cols(); ++j)
        out << '\t' << format_double(matrix.scores(i, j));
      out << '\n';
    }
  } else {
    for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
      ordered_json obj;
      obj["segment_id"] = matrix.row_keys[i].segment_id;
      obj["system_id"] = matrix.row_keys[i].system_id;
      for (Eigen::Index j = 0; j < matrix.cols(); ++j)
        obj[matrix.metric_names[j]] = matrix.scores(i, j);
      out << obj.dump() << '\n';
    }
  }
}

namespace {

constexpr char kEmbeddingMagic[4] = {'D', 'M', 'M', 'E'};
constexpr std::uint32_t kEmbeddingVersion = 1;

template <class T>
T read_le(std::istream& in, const std::string& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw InputError(path + ": truncated embedding file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_same_v<T, float>) {
    std::uint32_t bits = static_cast<std::uint32_t>(v);
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
  } else {
    return static_cast<T>(v);
  }
}

template <class T>
void write_le(std::ostream& out, T value) {
  std::uint64_t v;
  if constexpr (std::is_same_v<T, float>) {
    std::uint32_t bits;
    std::memcpy(&bits, &value, sizeof(bits));
    v = bits;
  } else {
    v = static_cast<std::uint64_t>(value);
  }
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

EmbeddingTable load_embeddings_binary(const std::string& path) {
  std::ifstream in = open_input(path, /*binary=*/true);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kEmbeddingMagic, 4) != 0)
    throw InputError(path + ": bad magic, not a packed embedding file");
  const auto version = read_le<std::uint32_t>(in, path);
  if (version != kEmbeddingVersion)
    throw InputError(path + ": unsupported embedding format version " + std::to_string(version));
  const auto dim = read_le<std::uint32_t>(in, path);
  const auto count = read_le<std::uint32_t>(in, path);
  if (dim == 0) throw InputError(path + ": embedding dimension must be positive");

  EmbeddingTable table;
  table.dim = static_cast<int>(dim);
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto id_len = read_le<std::uint16_t>(in, path);
    std::string id(id_len, '\0');
    if (!in.read(id.data(), id_len)) throw InputError(path + ": truncated embedding file");
    Eigen::VectorXd vec(dim);
    for (std::uint32_t j = 0; j < dim; ++j) vec[j] = static_cast<double>(read_le<float>(in, path));
    if (!table.vectors.emplace(std::move(id), std::move(vec)).second)
      throw InputError(path + ": duplicate segment_id in embeddings");
  }
  return table;
}

EmbeddingTable load_embeddings_jsonl(const std::string& path) {
  std::ifstream in = open_input(path);
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const json obj = parse_json_line(path, line_no, line);
    const std::string id = require_string(obj, "segment_id", path, line_no);
    if (!obj.contains("vector") || !obj.at("vector").is_array())
      throw InputError(path + ":" + std::to_string(line_no) + ": missing 'vector' array");
    const json& arr = obj.at("vector");
    Eigen::VectorXd vec(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t j = 0; j < arr.size(); ++j) {
      if (!arr[j].is_number())
        throw InputError(path + ":" + std::to_string(line_no) + ": non-numeric vector entry");
      vec[static_cast<Eigen::Index>(j)] = arr[j].get<double>();
    }
    if (table.dim == 0) {
      if (vec.size() == 0)
        throw InputError(path + ":" + std::to_string(line_no) + ": empty embedding vector");
      table.dim = static_cast<int>(vec.size());
    } else if (vec.size() != table.dim) {
      throw InputError(path + ":" + std::to_string(line_no) + ": dimension mismatch: got " +
                       std::to_string(vec.size()) + ", expected " + std::to_string(table.dim));
    }
    if (!table.vectors.emplace(id, std::move(vec)).second)
      throw InputError(path + ":" + std::to_string(line_no) + ": duplicate segment_id '" + id +
                       "'");
  }
  return table;
}

}  // namespace

EmbeddingTable load_embeddings(const std::string& path, bool renormalize) {
  bool binary = false;
  {
    std::ifstream probe = open_input(path, /*binary=*/true);
    char magic[4] = {0, 0, 0, 0};
    probe.read(magic, 4);
    binary = probe.gcount() == 4 && std::memcmp(magic, kEmbeddingMagic, 4) == 0;
  }
  EmbeddingTable table = binary ? load_embeddings_binary(path) : load_embeddings_jsonl(path);

  if (renormalize) {
    for (auto& [id, vec] : table.vectors) {
      const double norm = vec.norm();
      if (norm == 0.0)
        throw InputError(path + ": zero-norm vector for segment_id '" + id +
                         "' cannot be renormalized");
      vec /= norm;
    }
    table.normalized = true;
  } else {
    bool all_unit = !table.vectors.empty();
    for (const auto& [id, vec] : table.vectors) {
      if (std::abs(vec.norm() - 1.0) > 1e-6) {
        all_unit = false;
        break;
      }
    }
    table.normalized = all_unit;
  }
  return table;
}

void save_embeddings(const std::string& path, const EmbeddingTable& table,
                     EmbeddingFormat format) {
  if (format == EmbeddingFormat::jsonl) {
    std::ofstream out = open_output(path);
    for (const auto& [id, vec] : table.vectors) {
      ordered_json obj;
      obj["segment_id"] = id;
      ordered_json arr = ordered_json::array();
      for (Eigen::Index j = 0; j < vec.size(); ++j) arr.push_back(vec[j]);
      obj["vector"] = std::move(arr);
      out << obj.dump() << '\n';
    }
    return;
  }
  std::ofstream out = open_output(path, /*binary=*/true);
  out.write(kEmbeddingMagic, 4);
  write_le<std::uint32_t>(out, kEmbeddingVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.vectors.size()));
  for (const auto& [id, vec] : table.vectors) {
    if (id.size() > UINT16_MAX) throw InputError("segment_id too long for binary embedding format");
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    for (Eigen::Index j = 0; j < vec.size(); ++j)
      write_le<float>(out, static_cast<float>(vec[j]));
  }
}

std::vector<Instance> split_dataset(std::vector<Instance> instances, double train_frac,
                                    std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw InputError("train_frac must be in (0, 1)");
  for (const Instance& inst : instances)
    if (inst.split != Split::unassigned) return instances;  // pre-assigned: pass through

  std::map<int, std::set<std::string>> segments_by_year;
  for (const Instance& inst : instances) segments_by_year[inst.year].insert(inst.segment_id);

  std::map<int, std::map<std::string, Split>> assignment;
  for (const auto& [year, segment_set] : segments_by_year) {
    std::vector<std::string> segments(segment_set.begin(), segment_set.end());
    Rng rng(derive_seed(seed, "split:year:" + std::to_string(year)));
    rng.shuffle(segments);
    const std::size_t n = segments.size();
    std::size_t n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    else n_train = n;
    auto& year_map = assignment[year];
    for (std::size_t i = 0; i < n; ++i)
      year_map[segments[i]] = i < n_train ? Split::train : Split::val;
  }

  for (Instance& inst : instances) inst.split = assignment[inst.year][inst.segment_id];
  return instances;
}

namespace {

std::string join_keys(const std::vector<RowKey>& keys) {
  std::string out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (i) out += ", ";
    out += "(" + keys[i].segment_id + ", " + keys[i].system_id + ")";
  }
  return out;
}

Dataset assemble_impl(std::vector<Instance> instances, MetricMatrix metrics,
                      EmbeddingTable embeddings, bool check_embeddings) {
  std::map<RowKey, std::size_t> instance_by_key;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    RowKey key{instances[i].segment_id, instances[i].system_id};
    if (!instance_by_key.emplace(std::move(key), i).second)
      throw InputError("duplicate (segment_id, system_id) = (" + instances[i].segment_id + ", " +
                       instances[i].system_id +
                       ") across instances; year-suffix segment ids when merging years");
  }

  if (static_cast<std::size_t>(metrics.rows()) != metrics.row_keys.size())
    throw InputError("metric matrix row/key count mismatch");

  std::vector<Eigen::Index> metric_row_of(instances.size(),
                                          static_cast<Eigen::Index>(-1));
  std::vector<RowKey> orphans;
  for (std::size_t r = 0; r < metrics.row_keys.size(); ++r) {
    auto it = instance_by_key.find(metrics.row_keys[r]);
    if (it == instance_by_key.end()) {
      if (orphans.size() < 10) orphans.push_back(metrics.row_keys[r]);
      continue;
    }
    metric_row_of[it->second] = static_cast<Eigen::Index>(r);
  }
  if (!orphans.empty())
    throw InputError("metric rows with no matching instance (orphans, showing up to 10): " +
                     join_keys(orphans));

  std::vector<RowKey> missing;
  for (std::size_t i = 0; i < instances.size(); ++i)
    if (metric_row_of[i] < 0 && missing.size() < 10)
      missing.push_back({instances[i].segment_id, instances[i].system_id});
  if (!missing.empty())
    throw InputError("instances without a metric row (showing up to 10): " + join_keys(missing));

  if (check_embeddings) {
    std::vector<RowKey> no_embedding;
    std::set<std::string> checked;
    for (const Instance& inst : instances) {
      if (!checked.insert(inst.segment_id).second) continue;
      if (!embeddings.vectors.count(inst.segment_id) && no_embedding.size() < 10)
        no_embedding.push_back({inst.segment_id, ""});
    }
    if (!no_embedding.empty()) {
      std::string ids;
      for (std::size_t i = 0; i < no_embedding.size(); ++i) {
        if (i) ids += ", ";
        ids += no_embedding[i].segment_id;
      }
      throw InputError("segments without embeddings (showing up to 10): " + ids);
    }
  }

  // Reorder metric rows to instance order.
  MetricMatrix aligned;
  aligned.metric_names = metrics.metric_names;
  aligned.scores.resize(static_cast<Eigen::Index>(instances.size()), metrics.cols());
  aligned.row_keys.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    aligned.scores.row(static_cast<Eigen::Index>(i)) = metrics.scores.row(metric_row_of[i]);
    aligned.row_keys.push_back({instances[i].segment_id, instances[i].system_id});
  }

  return Dataset{std::move(instances), std::move(aligned), std::move(embeddings)};
}

}  // namespace

Dataset assemble(std::vector<Instance> instances, MetricMatrix metrics,
                 EmbeddingTable embeddings) {
  return assemble_impl(std::move(instances), std::move(metrics), std::move(embeddings), true);
}

Dataset assemble(std::vector<Instance> instances, MetricMatrix metrics) {
  return assemble_impl(std::move(instances), std::move(metrics), EmbeddingTable{}, false);
}

}  // namespace dmm
