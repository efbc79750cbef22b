#pragma once

// Config-driven experiment runner behind the `dbfed` command line tool.
//
// Config files are flat `section.key = value` lines; `#` starts a comment.
// Unknown or repeated keys are rejected. Results are JSON lines: one object
// per evaluation, then a final object holding the last report of every mode.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dbfed/data.hpp"
#include "dbfed/error.hpp"
#include "dbfed/federation.hpp"
#include "dbfed/metrics.hpp"
#include "dbfed/nn.hpp"
#include "json.hpp"

namespace dbfed {

using json = nlohmann::ordered_json;

inline std::string_view mode_name(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::FedAvgPlain: return "fedavg";
    case TrainingMode::LocalOnly: return "local";
    case TrainingMode::DBFed: return "dbfed";
  }
  return "?";
}

inline TrainingMode parse_mode(std::string_view name) {
  if (name == "fedavg") return TrainingMode::FedAvgPlain;
  if (name == "local") return TrainingMode::LocalOnly;
  if (name == "dbfed") return TrainingMode::DBFed;
  throw ConfigError("unknown mode '" + std::string(name) + "' (expected fedavg, local or dbfed)");
}

enum class DataSource { Synthetic, Csv };

struct ExperimentConfig {
  DataSource source = DataSource::Csv;
  bool has_synthetic = false;
  SyntheticSpec synthetic;
  std::string data_path;
  std::optional<std::size_t> data_num_classes;
  std::optional<std::size_t> data_num_groups;
  double test_fraction = 0.2;

  std::vector<std::size_t> hidden_widths{16};
  std::optional<std::size_t> model_num_classes;
  std::optional<std::size_t> model_num_groups;
  std::optional<HeadMode> head;  // unset: chosen per mode

  std::vector<TrainingMode> modes{TrainingMode::DBFed};
  // Defaults: 5 clients, batch 128, 3 local epochs, Adam lr 1e-4, decay 3e-4.
  FederationConfig federation;
  std::string output_path = "results.jsonl";
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || res.ec != std::errc() || res.ptr != value.data() + value.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  return v;
}

inline double parse_f64(const std::string& key, const std::string& value) {
  double v = 0.0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || res.ec != std::errc() || res.ptr != value.data() + value.size() ||
      !std::isfinite(v))
    throw ConfigError(key + ": expected a finite number, got '" + value + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) items.push_back(std::move(t));
  }
  return items;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::optional<std::string> source;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;

  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const auto line = detail::trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = detail::trim(std::string_view(line).substr(0, eq));
    const auto value = detail::trim(std::string_view(line).substr(eq + 1));
    if (!seen.insert(key).second)
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");

    auto u64 = [&] { return detail::parse_u64(key, value); };
    auto size = [&] { return static_cast<std::size_t>(detail::parse_u64(key, value)); };
    auto f64 = [&] { return detail::parse_f64(key, value); };

    if (key.starts_with("synthetic.")) cfg.has_synthetic = true;

    if (key == "data.source") source = value;
    else if (key == "data.path") cfg.data_path = value;
    else if (key == "data.num_classes") cfg.data_num_classes = size();
    else if (key == "data.num_groups") cfg.data_num_groups = size();
    else if (key == "data.test_fraction") cfg.test_fraction = f64();
    else if (key == "synthetic.num_classes") cfg.synthetic.num_classes = size();
    else if (key == "synthetic.num_groups") cfg.synthetic.num_groups = size();
    else if (key == "synthetic.feature_dim") cfg.synthetic.feature_dim = size();
    else if (key == "synthetic.samples_per_group") cfg.synthetic.samples_per_group = size();
    else if (key == "synthetic.bias_strength") cfg.synthetic.bias_strength = f64();
    else if (key == "synthetic.group_shift") cfg.synthetic.group_shift = f64();
    else if (key == "synthetic.noise_sigma") cfg.synthetic.noise_sigma = f64();
    else if (key == "synthetic.seed") cfg.synthetic.seed = u64();
    else if (key == "model.hidden_widths") {
      cfg.hidden_widths.clear();
      for (const auto& w : detail::split_list(value))
        cfg.hidden_widths.push_back(static_cast<std::size_t>(detail::parse_u64(key, w)));
    } else if (key == "model.num_classes") cfg.model_num_classes = size();
    else if (key == "model.num_groups") cfg.model_num_groups = size();
    else if (key == "model.head") {
      if (value == "plain") cfg.head = HeadMode::Plain;
      else if (value == "domain_independent") cfg.head = HeadMode::DomainIndependent;
      else if (value != "auto")
        throw ConfigError("model.head: expected auto, plain or domain_independent");
    } else if (key == "federation.modes" || key == "federation.mode") {
      cfg.modes.clear();
      for (const auto& m : detail::split_list(value)) cfg.modes.push_back(parse_mode(m));
      if (cfg.modes.empty()) throw ConfigError(key + ": no modes given");
    } else if (key == "federation.rounds") cfg.federation.rounds = size();
    else if (key == "federation.clients") cfg.federation.num_clients = size();
    else if (key == "federation.local_epochs") cfg.federation.local_epochs = size();
    else if (key == "federation.batch_size") cfg.federation.batch_size = size();
    else if (key == "federation.master_seed") cfg.federation.master_seed = u64();
    else if (key == "federation.parallel") cfg.federation.parallel_clients = detail::parse_bool(key, value);
    else if (key == "federation.eval_every") cfg.federation.eval_every = size();
    else if (key == "optimizer.kind") {
      if (value == "adam") cfg.federation.optimizer.kind = OptimizerKind::Adam;
      else if (value == "sgd") cfg.federation.optimizer.kind = OptimizerKind::Sgd;
      else throw ConfigError("optimizer.kind: expected adam or sgd");
    } else if (key == "optimizer.learning_rate") cfg.federation.optimizer.learning_rate = f64();
    else if (key == "optimizer.weight_decay") cfg.federation.optimizer.weight_decay = f64();
    else if (key == "optimizer.beta1") cfg.federation.optimizer.beta1 = f64();
    else if (key == "optimizer.beta2") cfg.federation.optimizer.beta2 = f64();
    else if (key == "optimizer.epsilon") cfg.federation.optimizer.epsilon = f64();
    else if (key == "output.path") cfg.output_path = value;
    else
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }

  if (!source) cfg.source = cfg.has_synthetic ? DataSource::Synthetic : DataSource::Csv;
  else if (*source == "synthetic") cfg.source = DataSource::Synthetic;
  else if (*source == "csv") cfg.source = DataSource::Csv;
  else throw ConfigError("data.source: expected synthetic or csv");
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Target/group cardinalities implied by the data section.
inline std::pair<std::size_t, std::size_t> data_cardinality(const ExperimentConfig& cfg) {
  if (cfg.source == DataSource::Synthetic)
    return {cfg.synthetic.num_classes, cfg.synthetic.num_groups};
  if (!cfg.data_num_classes || !cfg.data_num_groups)
    throw ConfigError("csv data needs data.num_classes and data.num_groups");
  return {*cfg.data_num_classes, *cfg.data_num_groups};
}

/// Cross-field checks that do not need the data itself.
inline void validate(const ExperimentConfig& cfg) {
  if (cfg.source == DataSource::Synthetic) cfg.synthetic.validate();
  else if (cfg.data_path.empty()) throw ConfigError("csv data needs data.path");
  const auto [n, d] = data_cardinality(cfg);
  if (cfg.model_num_classes && *cfg.model_num_classes != n)
    throw ConfigError("model.num_classes disagrees with the data (" + std::to_string(n) + ")");
  if (cfg.model_num_groups && *cfg.model_num_groups != d)
    throw ConfigError("model.num_groups disagrees with the data (" + std::to_string(d) + ")");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0))
    throw ConfigError("data.test_fraction must lie in (0, 1)");
  for (auto w : cfg.hidden_widths)
    if (w == 0) throw ConfigError("model.hidden_widths entries must be positive");
  for (auto mode : cfg.modes)
    if (cfg.head && *cfg.head != head_mode_for(mode))
      throw ConfigError(std::string("model.head conflicts with mode '") +
                        std::string(mode_name(mode)) + "'");
  cfg.federation.validate();
}

inline Dataset acquire_dataset(const ExperimentConfig& cfg) {
  if (cfg.source == DataSource::Synthetic) return generate_synthetic(cfg.synthetic);
  const auto [n, d] = data_cardinality(cfg);
  return load_csv(cfg.data_path, n, d);
}

inline ClassifierSpec classifier_for(const ExperimentConfig& cfg, const Dataset& data,
                                     TrainingMode mode) {
  ClassifierSpec spec{data.feature_dim, cfg.hidden_widths, data.num_classes, data.num_groups,
                      head_mode_for(mode)};
  spec.validate();
  return spec;
}

// Seeds for the data pipeline, derived from the master seed.
inline constexpr std::uint64_t kSplitStream = 3;
inline constexpr std::uint64_t kPartitionStream = 4;

/// Per-group class counts and modal classes for a generated dataset.
inline std::string dataset_summary(const Dataset& ds) {
  std::ostringstream out;
  out << "examples: " << ds.size() << " (features " << ds.feature_dim << ", classes "
      << ds.num_classes << ", groups " << ds.num_groups << ")\n";
  std::vector<std::vector<std::size_t>> counts(ds.num_groups,
                                               std::vector<std::size_t>(ds.num_classes, 0));
  for (const auto& ex : ds.examples) ++counts[ex.group][ex.target];
  for (std::size_t g = 0; g < ds.num_groups; ++g) {
    std::size_t total = 0;
    out << "group " << g << ":";
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      out << " class" << c << "=" << counts[g][c];
      total += counts[g][c];
    }
    const auto modal = static_cast<std::size_t>(
        std::max_element(counts[g].begin(), counts[g].end()) - counts[g].begin());
    out << " total=" << total << " modal=" << modal << "\n";
  }
  return out.str();
}

inline json optional_number(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  return *v;
}

inline json report_to_json(const FairnessReport& r) {
  json j;
  j["acc"] = optional_number(r.acc);
  j["ser"] = optional_number(r.ser);
  j["eo"] = optional_number(r.eo);
  j["ba"] = optional_number(r.ba);
  j["dp"] = optional_number(r.dp);
  json absent = json::array();
  for (auto [name, v] : {std::pair{"acc", &r.acc}, std::pair{"ser", &r.ser},
                         std::pair{"eo", &r.eo}, std::pair{"ba", &r.ba},
                         std::pair{"dp", &r.dp}})
    if (!*v) absent.push_back(name);
  j["absent"] = absent;
  j["num_records"] = r.num_records;
  json errors = json::array();
  for (const auto& e : r.per_group_error) errors.push_back(optional_number(e));
  j["per_group_error"] = errors;
  auto matrix = [&](const std::vector<std::optional<double>>& flat) {
    json m = json::array();
    for (std::size_t g = 0; g < r.num_groups; ++g) {
      json row = json::array();
      for (std::size_t c = 0; c < r.num_classes; ++c)
        row.push_back(optional_number(flat[g * r.num_classes + c]));
      m.push_back(row);
    }
    return m;
  };
  j["recall_rates"] = matrix(r.recall_rates);
  j["prediction_rates"] = matrix(r.prediction_rates);
  j["ser_convention"] = "max_error_over_min_error";
  return j;
}

/// The five headline metrics read back from a results file.
struct MetricRow {
  std::string label;
  std::optional<double> acc, ser, eo, ba, dp;
};

inline std::optional<double> metric_from_json(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (j[key].is_string()) {
    const auto s = j[key].get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(ErrorKind::Data, std::string("metric '") + key + "' has value '" + s + "'");
  }
  if (!j[key].is_number()) throw Error(ErrorKind::Data, std::string("metric '") + key + "' is not a number");
  return j[key].get<double>();
}

inline MetricRow row_from_report_json(std::string label, const json& report) {
  return {std::move(label), metric_from_json(report, "acc"), metric_from_json(report, "ser"),
          metric_from_json(report, "eo"), metric_from_json(report, "ba"),
          metric_from_json(report, "dp")};
}

/// Trains every configured mode and streams JSON lines to `out`.
/// Returns the final report per mode, in configured order.
inline std::vector<std::pair<TrainingMode, FairnessReport>> run_experiment(
    const ExperimentConfig& cfg, std::ostream& out) {
  validate(cfg);
  const auto data = acquire_dataset(cfg);
  const auto seed = cfg.federation.master_seed;
  auto [train, test] = train_test_split(data, cfg.test_fraction, derive_seed({seed, kSplitStream}));
  if (test.empty()) throw ConfigError("test split is empty; increase data size or test_fraction");
  const auto partitions =
      partition(train, cfg.federation.num_clients, derive_seed({seed, kPartitionStream}));

  std::vector<std::pair<TrainingMode, FairnessReport>> finals;
  for (auto mode : cfg.modes) {
    auto fed = cfg.federation;
    fed.mode = mode;
    const auto spec = classifier_for(cfg, data, mode);
    const auto result = run_federation(fed, partitions, spec, &test);
    for (const auto& snap : result.history) {
      json line;
      line["mode"] = mode_name(mode);
      line["round"] = snap.round;
      line["report"] = report_to_json(*snap.report);
      line["duration_seconds"] = snap.duration_seconds;
      out << line.dump() << '\n';
    }
    finals.emplace_back(mode, *result.history.back().report);
  }
  json last;
  last["final"] = true;
  json reports = json::object();
  for (const auto& [mode, report] : finals) reports[std::string(mode_name(mode))] = report_to_json(report);
  last["reports"] = reports;
  out << last.dump() << '\n';
  out.flush();
  return finals;
}

/// Rows of one results file: the reports of its final line, or the last
/// evaluation per mode when the run was cut short.
inline std::vector<MetricRow> read_results(std::istream& in, const std::string& source) {
  std::vector<MetricRow> rows;
  std::map<std::string, json> last_seen;
  std::vector<std::string> order;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(source + ": invalid JSON (" + e.what() + ")", line_no);
    }
    if (j.value("final", false)) {
      if (!j.contains("reports") || !j["reports"].is_object())
        throw ParseError(source + ": final line lacks 'reports'", line_no);
      rows.clear();
      for (const auto& [mode, report] : j["reports"].items())
        rows.push_back(row_from_report_json(mode, report));
      return rows;
    }
    if (!j.contains("mode") || !j.contains("report"))
      throw ParseError(source + ": record lacks 'mode' or 'report'", line_no);
    const auto mode = j["mode"].get<std::string>();
    if (!last_seen.contains(mode)) order.push_back(mode);
    last_seen[mode] = j["report"];
  }
  for (const auto& mode : order) rows.push_back(row_from_report_json(mode, last_seen[mode]));
  if (rows.empty()) throw ParseError(source + ": no evaluations found", line_no);
  return rows;
}

struct ComparisonTable {
  std::vector<MetricRow> rows;
  // best[r][m]: row r holds the best value of metric m (ACC, SER, EO, BA, DP).
  std::vector<std::array<bool, 5>> best;

  static constexpr std::array<const char*, 5> kColumns{"ACC", "SER", "EO", "BA", "DP"};
};

inline std::array<std::optional<double>, 5> metric_cells(const MetricRow& r) {
  return {r.acc, r.ser, r.eo, r.ba, r.dp};
}

/// Higher is better for ACC, lower for the fairness metrics. Ties are all
/// flagged; absent cells never are.
inline ComparisonTable compare_rows(std::vector<MetricRow> rows) {
  ComparisonTable table;
  table.rows = std::move(rows);
  table.best.assign(table.rows.size(), {});
  for (std::size_t m = 0; m < 5; ++m) {
    std::optional<double> best;
    for (const auto& r : table.rows)
      if (const auto v = metric_cells(r)[m])
        if (!best || (m == 0 ? *v > *best : *v < *best)) best = v;
    if (!best) continue;
    for (std::size_t i = 0; i < table.rows.size(); ++i)
      if (const auto v = metric_cells(table.rows[i])[m]; v && *v == *best) table.best[i][m] = true;
  }
  return table;
}

/// Reads every results file; rows are labelled by mode, prefixed with the
/// file stem when a mode appears in more than one file.
inline ComparisonTable compare_results(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("compare: at least one results file is required");
  std::vector<std::pair<std::string, MetricRow>> tagged;
  std::map<std::string, int> mode_count;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Data, "cannot open results file '" + path + "'");
    for (auto& row : read_results(in, path)) {
      ++mode_count[row.label];
      tagged.emplace_back(std::filesystem::path(path).stem().string(), std::move(row));
    }
  }
  std::vector<MetricRow> rows;
  for (auto& [stem, row] : tagged) {
    if (mode_count[row.label] > 1) row.label = stem + ":" + row.label;
    rows.push_back(std::move(row));
  }
  return compare_rows(std::move(rows));
}

inline std::string format_cell(const std::optional<double>& v, bool exact) {
  if (!v) return "NA";
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  if (exact) return format_double(*v);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.5f", *v);
  return buf;
}

/// Aligned text table; best cells carry a trailing '*'.
inline std::string render_table(const ComparisonTable& t) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"mode"});
  for (auto c : ComparisonTable::kColumns) cells.back().push_back(c);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    std::vector<std::string> row{t.rows[i].label};
    const auto vals = metric_cells(t.rows[i]);
    for (std::size_t m = 0; m < 5; ++m)
      row.push_back(format_cell(vals[m], false) + (t.best[i][m] ? "*" : ""));
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> width(6, 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) out << row[c] << std::string(width[c] - row[c].size(), ' ');
      else out << "  " << std::string(width[c] - row[c].size(), ' ') << row[c];
    }
    out << '\n';
  }
  return out.str();
}

/// CSV with columns mode,ACC,SER,EO,BA,DP,best; `best` lists the metrics the
/// row wins, separated by ';'.
inline std::string render_csv(const ComparisonTable& t) {
  std::ostringstream out;
  out << "mode,ACC,SER,EO,BA,DP,best\n";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    out << t.rows[i].label;
    const auto vals = metric_cells(t.rows[i]);
    std::string best;
    for (std::size_t m = 0; m < 5; ++m) {
      out << ',' << format_cell(vals[m], true);
      if (t.best[i][m]) best += (best.empty() ? "" : ";") + std::string(ComparisonTable::kColumns[m]);
    }
    out << ',' << best << '\n';
  }
  return out.str();
}

}  // namespace dbfed
