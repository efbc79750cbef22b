#pragma once

// Datasets: seeded synthetic generator with group-correlated labels and
// group-shifted features, CSV ingestion/emission, splitting and partitioning.
//
// CSV dataset format:
//   feature_0,...,feature_{m-1},target,group
//   one example per row, LF line endings. Floats are written in the shortest
//   decimal form that parses back to the same bits.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "dbfed/debias_head.hpp"
#include "dbfed/error.hpp"
#include "dbfed/metrics.hpp"
#include "dbfed/random.hpp"

namespace dbfed {

struct Dataset {
  std::vector<LabeledExample> examples;
  std::size_t num_classes = 2;
  std::size_t num_groups = 1;
  std::size_t feature_dim = 0;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  /// Same shape, no examples.
  Dataset empty_like() const { return {{}, num_classes, num_groups, feature_dim}; }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SyntheticSpec {
  std::size_t num_classes = 2;
  std::size_t num_groups = 2;
  std::size_t feature_dim = 8;
  std::size_t samples_per_group = 1000;
  double bias_strength = 0.8;  // 0 = labels independent of group, 1 = fully skewed
  double group_shift = 1.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
    if (num_groups < 1) throw ConfigError("synthetic: num_groups must be >= 1");
    if (feature_dim < 1) throw ConfigError("synthetic: feature_dim must be >= 1");
    if (samples_per_group < 1) throw ConfigError("synthetic: samples_per_group must be >= 1");
    if (!(bias_strength >= 0.0 && bias_strength <= 1.0))
      throw ConfigError("synthetic: bias_strength must lie in [0, 1]");
    if (!(group_shift >= 0.0) || !std::isfinite(group_shift))
      throw ConfigError("synthetic: group_shift must be finite and non-negative");
    if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma))
      throw ConfigError("synthetic: noise_sigma must be positive");
  }
};

/// Class distribution of group g: uniform mixed with a point mass on class
/// g mod N, giving that class probability 1/N + beta * (1 - 1/N).
inline std::vector<double> synthetic_class_distribution(const SyntheticSpec& spec,
                                                        std::size_t group) {
  const auto n = static_cast<double>(spec.num_classes);
  std::vector<double> p(spec.num_classes, (1.0 - spec.bias_strength) / n);
  p[group % spec.num_classes] += spec.bias_strength;
  return p;
}

namespace detail {

inline std::vector<double> random_unit_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = standard_normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace detail

/// features = unit class centroid + group_shift * unit group offset + noise.
/// Centroids and offsets are drawn from the same seeded stream as the samples.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<std::vector<double>> centroids, offsets;
  for (std::size_t c = 0; c < spec.num_classes; ++c)
    centroids.push_back(detail::random_unit_vector(rng, spec.feature_dim));
  for (std::size_t g = 0; g < spec.num_groups; ++g)
    offsets.push_back(detail::random_unit_vector(rng, spec.feature_dim));

  Dataset ds{{}, spec.num_classes, spec.num_groups, spec.feature_dim};
  ds.examples.reserve(spec.samples_per_group * spec.num_groups);
  for (std::size_t g = 0; g < spec.num_groups; ++g) {
    const auto p = synthetic_class_distribution(spec, g);
    for (std::size_t i = 0; i < spec.samples_per_group; ++i) {
      const double u = uniform01(rng);
      std::size_t cls = 0;
      double cdf = p[0];
      while (cls + 1 < spec.num_classes && u >= cdf) cdf += p[++cls];

      LabeledExample ex;
      ex.target = cls;
      ex.group = g;
      ex.features.resize(spec.feature_dim);
      for (std::size_t j = 0; j < spec.feature_dim; ++j)
        ex.features[j] = centroids[cls][j] + spec.group_shift * offsets[g][j] +
                         spec.noise_sigma * standard_normal(rng);
      ds.examples.push_back(std::move(ex));
    }
  }
  return ds;
}

/// Shortest decimal text that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

inline double parse_double_cell(std::string_view cell, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || cell.empty())
    throw ParseError("not a number: '" + std::string(cell) + "'", line);
  return v;
}

inline std::size_t parse_index_cell(std::string_view cell, std::size_t line) {
  std::size_t v = 0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || cell.empty())
    throw ParseError("not a non-negative integer: '" + std::string(cell) + "'", line);
  return v;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Data, "cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Runtime, "cannot open '" + path + "' for writing");
  return out;
}

}  // namespace detail

inline void write_csv(std::ostream& out, const Dataset& ds) {
  for (std::size_t j = 0; j < ds.feature_dim; ++j) out << "feature_" << j << ',';
  out << "target,group\n";
  for (const auto& ex : ds.examples) {
    for (double f : ex.features) out << format_double(f) << ',';
    out << ex.target << ',' << ex.group << '\n';
  }
}

inline void save_csv(const std::string& path, const Dataset& ds) {
  auto out = detail::open_output(path);
  write_csv(out, ds);
  if (!out) throw Error(ErrorKind::Runtime, "write to '" + path + "' failed");
}

/// Parses a dataset CSV. Rows with labels outside [0, N) x [0, D) are parse
/// errors carrying the 1-based line number (the header is line 1).
inline Dataset read_csv(std::istream& in, std::size_t num_classes, std::size_t num_groups) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header row", 1);
  const auto header = detail::split_csv_line(detail::strip_cr(line));
  if (header.size() < 2 || header[header.size() - 2] != "target" || header.back() != "group")
    throw ParseError("header must end with 'target,group'", 1);
  const std::size_t m = header.size() - 2;
  for (std::size_t j = 0; j < m; ++j)
    if (header[j] != "feature_" + std::to_string(j))
      throw ParseError("expected column 'feature_" + std::to_string(j) + "', got '" +
                           std::string(header[j]) + "'",
                       1);

  Dataset ds{{}, num_classes, num_groups, m};
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::strip_cr(line);
    if (text.empty()) continue;
    const auto cells = detail::split_csv_line(text);
    if (cells.size() != m + 2)
      throw ParseError("expected " + std::to_string(m + 2) + " columns, got " +
                           std::to_string(cells.size()),
                       line_no);
    LabeledExample ex;
    ex.features.reserve(m);
    for (std::size_t j = 0; j < m; ++j)
      ex.features.push_back(detail::parse_double_cell(cells[j], line_no));
    ex.target = detail::parse_index_cell(cells[m], line_no);
    ex.group = detail::parse_index_cell(cells[m + 1], line_no);
    if (ex.target >= num_classes)
      throw ParseError("target " + std::to_string(ex.target) + " outside [0, " +
                           std::to_string(num_classes) + ")",
                       line_no);
    if (ex.group >= num_groups)
      throw ParseError("group " + std::to_string(ex.group) + " outside [0, " +
                           std::to_string(num_groups) + ")",
                       line_no);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

inline Dataset load_csv(const std::string& path, std::size_t num_classes, std::size_t num_groups) {
  auto in = detail::open_input(path);
  return read_csv(in, num_classes, num_groups);
}

/// Prediction log: header `predicted,actual,group`.
inline std::vector<PredictionRecord> read_predictions_csv(std::istream& in,
                                                          std::size_t num_classes,
                                                          std::size_t num_groups) {
  std::string line;
  if (!std::getline(in, line) || detail::strip_cr(line) != "predicted,actual,group")
    throw ParseError("header must be 'predicted,actual,group'", 1);
  std::vector<PredictionRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::strip_cr(line);
    if (text.empty()) continue;
    const auto cells = detail::split_csv_line(text);
    if (cells.size() != 3)
      throw ParseError("expected 3 columns, got " + std::to_string(cells.size()), line_no);
    PredictionRecord r{detail::parse_index_cell(cells[0], line_no),
                       detail::parse_index_cell(cells[1], line_no),
                       detail::parse_index_cell(cells[2], line_no)};
    if (r.predicted >= num_classes || r.actual >= num_classes)
      throw ParseError("class index outside [0, " + std::to_string(num_classes) + ")", line_no);
    if (r.group >= num_groups)
      throw ParseError("group index outside [0, " + std::to_string(num_groups) + ")", line_no);
    records.push_back(r);
  }
  return records;
}

inline std::vector<PredictionRecord> load_predictions_csv(const std::string& path,
                                                          std::size_t num_classes,
                                                          std::size_t num_groups) {
  auto in = detail::open_input(path);
  return read_predictions_csv(in, num_classes, num_groups);
}

inline void write_predictions_csv(std::ostream& out, std::span<const PredictionRecord> records) {
  out << "predicted,actual,group\n";
  for (const auto& r : records) out << r.predicted << ',' << r.actual << ',' << r.group << '\n';
}

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(std::span<std::size_t>(idx), rng);
  return idx;
}

}  // namespace detail

/// Seeded shuffle, then K contiguous parts; the first size % K parts get one
/// extra example.
inline std::vector<Dataset> partition(const Dataset& ds, std::size_t num_parts,
                                      std::uint64_t seed) {
  if (num_parts == 0) throw ConfigError("partition: number of parts must be positive");
  if (ds.size() < num_parts)
    throw ConfigError("partition: " + std::to_string(ds.size()) + " examples cannot fill " +
                      std::to_string(num_parts) + " parts");
  const auto idx = detail::shuffled_indices(ds.size(), seed);
  const std::size_t base = ds.size() / num_parts, extra = ds.size() % num_parts;
  std::vector<Dataset> parts;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < num_parts; ++k) {
    auto part = ds.empty_like();
    const std::size_t count = base + (k < extra ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i) part.examples.push_back(ds.examples[idx[pos++]]);
    parts.push_back(std::move(part));
  }
  return parts;
}

/// Returns (train, test); the test part holds round(size * test_fraction) examples.
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction,
                                                    std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("train_test_split: test fraction must lie in (0, 1)");
  const auto idx = detail::shuffled_indices(ds.size(), seed);
  const auto n_test =
      static_cast<std::size_t>(std::llround(static_cast<double>(ds.size()) * test_fraction));
  auto train = ds.empty_like();
  auto test = ds.empty_like();
  for (std::size_t i = 0; i < idx.size(); ++i)
    (i < n_test ? test : train).examples.push_back(ds.examples[idx[i]]);
  return {std::move(train), std::move(test)};
}

}  // namespace dbfed
