#pragma once

// Accuracy and four group-fairness metrics, all computed from a single
// (group, actual, predicted) count tensor.
//
// Conventions:
//   * SER is max_g Error_g / min_g Error_g, so larger means less balanced.
//   * Variances are population variances over the groups that take part.
//   * For BA, g_c counts records of group g that were predicted as class c.
//   * Classes with no eligible groups are left out of the EO and BA means.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbfed/error.hpp"

namespace dbfed {

struct PredictionRecord {
  std::size_t predicted = 0;
  std::size_t actual = 0;
  std::size_t group = 0;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// counts[g][y][y_hat], flattened.
class CountTensor {
 public:
  CountTensor(std::size_t num_classes, std::size_t num_groups)
      : n_(num_classes), d_(num_groups), counts_(num_groups * num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return n_; }
  std::size_t num_groups() const { return d_; }

  std::uint64_t& at(std::size_t group, std::size_t actual, std::size_t predicted) {
    return counts_[(group * n_ + actual) * n_ + predicted];
  }
  std::uint64_t at(std::size_t group, std::size_t actual, std::size_t predicted) const {
    return counts_[(group * n_ + actual) * n_ + predicted];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  std::uint64_t group_total(std::size_t group) const {
    std::uint64_t t = 0;
    for (std::size_t y = 0; y < n_; ++y)
      for (std::size_t p = 0; p < n_; ++p) t += at(group, y, p);
    return t;
  }

  std::uint64_t group_correct(std::size_t group) const {
    std::uint64_t t = 0;
    for (std::size_t y = 0; y < n_; ++y) t += at(group, y, y);
    return t;
  }

  /// Records of `group` whose ground truth is `actual`.
  std::uint64_t actual_total(std::size_t group, std::size_t actual) const {
    std::uint64_t t = 0;
    for (std::size_t p = 0; p < n_; ++p) t += at(group, actual, p);
    return t;
  }

  /// Records of `group` predicted as `predicted` (g_c).
  std::uint64_t predicted_total(std::size_t group, std::size_t predicted) const {
    std::uint64_t t = 0;
    for (std::size_t y = 0; y < n_; ++y) t += at(group, y, predicted);
    return t;
  }

  CountTensor& operator+=(const CountTensor& other) {
    if (other.n_ != n_ || other.d_ != d_) throw RejectedInput("CountTensor: shape mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  friend bool operator==(const CountTensor&, const CountTensor&) = default;

 private:
  std::size_t n_;
  std::size_t d_;
  std::vector<std::uint64_t> counts_;
};

inline CountTensor tally(std::span<const PredictionRecord> records, std::size_t num_classes,
                         std::size_t num_groups) {
  CountTensor t(num_classes, num_groups);
  for (const auto& r : records) {
    if (r.predicted >= num_classes || r.actual >= num_classes || r.group >= num_groups)
      throw RejectedInput("tally: record index out of range (predicted=" +
                          std::to_string(r.predicted) + ", actual=" + std::to_string(r.actual) +
                          ", group=" + std::to_string(r.group) + ")");
    ++t.at(r.group, r.actual, r.predicted);
  }
  return t;
}

/// Population variance.
inline double population_variance(std::span<const double> xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return sq / static_cast<double>(xs.size());
}

inline double accuracy(const CountTensor& t) {
  const auto total = t.total();
  if (total == 0) throw UndefinedMetric("accuracy: no records");
  std::uint64_t correct = 0;
  for (std::size_t g = 0; g < t.num_groups(); ++g) correct += t.group_correct(g);
  return static_cast<double>(correct) / static_cast<double>(total);
}

/// Error_g for every group; requires each group to be present.
inline std::vector<double> group_error_rates(const CountTensor& t) {
  std::vector<double> errors;
  for (std::size_t g = 0; g < t.num_groups(); ++g) {
    const auto n = t.group_total(g);
    if (n == 0) throw UndefinedMetric("group " + std::to_string(g) + " has no records");
    errors.push_back(static_cast<double>(n - t.group_correct(g)) / static_cast<double>(n));
  }
  return errors;
}

inline double skewed_error_ratio(const CountTensor& t) {
  const auto errors = group_error_rates(t);
  const auto [lo, hi] = std::minmax_element(errors.begin(), errors.end());
  if (*hi == 0.0) return 1.0;
  if (*lo == 0.0) return std::numeric_limits<double>::infinity();
  return *hi / *lo;
}

/// Per-group recall P(y_hat = c | S = g, Y = c); nullopt where group g has no
/// ground-truth samples of class c. Indexed [g * N + c].
inline std::vector<std::optional<double>> group_recall_rates(const CountTensor& t) {
  std::vector<std::optional<double>> rates(t.num_groups() * t.num_classes());
  for (std::size_t g = 0; g < t.num_groups(); ++g)
    for (std::size_t c = 0; c < t.num_classes(); ++c)
      if (const auto n = t.actual_total(g, c); n > 0)
        rates[g * t.num_classes() + c] =
            static_cast<double>(t.at(g, c, c)) / static_cast<double>(n);
  return rates;
}

inline double equal_opportunity(const CountTensor& t) {
  if (t.total() == 0) throw UndefinedMetric("equal opportunity: no records");
  const auto rates = group_recall_rates(t);
  double sum = 0.0;
  std::size_t classes = 0;
  std::vector<double> column;
  for (std::size_t c = 0; c < t.num_classes(); ++c) {
    column.clear();
    for (std::size_t g = 0; g < t.num_groups(); ++g)
      if (const auto& r = rates[g * t.num_classes() + c]) column.push_back(*r);
    if (column.size() < 2) continue;
    sum += population_variance(column);
    ++classes;
  }
  if (classes == 0)
    throw UndefinedMetric("equal opportunity: no class is observed in two or more groups");
  return sum / static_cast<double>(classes);
}

inline double bias_amplification(const CountTensor& t) {
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < t.num_classes(); ++c) {
    std::uint64_t largest = 0, total = 0;
    for (std::size_t g = 0; g < t.num_groups(); ++g) {
      const auto gc = t.predicted_total(g, c);
      largest = std::max(largest, gc);
      total += gc;
    }
    if (total == 0) continue;
    sum += static_cast<double>(largest) / static_cast<double>(total);
    ++classes;
  }
  if (classes == 0) throw UndefinedMetric("bias amplification: no predictions");
  return sum / static_cast<double>(classes) - 1.0 / static_cast<double>(t.num_groups());
}

/// P(y_hat = c | S = g), indexed [g * N + c]; requires each group to be present.
inline std::vector<double> group_prediction_rates(const CountTensor& t) {
  std::vector<double> rates(t.num_groups() * t.num_classes());
  for (std::size_t g = 0; g < t.num_groups(); ++g) {
    const auto n = t.group_total(g);
    if (n == 0) throw UndefinedMetric("group " + std::to_string(g) + " has no records");
    for (std::size_t c = 0; c < t.num_classes(); ++c)
      rates[g * t.num_classes() + c] =
          static_cast<double>(t.predicted_total(g, c)) / static_cast<double>(n);
  }
  return rates;
}

inline double demographic_parity(const CountTensor& t) {
  const auto rates = group_prediction_rates(t);
  double sum = 0.0;
  std::vector<double> column(t.num_groups());
  for (std::size_t c = 0; c < t.num_classes(); ++c) {
    for (std::size_t g = 0; g < t.num_groups(); ++g) column[g] = rates[g * t.num_classes() + c];
    sum += population_variance(column);
  }
  return sum / static_cast<double>(t.num_classes());
}

/// Metrics that cannot be defined on the given records are left empty.
struct FairnessReport {
  std::size_t num_classes = 0;
  std::size_t num_groups = 0;
  std::uint64_t num_records = 0;

  std::optional<double> acc;
  std::optional<double> ser;
  std::optional<double> eo;
  std::optional<double> ba;
  std::optional<double> dp;

  std::vector<std::optional<double>> per_group_error;  // Error_g
  std::vector<std::optional<double>> recall_rates;     // [g * N + c], backs EO
  std::vector<std::optional<double>> prediction_rates; // [g * N + c], backs DP

  friend bool operator==(const FairnessReport&, const FairnessReport&) = default;
};

namespace detail {

template <class F>
std::optional<double> defined_or_absent(F&& metric) {
  try {
    return metric();
  } catch (const UndefinedMetric&) {
    return std::nullopt;
  }
}

}  // namespace detail

inline FairnessReport full_report(const CountTensor& t) {
  if (t.total() == 0) throw UndefinedMetric("full report: no records");
  FairnessReport r;
  r.num_classes = t.num_classes();
  r.num_groups = t.num_groups();
  r.num_records = t.total();
  r.acc = detail::defined_or_absent([&] { return accuracy(t); });
  r.ser = detail::defined_or_absent([&] { return skewed_error_ratio(t); });
  r.eo = detail::defined_or_absent([&] { return equal_opportunity(t); });
  r.ba = detail::defined_or_absent([&] { return bias_amplification(t); });
  r.dp = detail::defined_or_absent([&] { return demographic_parity(t); });

  const auto n = t.num_classes();
  r.per_group_error.resize(t.num_groups());
  r.prediction_rates.resize(t.num_groups() * n);
  for (std::size_t g = 0; g < t.num_groups(); ++g) {
    const auto size = t.group_total(g);
    if (size == 0) continue;
    r.per_group_error[g] =
        static_cast<double>(size - t.group_correct(g)) / static_cast<double>(size);
    for (std::size_t c = 0; c < n; ++c)
      r.prediction_rates[g * n + c] =
          static_cast<double>(t.predicted_total(g, c)) / static_cast<double>(size);
  }
  r.recall_rates = group_recall_rates(t);
  return r;
}

inline FairnessReport full_report(std::span<const PredictionRecord> records,
                                  std::size_t num_classes, std::size_t num_groups) {
  if (records.empty()) throw UndefinedMetric("full report: no records");
  return full_report(tally(records, num_classes, num_groups));
}

/// Per-metric mean over several reports, skipping reports where the metric is
/// absent. Used to score the local-only baseline across clients.
inline FairnessReport average_reports(std::span<const FairnessReport> reports) {
  if (reports.empty()) throw UndefinedMetric("average_reports: no reports");
  FairnessReport out;
  out.num_classes = reports.front().num_classes;
  out.num_groups = reports.front().num_groups;
  out.num_records = reports.front().num_records;

  auto mean_of = [&](auto member) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : reports)
      if (const auto& v = r.*member) {
        sum += *v;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  auto mean_vec = [&](auto member) {
    std::vector<std::optional<double>> v((reports.front().*member).size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& r : reports)
        if (const auto& x = (r.*member)[i]) {
          sum += *x;
          ++n;
        }
      if (n > 0) v[i] = sum / static_cast<double>(n);
    }
    return v;
  };
  out.acc = mean_of(&FairnessReport::acc);
  out.ser = mean_of(&FairnessReport::ser);
  out.eo = mean_of(&FairnessReport::eo);
  out.ba = mean_of(&FairnessReport::ba);
  out.dp = mean_of(&FairnessReport::dp);
  out.per_group_error = mean_vec(&FairnessReport::per_group_error);
  out.recall_rates = mean_vec(&FairnessReport::recall_rates);
  out.prediction_rates = mean_vec(&FairnessReport::prediction_rates);
  return out;
}

}  // namespace dbfed
