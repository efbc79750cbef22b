#pragma once

// Test-only reference computations. Nothing here calls into the library's
// numeric paths; each oracle recomputes its quantity from first principles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "dbfed/debias_head.hpp"
#include "dbfed/metrics.hpp"
#include "dbfed/nn.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

struct DenseLayer {
  Matrix w;  // [out][in]
  std::vector<double> b;
};

/// Unpacks the flat parameter vector layer by layer: out*in weights
/// (row = output unit), then out biases.
inline std::vector<DenseLayer> unpack(const std::vector<std::size_t>& widths,
                                      const std::vector<double>& flat) {
  std::vector<DenseLayer> layers;
  std::size_t pos = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer;
    layer.w.assign(widths[l + 1], std::vector<double>(widths[l]));
    for (auto& row : layer.w)
      for (auto& v : row) v = flat.at(pos++);
    layer.b.resize(widths[l + 1]);
    for (auto& v : layer.b) v = flat.at(pos++);
    layers.push_back(std::move(layer));
  }
  return layers;
}

/// Step-by-step matrix evaluation with ReLU between layers.
inline std::vector<double> mlp_logits(const std::vector<std::size_t>& widths,
                                      const std::vector<double>& flat,
                                      const std::vector<double>& x) {
  const auto layers = unpack(widths, flat);
  std::vector<double> a = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<double> z(layers[l].b);
    for (std::size_t o = 0; o < z.size(); ++o)
      for (std::size_t i = 0; i < a.size(); ++i) z[o] += layers[l].w[o][i] * a[i];
    if (l + 1 < layers.size())
      for (auto& v : z) v = std::max(v, 0.0);
    a = z;
  }
  return a;
}

/// All pre-activations, for kink detection.
inline std::vector<double> hidden_preactivations(const std::vector<std::size_t>& widths,
                                                 const std::vector<double>& flat,
                                                 const std::vector<double>& x) {
  const auto layers = unpack(widths, flat);
  std::vector<double> a = x, all;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    std::vector<double> z(layers[l].b);
    for (std::size_t o = 0; o < z.size(); ++o)
      for (std::size_t i = 0; i < a.size(); ++i) z[o] += layers[l].w[o][i] * a[i];
    all.insert(all.end(), z.begin(), z.end());
    for (auto& v : z) v = std::max(v, 0.0);
    a = z;
  }
  return all;
}

/// Plain softmax of a slice, straight from the definition.
inline std::vector<double> softmax(const std::vector<double>& v) {
  double denom = 0.0;
  for (double x : v) denom += std::exp(x);
  std::vector<double> p;
  for (double x : v) p.push_back(std::exp(x) / denom);
  return p;
}

/// -log P(y | slice) = log(sum exp) - logit_y, evaluated directly.
inline double slice_cross_entropy(const std::vector<double>& logits, std::size_t offset,
                                  std::size_t n, std::size_t y) {
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i) denom += std::exp(logits[offset + i]);
  return std::log(denom) - logits[offset + y];
}

inline double mean_loss(const dbfed::ClassifierSpec& spec, const std::vector<double>& flat,
                        const std::vector<dbfed::LabeledExample>& batch, bool domain_independent) {
  const auto widths = spec.widths();
  double sum = 0.0;
  for (const auto& ex : batch) {
    const auto logits = mlp_logits(widths, flat, ex.features);
    const std::size_t offset = domain_independent ? ex.group * spec.num_classes : 0;
    sum += slice_cross_entropy(logits, offset, spec.num_classes, ex.target);
  }
  return sum / static_cast<double>(batch.size());
}

/// Central differences of mean_loss.
inline std::vector<double> finite_difference_gradient(const dbfed::ClassifierSpec& spec,
                                                      std::vector<double> flat,
                                                      const std::vector<dbfed::LabeledExample>& batch,
                                                      bool domain_independent, double step) {
  std::vector<double> g(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double saved = flat[i];
    flat[i] = saved + step;
    const double up = mean_loss(spec, flat, batch, domain_independent);
    flat[i] = saved - step;
    const double down = mean_loss(spec, flat, batch, domain_independent);
    flat[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// Naive weighted mean with explicit total, left-to-right.
inline std::vector<double> weighted_mean(const std::vector<std::vector<double>>& vectors,
                                         const std::vector<std::uint64_t>& counts) {
  double n = 0.0;
  for (auto c : counts) n += static_cast<double>(c);
  std::vector<double> out(vectors.front().size(), 0.0);
  for (std::size_t k = 0; k < vectors.size(); ++k)
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] += static_cast<double>(counts[k]) * vectors[k][i] / n;
  return out;
}

// ---- metrics, recomputed per record without a count tensor ----

inline double var_pop(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  const double m = s / static_cast<double>(xs.size());
  double q = 0.0;
  for (double x : xs) q += (x - m) * (x - m);
  return q / static_cast<double>(xs.size());
}

struct Metrics {
  std::optional<double> acc, ser, eo, ba, dp;
};

inline Metrics brute_force_metrics(const std::vector<dbfed::PredictionRecord>& recs,
                                   std::size_t n_cls, std::size_t n_grp) {
  Metrics m;
  if (recs.empty()) return m;

  std::uint64_t correct = 0;
  for (const auto& r : recs) correct += r.predicted == r.actual ? 1 : 0;
  m.acc = static_cast<double>(correct) / static_cast<double>(recs.size());

  auto count = [&](auto pred) {
    std::uint64_t c = 0;
    for (const auto& r : recs) c += pred(r) ? 1 : 0;
    return c;
  };

  bool every_group = true;
  for (std::size_t g = 0; g < n_grp; ++g)
    if (count([&](auto& r) { return r.group == g; }) == 0) every_group = false;

  if (every_group) {
    std::vector<double> err;
    for (std::size_t g = 0; g < n_grp; ++g) {
      const auto n = count([&](auto& r) { return r.group == g; });
      const auto wrong = count([&](auto& r) { return r.group == g && r.predicted != r.actual; });
      err.push_back(static_cast<double>(wrong) / static_cast<double>(n));
    }
    const double hi = *std::max_element(err.begin(), err.end());
    const double lo = *std::min_element(err.begin(), err.end());
    m.ser = hi == 0.0 ? 1.0 : lo == 0.0 ? std::numeric_limits<double>::infinity() : hi / lo;

    double dp_sum = 0.0;
    for (std::size_t c = 0; c < n_cls; ++c) {
      std::vector<double> rates;
      for (std::size_t g = 0; g < n_grp; ++g) {
        const auto n = count([&](auto& r) { return r.group == g; });
        const auto hit = count([&](auto& r) { return r.group == g && r.predicted == c; });
        rates.push_back(static_cast<double>(hit) / static_cast<double>(n));
      }
      dp_sum += var_pop(rates);
    }
    m.dp = dp_sum / static_cast<double>(n_cls);
  }

  double eo_sum = 0.0;
  std::size_t eo_classes = 0;
  for (std::size_t c = 0; c < n_cls; ++c) {
    std::vector<double> recalls;
    for (std::size_t g = 0; g < n_grp; ++g) {
      const auto n = count([&](auto& r) { return r.group == g && r.actual == c; });
      if (n == 0) continue;
      const auto hit = count([&](auto& r) { return r.group == g && r.actual == c && r.predicted == c; });
      recalls.push_back(static_cast<double>(hit) / static_cast<double>(n));
    }
    if (recalls.size() >= 2) {
      eo_sum += var_pop(recalls);
      ++eo_classes;
    }
  }
  if (eo_classes > 0) m.eo = eo_sum / static_cast<double>(eo_classes);

  double ba_sum = 0.0;
  std::size_t ba_classes = 0;
  for (std::size_t c = 0; c < n_cls; ++c) {
    std::uint64_t largest = 0, total = 0;
    for (std::size_t g = 0; g < n_grp; ++g) {
      const auto gc = count([&](auto& r) { return r.group == g && r.predicted == c; });
      largest = std::max(largest, gc);
      total += gc;
    }
    if (total == 0) continue;
    ba_sum += static_cast<double>(largest) / static_cast<double>(total);
    ++ba_classes;
  }
  if (ba_classes > 0) m.ba = ba_sum / static_cast<double>(ba_classes) - 1.0 / static_cast<double>(n_grp);
  return m;
}

// ---- random instance generators ----

inline std::vector<dbfed::PredictionRecord> random_records(std::mt19937_64& rng, std::size_t n_cls,
                                                           std::size_t n_grp, std::size_t count) {
  std::uniform_int_distribution<std::size_t> cls(0, n_cls - 1), grp(0, n_grp - 1);
  std::vector<dbfed::PredictionRecord> recs;
  for (std::size_t i = 0; i < count; ++i) recs.push_back({cls(rng), cls(rng), grp(rng)});
  return recs;
}

inline std::vector<dbfed::LabeledExample> random_batch(std::mt19937_64& rng, std::size_t dim,
                                                       std::size_t n_cls, std::size_t n_grp,
                                                       std::size_t count) {
  std::normal_distribution<double> feat(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> cls(0, n_cls - 1), grp(0, n_grp - 1);
  std::vector<dbfed::LabeledExample> batch;
  for (std::size_t i = 0; i < count; ++i) {
    dbfed::LabeledExample ex;
    for (std::size_t j = 0; j < dim; ++j) ex.features.push_back(feat(rng));
    ex.target = cls(rng);
    ex.group = grp(rng);
    batch.push_back(std::move(ex));
  }
  return batch;
}

/// Componentwise |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                                 double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace oracle
