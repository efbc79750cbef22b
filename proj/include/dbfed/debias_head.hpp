#pragma once

// Group-conditioned output head. The final layer holds one N-way classifier
// per sensitive group; node y + d*N scores class y under group d. Training
// conditions on the true group, prediction marginalizes over groups with a
// uniform prior.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dbfed/error.hpp"

namespace dbfed {

struct LabeledExample {
  std::vector<double> features;
  std::size_t target = 0;  // class y in [0, N)
  std::size_t group = 0;   // sensitive attribute d in [0, D)

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

/// Row g holds P(. | g, x); stored row-major D x N alongside log-probabilities.
struct GroupConditionalDistribution {
  std::size_t num_classes = 0;
  std::size_t num_groups = 0;
  std::vector<double> probs;
  std::vector<double> log_probs;

  double prob(std::size_t group, std::size_t cls) const {
    return probs[group * num_classes + cls];
  }
  double log_prob(std::size_t group, std::size_t cls) const {
    return log_probs[group * num_classes + cls];
  }
  std::span<const double> row(std::size_t group) const {
    return std::span<const double>(probs).subspan(group * num_classes, num_classes);
  }
};

namespace detail {

/// Stable log-softmax of one slice, written into `out`.
inline void log_softmax(std::span<const double> logits, std::span<double> out) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - m);
  const double lse = m + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

inline std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

}  // namespace detail

/// Softmax within each group's N-logit slice.
inline GroupConditionalDistribution group_conditional_probs(std::span<const double> logits,
                                                            std::size_t num_classes,
                                                            std::size_t num_groups) {
  if (num_classes == 0 || num_groups == 0 || logits.size() != num_classes * num_groups)
    throw RejectedInput("group_conditional_probs: expected " +
                        std::to_string(num_classes * num_groups) + " logits, got " +
                        std::to_string(logits.size()));
  for (double l : logits)
    if (!std::isfinite(l)) throw NumericError("group_conditional_probs: non-finite logit");

  GroupConditionalDistribution dist;
  dist.num_classes = num_classes;
  dist.num_groups = num_groups;
  dist.probs.resize(logits.size());
  dist.log_probs.resize(logits.size());
  for (std::size_t g = 0; g < num_groups; ++g) {
    const auto offset = g * num_classes;
    detail::log_softmax(logits.subspan(offset, num_classes),
                        std::span<double>(dist.log_probs).subspan(offset, num_classes));
  }
  std::transform(dist.log_probs.begin(), dist.log_probs.end(), dist.probs.begin(),
                 [](double lp) { return std::exp(lp); });
  return dist;
}

/// Group-blind prediction: argmax_y sum_g P(y|g,x). The uniform 1/D prior is a
/// positive constant and drops out of the argmax. Ties go to the lowest class.
inline std::size_t predict(const GroupConditionalDistribution& dist) {
  std::vector<double> column(dist.num_classes, 0.0);
  for (std::size_t g = 0; g < dist.num_groups; ++g)
    for (std::size_t y = 0; y < dist.num_classes; ++y) column[y] += dist.prob(g, y);
  return detail::argmax_lowest(column);
}

/// Prediction when the sample's group is known.
inline std::size_t predict_known_group(const GroupConditionalDistribution& dist,
                                       std::size_t group) {
  if (group >= dist.num_groups)
    throw RejectedInput("predict_known_group: group index out of range");
  return detail::argmax_lowest(dist.row(group));
}

/// -log P(y | d, x), read from the log-space probabilities so it stays finite
/// for finite logits even when the probability underflows.
inline double conditional_cross_entropy(const GroupConditionalDistribution& dist,
                                        std::size_t target, std::size_t group) {
  if (target >= dist.num_classes || group >= dist.num_groups)
    throw RejectedInput("conditional_cross_entropy: index out of range");
  return -dist.log_prob(group, target);
}

}  // namespace dbfed
