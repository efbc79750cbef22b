#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "dbfed/debias_head.hpp"
#include "oracles.hpp"

namespace {

using dbfed::GroupConditionalDistribution;

GroupConditionalDistribution from_rows(std::vector<std::vector<double>> rows) {
  GroupConditionalDistribution d;
  d.num_groups = rows.size();
  d.num_classes = rows.front().size();
  for (const auto& r : rows)
    for (double p : r) {
      d.probs.push_back(p);
      d.log_probs.push_back(std::log(p));
    }
  return d;
}

TEST(GroupConditionalProbs, UniformLogitsGiveUniformRows) {
  const auto d = dbfed::group_conditional_probs(std::vector<double>(4, 0.0), 2, 2);
  for (double p : d.probs) EXPECT_DOUBLE_EQ(p, 0.5);
}

TEST(GroupConditionalProbs, SingleGroupIsOrdinarySoftmax) {
  const std::vector<double> logits{0.3, -1.7};
  const auto d = dbfed::group_conditional_probs(logits, 2, 1);
  const auto ref = oracle::softmax(logits);
  EXPECT_NEAR(d.prob(0, 0), ref[0], 1e-15);
  EXPECT_NEAR(d.prob(0, 1), ref[1], 1e-15);
}

TEST(GroupConditionalProbs, EachRowIsSoftmaxOfItsSlice) {
  const std::vector<double> logits{1, 2, 3, 0, 0, 10};
  const auto d = dbfed::group_conditional_probs(logits, 3, 2);
  const auto r0 = oracle::softmax({1, 2, 3});
  const auto r1 = oracle::softmax({0, 0, 10});
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(d.prob(0, c), r0[c], 1e-15);
    EXPECT_NEAR(d.prob(1, c), r1[c], 1e-15);
  }
}

TEST(GroupConditionalProbs, RejectsBadInput) {
  EXPECT_THROW(dbfed::group_conditional_probs(std::vector<double>(5, 0.0), 3, 2),
               dbfed::RejectedInput);
  EXPECT_THROW(dbfed::group_conditional_probs(std::vector<double>{0.0, NAN}, 2, 1), dbfed::NumericError);
  EXPECT_THROW(dbfed::group_conditional_probs(std::vector<double>{INFINITY, 0.0}, 2, 1),
               dbfed::NumericError);
}

TEST(GroupConditionalProbs, HugeLogitsStayFinite) {
  const auto d = dbfed::group_conditional_probs(std::vector{1000.0, -1000.0, 800.0, 801.0}, 2, 2);
  for (double p : d.probs) EXPECT_TRUE(std::isfinite(p));
  EXPECT_DOUBLE_EQ(d.prob(0, 0), 1.0);
}

TEST(Predict, SingleGroupIsArgmax) {
  EXPECT_EQ(dbfed::predict(from_rows({{0.2, 0.5, 0.3}})), 1u);
}

TEST(Predict, UsesColumnSums) {
  // Column sums 1.1 and 0.9.
  EXPECT_EQ(dbfed::predict(from_rows({{0.9, 0.1}, {0.2, 0.8}})), 0u);
}

TEST(Predict, TiesGoToLowestClass) {
  EXPECT_EQ(dbfed::predict(from_rows({{0.5, 0.5}, {0.5, 0.5}})), 0u);
  EXPECT_EQ(dbfed::predict_known_group(from_rows({{0.5, 0.5}}), 0), 0u);
}

TEST(PredictKnownGroup, ArgmaxOfRow) {
  EXPECT_EQ(dbfed::predict_known_group(from_rows({{0.5, 0.4, 0.1}, {0.1, 0.7, 0.2}}), 1), 1u);
  EXPECT_THROW(dbfed::predict_known_group(from_rows({{0.5, 0.5}}), 1), dbfed::RejectedInput);
}

TEST(PredictKnownGroup, AgreesWithBlindRuleWhenRowsEqual) {
  const auto d = from_rows({{0.1, 0.6, 0.3}, {0.1, 0.6, 0.3}, {0.1, 0.6, 0.3}});
  for (std::size_t g = 0; g < 3; ++g) EXPECT_EQ(dbfed::predict_known_group(d, g), dbfed::predict(d));
}

TEST(PredictKnownGroup, CanDisagreeWithBlindRule) {
  // Column sums 0.9 / 1.1 pick class 1, row 0 alone picks class 0.
  const auto d = from_rows({{0.9, 0.1}, {0.0, 1.0}});
  EXPECT_EQ(dbfed::predict(d), 1u);
  EXPECT_EQ(dbfed::predict_known_group(d, 0), 0u);
}

TEST(ConditionalCrossEntropy, CertainClassHasZeroLoss) {
  const auto d = from_rows({{1.0, 0.0}});
  EXPECT_EQ(dbfed::conditional_cross_entropy(d, 0, 0), 0.0);
}

TEST(ConditionalCrossEntropy, UniformBinaryIsLn2) {
  const auto d = dbfed::group_conditional_probs(std::vector<double>(4, 0.0), 2, 2);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t g = 0; g < 2; ++g)
      EXPECT_NEAR(dbfed::conditional_cross_entropy(d, y, g), std::log(2.0), 1e-15);
}

TEST(ConditionalCrossEntropy, MatchesLogSumExp) {
  const auto d = dbfed::group_conditional_probs(std::vector<double>{0, 0, 0, 1, 2, 3}, 3, 2);
  const double expected = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 1.0;
  EXPECT_NEAR(dbfed::conditional_cross_entropy(d, 0, 1), expected, 1e-14);
}

TEST(ConditionalCrossEntropy, FiniteWhenProbabilityUnderflows) {
  const auto d = dbfed::group_conditional_probs(std::vector{0.0, 900.0}, 2, 1);
  EXPECT_EQ(d.prob(0, 0), 0.0);
  EXPECT_NEAR(dbfed::conditional_cross_entropy(d, 0, 0), 900.0, 1e-9);
}

TEST(ConditionalCrossEntropy, RejectsOutOfRange) {
  const auto d = from_rows({{0.5, 0.5}});
  EXPECT_THROW(dbfed::conditional_cross_entropy(d, 2, 0), dbfed::RejectedInput);
  EXPECT_THROW(dbfed::conditional_cross_entropy(d, 0, 1), dbfed::RejectedInput);
}

class HeadProperties : public ::testing::Test {
 protected:
  std::mt19937_64 rng{8};
  std::vector<double> random_logits(std::size_t n) {
    std::normal_distribution<double> dist(0.0, 4.0);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
  }
};

TEST_F(HeadProperties, RowsAreStochastic) {
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + t % 4, g = 1 + t % 3;
    const auto d = dbfed::group_conditional_probs(random_logits(n * g), n, g);
    for (std::size_t r = 0; r < g; ++r) {
      const auto row = d.row(r);
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
      for (double p : row) {
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
      }
    }
  }
}

TEST_F(HeadProperties, ShiftInvariance) {
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + t % 4, g = 1 + t % 3;
    const auto logits = random_logits(n * g);
    const auto base = dbfed::group_conditional_probs(logits, n, g);

    auto all = logits;
    for (auto& x : all) x += 3.75;
    const auto shifted = dbfed::group_conditional_probs(all, n, g);
    for (std::size_t i = 0; i < base.probs.size(); ++i)
      EXPECT_NEAR(base.probs[i], shifted.probs[i], 1e-12);

    auto one = logits;
    const std::size_t target = t % g;
    for (std::size_t c = 0; c < n; ++c) one[target * n + c] -= 11.5;
    const auto partial = dbfed::group_conditional_probs(one, n, g);
    for (std::size_t c = 0; c < n; ++c)
      EXPECT_NEAR(base.prob(target, c), partial.prob(target, c), 1e-12);
  }
}

TEST_F(HeadProperties, UniformPriorWeightingDoesNotChangePrediction) {
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + t % 4, g = 1 + t % 4;
    const auto d = dbfed::group_conditional_probs(random_logits(n * g), n, g);
    std::vector<double> weighted(n, 0.0);
    for (std::size_t r = 0; r < g; ++r)
      for (std::size_t c = 0; c < n; ++c) weighted[c] += d.prob(r, c) / static_cast<double>(g);
    const auto best = static_cast<std::size_t>(
        std::max_element(weighted.begin(), weighted.end()) - weighted.begin());
    EXPECT_EQ(dbfed::predict(d), best);
  }
}

TEST_F(HeadProperties, SingleGroupDegeneratesToPlainSoftmax) {
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + t % 5;
    const auto logits = random_logits(n);
    const auto d = dbfed::group_conditional_probs(logits, n, 1);
    const auto ref = oracle::softmax(logits);
    const auto argmax = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    EXPECT_EQ(dbfed::predict(d), argmax);
    for (std::size_t y = 0; y < n; ++y) {
      EXPECT_NEAR(d.prob(0, y), ref[y], 1e-14);
      EXPECT_NEAR(dbfed::conditional_cross_entropy(d, y, 0), -std::log(ref[y]), 1e-12);
    }
  }
}

}  // namespace
