#pragma once

// Client/server training loop. Each round the server broadcasts the global
// weights, every client runs E local epochs of mini-batch updates on its own
// shard, and the server replaces the global weights with the sample-weighted
// mean of the returned client weights.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "dbfed/data.hpp"
#include "dbfed/error.hpp"
#include "dbfed/metrics.hpp"
#include "dbfed/nn.hpp"
#include "dbfed/random.hpp"

namespace dbfed {

enum class TrainingMode { FedAvgPlain, LocalOnly, DBFed };

inline HeadMode head_mode_for(TrainingMode mode) {
  return mode == TrainingMode::DBFed ? HeadMode::DomainIndependent : HeadMode::Plain;
}

inline LossMode loss_mode_for(TrainingMode mode) {
  return mode == TrainingMode::DBFed ? LossMode::DomainIndependentCE : LossMode::PlainCE;
}

struct FederationConfig {
  std::size_t rounds = 30;
  std::size_t num_clients = 5;
  std::size_t local_epochs = 3;
  std::size_t batch_size = 128;
  OptimizerSettings optimizer;
  TrainingMode mode = TrainingMode::DBFed;
  std::uint64_t master_seed = 0;
  bool parallel_clients = false;
  std::size_t eval_every = 1;  // rounds between test-set evaluations

  void validate() const {
    if (num_clients < 1) throw ConfigError("federation: need at least one client");
    if (local_epochs < 1) throw ConfigError("federation: local_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("federation: batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("federation: eval_every must be >= 1");
    optimizer.validate();
  }
};

// Seed streams. Every stream is keyed so that no client's schedule depends on
// the order in which clients run.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kShuffleStream = 2;

inline std::uint64_t init_seed(std::uint64_t master_seed) {
  return derive_seed({master_seed, kInitStream});
}

inline std::uint64_t shuffle_seed(std::uint64_t master_seed, std::size_t client_id,
                                  std::size_t round) {
  return derive_seed({master_seed, kShuffleStream, client_id, round});
}

struct LocalTrainingPlan {
  std::size_t epochs = 1;
  std::size_t batch_size = 1;
  LossMode loss_mode = LossMode::PlainCE;
  OptimizerSettings optimizer;
  std::uint64_t shuffle_seed = 0;
};

struct ClientState {
  std::size_t client_id = 0;
  Dataset dataset;
  ModelWeights local_weights;

  std::size_t sample_count() const { return dataset.size(); }
};

struct GlobalState {
  std::size_t round = 0;
  ModelWeights global_weights;
  std::uint64_t total_samples = 0;
};

/// Starts from `incoming` with fresh optimizer moments and runs plan.epochs
/// passes over `data`. Each epoch visits a new permutation drawn from one
/// stream seeded by plan.shuffle_seed; the last partial batch is kept.
inline ModelWeights client_local_train(const ClassifierSpec& spec, const Dataset& data,
                                       const ModelWeights& incoming,
                                       const LocalTrainingPlan& plan) {
  if (data.empty()) throw ConfigError("client_local_train: client dataset is empty");
  if (incoming.layout != layout_for(spec))
    throw RejectedInput("client_local_train: incoming weights do not match the classifier");
  if (plan.batch_size == 0) throw ConfigError("client_local_train: batch_size must be >= 1");

  ModelWeights weights = incoming;
  auto optimizer = OptimizerState::fresh(plan.optimizer, weights.size());
  Rng rng(plan.shuffle_seed);
  std::vector<std::size_t> order(data.size());
  std::vector<const LabeledExample*> batch;

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(std::span<std::size_t>(order), rng);
    for (std::size_t start = 0; start < order.size(); start += plan.batch_size) {
      const auto stop = std::min(order.size(), start + plan.batch_size);
      batch.clear();
      for (auto i = start; i < stop; ++i) batch.push_back(&data.examples[order[i]]);
      auto grad = backward(spec, weights, batch, plan.loss_mode);
      std::tie(weights, optimizer) =
          optimizer_step(std::move(optimizer), std::move(weights), grad.gradient);
    }
  }
  return weights;
}

struct ClientUpdate {
  std::size_t client_id = 0;
  ModelWeights weights;
  std::uint64_t sample_count = 0;
};

/// Sample-weighted mean sum_k (n_k / n) theta_k. Clients are combined in
/// ascending client_id order by pairwise summation, so the result does not
/// depend on the order of `updates`.
inline ModelWeights fedavg_aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw ProtocolError("fedavg_aggregate: no client updates");
  std::vector<const ClientUpdate*> sorted;
  for (const auto& u : updates) sorted.push_back(&u);
  std::sort(sorted.begin(), sorted.end(),
            [](auto* a, auto* b) { return a->client_id < b->client_id; });

  std::uint64_t total = 0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (k > 0 && sorted[k]->client_id == sorted[k - 1]->client_id)
      throw ProtocolError("fedavg_aggregate: duplicate client id " +
                          std::to_string(sorted[k]->client_id));
    if (sorted[k]->sample_count == 0)
      throw ProtocolError("fedavg_aggregate: client " + std::to_string(sorted[k]->client_id) +
                          " reported zero samples");
    if (!sorted[k]->weights.same_layout(sorted.front()->weights) ||
        sorted[k]->weights.size() != sorted.front()->weights.size())
      throw ProtocolError("fedavg_aggregate: client " + std::to_string(sorted[k]->client_id) +
                          " sent weights with a different layout");
    total += sorted[k]->sample_count;
  }

  std::vector<double> coef;
  for (auto* u : sorted)
    coef.push_back(static_cast<double>(u->sample_count) / static_cast<double>(total));

  ModelWeights out;
  out.layout = sorted.front()->weights.layout;
  out.values.resize(sorted.front()->weights.size());
  auto pairwise = [&](auto&& self, std::size_t i, std::size_t lo, std::size_t hi) -> double {
    if (hi - lo == 1) return coef[lo] * sorted[lo]->weights.values[i];
    const auto mid = lo + (hi - lo) / 2;
    return self(self, i, lo, mid) + self(self, i, mid, hi);
  };
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    double lo = sorted.front()->weights.values[i], hi = lo;
    for (auto* u : sorted) {
      lo = std::min(lo, u->weights.values[i]);
      hi = std::max(hi, u->weights.values[i]);
    }
    // Rounding can land a sum one ulp outside the hull of its inputs.
    out.values[i] = std::clamp(pairwise(pairwise, i, 0, sorted.size()), lo, hi);
  }
  return out;
}

inline std::vector<PredictionRecord> predict_dataset(const ClassifierSpec& spec,
                                                     const ModelWeights& weights,
                                                     const Dataset& data) {
  std::vector<PredictionRecord> records;
  records.reserve(data.size());
  for (const auto& ex : data.examples)
    records.push_back({predict_class(spec, weights, ex.features), ex.target, ex.group});
  return records;
}

inline FairnessReport evaluate_model(const ClassifierSpec& spec, const ModelWeights& weights,
                                     const Dataset& test) {
  return full_report(predict_dataset(spec, weights, test), test.num_classes, test.num_groups);
}

struct RoundSnapshot {
  std::size_t round = 0;
  std::optional<FairnessReport> report;  // empty when no test set was supplied
  double duration_seconds = 0.0;         // training + aggregation wall time
};

struct FederationResult {
  GlobalState global;
  std::vector<ModelWeights> client_weights;  // each client's last local weights
  std::vector<RoundSnapshot> history;
};

namespace detail {

inline void check_mode_matches_spec(const FederationConfig& config, const ClassifierSpec& spec) {
  if (spec.head_mode != head_mode_for(config.mode))
    throw ConfigError(config.mode == TrainingMode::DBFed
                          ? "DBFed requires a domain-independent head"
                          : "FedAvg and local-only training require a plain head");
}

/// Runs every client's local training for one round, optionally on separate
/// threads. Failures are rethrown for the lowest failing client id with the
/// round and client prepended.
inline std::vector<ModelWeights> train_clients(const ClassifierSpec& spec,
                                               const FederationConfig& config,
                                               std::span<const Dataset> partitions,
                                               std::span<const ModelWeights> starting,
                                               std::size_t round) {
  const std::size_t k = partitions.size();
  std::vector<ModelWeights> out(k);
  std::vector<std::exception_ptr> errors(k);
  auto work = [&](std::size_t c) {
    try {
      const LocalTrainingPlan plan{config.local_epochs, config.batch_size,
                                   loss_mode_for(config.mode), config.optimizer,
                                   shuffle_seed(config.master_seed, c, round)};
      out[c] = client_local_train(spec, partitions[c], starting[c], plan);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (config.parallel_clients && k > 1) {
    std::vector<std::jthread> threads;
    for (std::size_t c = 0; c < k; ++c) threads.emplace_back(work, c);
  } else {
    for (std::size_t c = 0; c < k; ++c) work(c);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (!errors[c]) continue;
    const std::string where =
        "round " + std::to_string(round) + ", client " + std::to_string(c) + ": ";
    try {
      std::rethrow_exception(errors[c]);
    } catch (const Error& e) {
      throw Error(e.kind(), where + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorKind::Runtime, where + e.what());
    }
  }
  return out;
}

}  // namespace detail

/// Full training loop for one mode. FedAvgPlain and DBFed aggregate after every
/// round; LocalOnly never aggregates, each client continuing from its own
/// weights, and its snapshots average the per-client test reports. Round 0 is
/// the evaluation of the initial weights.
inline FederationResult run_federation(const FederationConfig& config,
                                       std::span<const Dataset> partitions,
                                       const ClassifierSpec& spec,
                                       const Dataset* test_set = nullptr) {
  config.validate();
  spec.validate();
  detail::check_mode_matches_spec(config, spec);
  if (partitions.size() != config.num_clients)
    throw ConfigError("federation: " + std::to_string(config.num_clients) + " clients but " +
                      std::to_string(partitions.size()) + " partitions");
  std::uint64_t total = 0;
  for (std::size_t c = 0; c < partitions.size(); ++c) {
    if (partitions[c].empty())
      throw ConfigError("federation: partition " + std::to_string(c) + " is empty");
    total += partitions[c].size();
  }

  FederationResult result;
  result.global = {0, init_weights(spec, init_seed(config.master_seed)), total};
  result.client_weights.assign(config.num_clients, result.global.global_weights);

  auto snapshot = [&](std::size_t round, double seconds) {
    RoundSnapshot s{round, std::nullopt, seconds};
    if (test_set) {
      if (config.mode == TrainingMode::LocalOnly) {
        std::vector<FairnessReport> reports;
        for (const auto& w : result.client_weights)
          reports.push_back(evaluate_model(spec, w, *test_set));
        s.report = average_reports(reports);
      } else {
        s.report = evaluate_model(spec, result.global.global_weights, *test_set);
      }
    }
    result.history.push_back(std::move(s));
  };
  snapshot(0, 0.0);

  for (std::size_t round = 0; round < config.rounds; ++round) {
    const auto start = std::chrono::steady_clock::now();
    if (config.mode == TrainingMode::LocalOnly) {
      result.client_weights =
          detail::train_clients(spec, config, partitions, result.client_weights, round);
    } else {
      const std::vector<ModelWeights> broadcast(config.num_clients, result.global.global_weights);
      result.client_weights = detail::train_clients(spec, config, partitions, broadcast, round);
      std::vector<ClientUpdate> updates;
      for (std::size_t c = 0; c < config.num_clients; ++c)
        updates.push_back({c, result.client_weights[c], partitions[c].size()});
      result.global.global_weights = fedavg_aggregate(updates);
    }
    result.global.round = round + 1;
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    if ((round + 1) % config.eval_every == 0 || round + 1 == config.rounds)
      snapshot(round + 1, elapsed.count());
  }
  return result;
}

/// Single-site reference: R x E epochs on one dataset using client 0's batch
/// schedule and the per-round optimizer reset. With one client this is what
/// federated training must reproduce.
inline ModelWeights train_centralized(const FederationConfig& config, const Dataset& data,
                                      const ClassifierSpec& spec) {
  config.validate();
  spec.validate();
  if (data.empty()) throw ConfigError("train_centralized: dataset is empty");
  auto weights = init_weights(spec, init_seed(config.master_seed));
  const auto loss_mode = loss_mode_for(config.mode);
  std::vector<std::size_t> order(data.size());
  std::vector<const LabeledExample*> batch;
  for (std::size_t round = 0; round < config.rounds; ++round) {
    auto optimizer = OptimizerState::fresh(config.optimizer, weights.size());
    Rng rng(shuffle_seed(config.master_seed, 0, round));
    for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      shuffle(std::span<std::size_t>(order), rng);
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        batch.clear();
        for (auto i = start; i < std::min(order.size(), start + config.batch_size); ++i)
          batch.push_back(&data.examples[order[i]]);
        const auto grad = backward(spec, weights, batch, loss_mode);
        std::tie(weights, optimizer) =
            optimizer_step(std::move(optimizer), std::move(weights), grad.gradient);
      }
    }
  }
  return weights;
}

}  // namespace dbfed
