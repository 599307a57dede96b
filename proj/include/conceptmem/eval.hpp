#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "conceptmem/trainer.hpp"

namespace cmem {

/// Settings shared by the evaluation protocols. Every protocol runs greedily
/// and leaves the model untouched.
struct EvalConfig {
  LabelScheme scheme = LabelScheme::OneHot;
  std::size_t label_length = 10;
  std::uint64_t pool_begin = 0;
  std::uint64_t pool_end = 0;
  /// Memory size; 0 means twice the number of classes.
  std::size_t slots = 0;
  std::uint64_t seed = 7;
  std::size_t threads = 1;
};

/// Predictions bucketed by how many times the sample's class had already been
/// stored in the episode. Bucket 0 holds first appearances, which can only be
/// right by label coincidence; reports show buckets 1..k_max.
struct ShotAccuracyReport {
  std::size_t episodes = 0;
  std::size_t steps = 0;
  /// Steps with an empty memory, where no prediction is possible.
  std::size_t skipped = 0;
  std::vector<std::size_t> counted;
  std::vector<std::size_t> correct;

  double accuracy(std::size_t shot) const;
  /// 95% normal-approximation half-width of accuracy(shot).
  double half_width(std::size_t shot) const;
  std::size_t total_counted() const;
  std::string to_csv(std::size_t k_max) const;
};

/// Per episode: reset memory, then at every step classify the sample and
/// store it with its true label. Episodes have N classes and length T.
ShotAccuracyReport mann_eval(const Model& model, const Dataset& dataset, std::size_t n_episodes,
                             const EvalConfig& config, std::size_t n_classes = 5, std::size_t length = 50);

struct NwayReport {
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t episodes = 0;
  std::size_t correct = 0;

  double accuracy() const;
  double ci95() const;
  /// Header n,k,accuracy,ci95,episodes plus one row.
  std::string to_csv() const;
};

/// Stores N*k labeled support samples by greedy label attention, then
/// classifies one unlabeled query against the occupied slots.
NwayReport nway_kshot_eval(const Model& model, const Dataset& dataset, std::size_t n_classes, std::size_t k_shot,
                           std::size_t n_episodes, const EvalConfig& config);

/// Label-channel transfer check: supports are stored by greedy label
/// attention, then the query is routed with its label shown. An episode counts
/// as correct when the query lands in a slot holding its class.
NwayReport label_transfer_eval(const Model& model, const Dataset& dataset, std::size_t n_classes,
                               std::size_t k_shot, std::size_t n_episodes, const EvalConfig& config);

struct RoutingTally {
  std::size_t first_appearances = 0;
  std::size_t first_to_empty = 0;
  std::size_t second_appearances = 0;
  /// Second appearances routed to the slot that received the class's first
  /// sample.
  std::size_t second_to_own_slot = 0;

  RoutingTally& operator+=(const RoutingTally& other);
};

/// Scores one episode's slot choices. `classes[t]` and `actions[t]` describe
/// step t; slot emptiness is replayed from the actions themselves.
RoutingTally tally_routing(std::span<const std::size_t> classes, std::span<const std::size_t> actions);

double f1(double zero_shot, double one_shot);

struct FewZeroReport {
  double zero_shot_accuracy = 0.0;
  double one_shot_accuracy = 0.0;
  double f1 = 0.0;
  RoutingTally tally;
};

FewZeroReport few_zero_report(const RoutingTally& tally);

/// Greedy runs of fully unlabeled episodes. Zero-shot accuracy is the share of
/// first appearances sent to an empty slot; one-shot accuracy the share of
/// second appearances sent back to their class's slot.
FewZeroReport zeroshot_eval(const Model& model, const Dataset& dataset, std::size_t n_episodes,
                            const EvalConfig& config, std::size_t n_classes = 5, std::size_t length = 10);

struct TradeoffPoint {
  std::size_t episodes = 0;
  double zero_shot = 0.0;
  double few_shot = 0.0;
};

struct TradeoffConfig {
  /// Fine-tuning runs; its curriculum is the single stage to continue with.
  TrainConfig finetune;
  std::size_t eval_interval = 500;
  std::size_t eval_episodes = 500;
  std::size_t eval_classes = 5;
  std::size_t eval_length = 10;
  EvalConfig eval;
};

/// Continues training `model` and measures both routing accuracies before
/// fine-tuning and after every eval_interval episodes.
std::vector<TradeoffPoint> tradeoff_experiment(Model& model, const Dataset& train_set, const Dataset& eval_set,
                                               const TradeoffConfig& config);

std::string tradeoff_csv(std::span<const TradeoffPoint> series);

}  // namespace cmem
