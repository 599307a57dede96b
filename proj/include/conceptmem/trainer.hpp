#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "conceptmem/embedder.hpp"
#include "conceptmem/episode.hpp"
#include "conceptmem/label_attention.hpp"
#include "conceptmem/memory.hpp"

namespace cmem {

/// The trainable policy: embedding network plus label attention.
struct Model {
  Embedder embedder;
  LabelAttention attention;

  /// Trainable parameters in a fixed order: embedder first, then attention.
  std::vector<const Parameter*> trainable() const;
  std::vector<Parameter*> trainable();
};

struct RewardConfig {
  double fresh_slot_penalty = -1.0;
  double wrong_merge_penalty = -3.0;
  double correct_merge_reward = 0.0;
  double terminal_bonus = 100.0;

  friend bool operator==(const RewardConfig&, const RewardConfig&) = default;
};

/// True class ids written to each slot. Kept by the trainer and evaluators;
/// Memory itself never sees ground truth.
class PurityRecord {
 public:
  explicit PurityRecord(std::size_t slots) : slots_(slots) {}

  void add(std::size_t slot, std::size_t class_id) { slots_.at(slot).insert(class_id); }
  const std::set<std::size_t>& classes(std::size_t slot) const { return slots_.at(slot); }
  std::size_t size() const { return slots_.size(); }

 private:
  std::vector<std::set<std::size_t>> slots_;
};

/// Reward for writing a sample of `true_class` into `slot`, judged on the
/// memory and purity record before the write.
double step_reward(const Memory& before, std::size_t slot, std::size_t true_class, const PurityRecord& purity,
                   const RewardConfig& config);

/// True iff every class that appeared occupies exactly one slot and no slot
/// holds more than one class.
bool perfect_clustering(const PurityRecord& purity, std::span<const std::size_t> appeared_classes);

double terminal_reward(const PurityRecord& purity, std::span<const std::size_t> appeared_classes,
                       const RewardConfig& config);

enum class ActionMode { Sample, Greedy, Forced };

struct RunOptions {
  ActionMode mode = ActionMode::Greedy;
  /// Actions replayed in Forced mode, one per step.
  std::vector<std::size_t> forced_actions;
  RewardConfig reward;
  /// Keep the computation record so reinforce_gradient can use the trace.
  /// Sample mode always records.
  bool record = false;
};

struct StepRecord {
  std::vector<double> probabilities;
  std::size_t action = 0;
  double log_prob = 0.0;
  double reward = 0.0;
};

struct EpisodeTrace {
  ActionMode mode = ActionMode::Greedy;
  std::vector<StepRecord> steps;
  double terminal = 0.0;
  /// Undiscounted sum of step rewards and the terminal reward.
  double total_return = 0.0;
  bool perfect = false;

  /// Live computation record (recorded runs only).
  std::unique_ptr<Tape> tape;
  Var log_prob_sum;
  std::vector<ops::BatchStats> batch_stats;

  bool has_record() const { return tape != nullptr; }
};

/// Runs one episode against `memory`, which must be reset. Sample mode
/// embeds with batch statistics (the whole episode is one batch), draws
/// actions from the policy and records the computation; greedy mode uses
/// running statistics and argmax actions.
EpisodeTrace run_episode(const Model& model, const Episode& episode, Memory& memory, const RunOptions& options,
                         Rng& rng);

/// Policy-gradient estimate, aligned with Model::trainable().
struct Gradients {
  std::vector<Array> values;
};

Gradients zero_gradients(const Model& model);

/// (1 / B) * sum over traces of grad( sum_t log pi(a_t | S_t) ) * (G - b).
/// Throws ContractError for traces without a computation record or produced
/// greedily.
Gradients reinforce_gradient(const Model& model, std::span<const EpisodeTrace> traces, double baseline);

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 16;
  bool use_baseline = true;
  double baseline_decay = 0.99;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct OptimizerState {
  OptimizerConfig config;
  std::vector<Array> first_moment;
  std::vector<Array> second_moment;
  std::uint64_t step = 0;
  double baseline = 0.0;
};

OptimizerState make_optimizer(const Model& model, const OptimizerConfig& config);

/// Adam ascent step on the policy gradient, then b <- d * b + (1 - d) * mean(G)
/// when the baseline is enabled. Throws NumericError naming the parameter if a
/// gradient entry is not finite.
void apply_update(OptimizerState& state, Model& model, const Gradients& policy_gradient,
                  std::span<const double> returns);

struct CurriculumStage {
  std::size_t n_classes = 2;
  std::size_t length = 3;
  std::size_t episodes = 1000;
  Labeling labeling = Labeling::Full;

  friend bool operator==(const CurriculumStage&, const CurriculumStage&) = default;
};

struct LogRow {
  std::size_t stage = 0;
  std::size_t episode_batch = 0;
  double mean_return = 0.0;
  double perfect_rate = 0.0;
  double wall_time_s = 0.0;
};

struct TrainConfig {
  std::vector<CurriculumStage> curriculum;
  RewardConfig reward;
  OptimizerConfig optimizer;
  LabelScheme scheme = LabelScheme::OneHot;
  std::size_t label_length = 10;
  std::uint64_t pool_begin = 0;
  std::uint64_t pool_end = 0;
  /// Memory size; 0 means twice the episode's class count.
  std::size_t slots = 0;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  /// Batches per log row.
  std::size_t log_interval = 10;
  /// Batches between checkpoint callbacks; 0 disables.
  std::size_t checkpoint_interval = 0;
  std::function<void(const Model&, std::size_t batch)> on_checkpoint;
  std::function<void(const LogRow&)> on_log;
};

std::size_t slots_for(const TrainConfig& config, std::size_t n_classes);

struct TrainingLog {
  std::vector<LogRow> rows;

  /// CSV with header stage,episode_batch,mean_return,perfect_rate,wall_time_s.
  std::string to_csv(bool include_wall_time = true) const;
};

/// Runs the curriculum stages in order with REINFORCE updates over
/// mini-batches of sampled episodes. `state` carries optimizer moments and the
/// baseline across calls; pass nullptr to start fresh. Episode randomness
/// derives from (config.seed, global episode index), so results do not depend
/// on the thread count.
TrainingLog train(Model& model, const Dataset& dataset, const TrainConfig& config, OptimizerState* state = nullptr,
                  std::uint64_t first_episode = 0);

}  // namespace cmem
