#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "conceptmem/data.hpp"
#include "conceptmem/eval.hpp"
#include "conceptmem/trainer.hpp"

namespace cmem {

enum class Task { Omniglot, Synthetic, LabelTransfer };

std::string to_string(Task task);
Task task_from_string(const std::string& s);

struct LabelSettings {
  LabelScheme scheme = LabelScheme::OneHot;
  std::size_t length = 10;
  std::uint64_t pool_begin = 0;
  std::uint64_t pool_end = 0;

  friend bool operator==(const LabelSettings&, const LabelSettings&) = default;
};

struct EvalSettings {
  std::size_t episodes = 1000;
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t mann_classes = 5;
  std::size_t mann_length = 50;
  std::size_t mann_k_max = 4;
  std::size_t zeroshot_classes = 5;
  std::size_t zeroshot_length = 10;
  /// Labels used at evaluation time; equal to the training labels unless the
  /// task transfers to a new label space.
  LabelSettings labels;
  std::size_t tradeoff_episodes = 2000;
  std::size_t tradeoff_interval = 500;
  double tradeoff_learning_rate = 1e-4;

  friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

/// One JSON document describing a run. Field names and defaults are listed in
/// docs/config_schema.md.
struct RunConfig {
  Task task = Task::Synthetic;
  /// Omniglot root; empty means $CONCEPT_DATA_DIR.
  std::string data_root;
  bool augment_rotations = true;
  SyntheticSpec synthetic;
  /// Synthetic tasks: the last eval_classes classes are held out.
  std::size_t eval_classes = 20;

  EmbedderConfig embedder = EmbedderConfig::mlp(16, {32});
  std::size_t attention_hidden = LabelAttention::kDefaultHidden;
  LabelSettings labels;
  std::size_t slots = 0;
  RewardConfig reward;
  std::vector<CurriculumStage> curriculum{{5, 10, 10000, Labeling::Seed}};
  OptimizerConfig optimizer;

  std::uint64_t init_seed = 1;
  std::uint64_t train_seed = 2;
  std::uint64_t eval_seed = 3;
  std::size_t threads = 1;
  std::size_t log_interval = 10;
  std::size_t checkpoint_interval = 0;
  std::string output_dir = "runs/default";

  EvalSettings eval;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses and validates; throws ConfigError with the offending field path.
/// `check_paths = false` skips the data-directory check (stored configs).
RunConfig parse_config(const std::string& json_text, bool check_paths = true);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);
/// Field-level checks, including that the Omniglot root exists.
void validate(const RunConfig& config, bool check_paths = true);

/// Resolved Omniglot root: data_root, else $CONCEPT_DATA_DIR, else empty.
std::filesystem::path data_root(const RunConfig& config);

struct TaskData {
  Dataset train;
  Dataset eval;
};

TaskData load_task_data(const RunConfig& config);

Model make_model(const RunConfig& config);
TrainConfig make_train_config(const RunConfig& config);
EvalConfig make_eval_config(const RunConfig& config);
/// Unlabeled fine-tuning with the zero-shot episode shape, evaluated on the
/// held-out classes every eval.tradeoff_interval episodes.
TradeoffConfig make_tradeoff_config(const RunConfig& config);

/// Checkpoint with the serialized config as metadata and sections
/// "embedder" and "attention".
Checkpoint make_checkpoint(const RunConfig& config, const Model& model);

struct Restored {
  RunConfig config;
  Model model;
};

/// Rebuilds a model from a checkpoint; `override_config` replaces the stored
/// config when given (its embedder must match the stored parameters).
Restored restore(const Checkpoint& checkpoint, const RunConfig* override_config = nullptr);

}  // namespace cmem
