#include "conceptmem/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "conceptmem/error.hpp"

namespace cmem {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Task task) {
  switch (task) {
    case Task::Omniglot:
      return "omniglot";
    case Task::Synthetic:
      return "synthetic";
    case Task::LabelTransfer:
      return "label-transfer";
  }
  return "?";
}

Task task_from_string(const std::string& s) {
  if (s == "omniglot") return Task::Omniglot;
  if (s == "synthetic") return Task::Synthetic;
  if (s == "label-transfer") return Task::LabelTransfer;
  throw ConfigError("task: unknown value '" + s + "' (expected omniglot, synthetic or label-transfer)");
}

namespace {

// Reads optional fields of one JSON object, reporting errors by field path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": wrong type");
    }
  }

  void get_size(const char* key, std::size_t& out) const {
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(field(key) + ": expected a non-negative integer");
    out = v.get<std::size_t>();
  }

  void get_u64(const char* key, std::uint64_t& out) const {
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(field(key) + ": expected a non-negative integer");
    }
    out = v.get<std::uint64_t>();
  }

  void get_double(const char* key, double& out) const {
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_number()) throw ConfigError(field(key) + ": expected a number");
    out = j_.at(key).get<double>();
  }

  bool has(const char* key) const { return j_.contains(key); }
  Reader child(const char* key) const { return Reader(j_.at(key), field(key)); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void reject_unknown(std::initializer_list<const char*> known) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* k : known) ok = ok || it.key() == k;
      if (!ok) throw ConfigError(field(it.key()) + ": unknown field");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
};

std::vector<std::size_t> size_list(const Reader& r, const char* key, std::vector<std::size_t> fallback) {
  if (!r.has(key)) return fallback;
  const json& v = r.raw(key);
  if (!v.is_array()) throw ConfigError(r.field(key) + ": expected an array of integers");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<long long>() < 0) {
      throw ConfigError(r.field(key) + ": expected an array of non-negative integers");
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

template <class F>
auto parse_enum(const Reader& r, const char* key, F&& convert, decltype(convert(std::string())) fallback) {
  std::string s;
  r.get(key, s);
  if (s.empty()) return fallback;
  try {
    return convert(s);
  } catch (const ConfigError& e) {
    throw ConfigError(r.field(key) + ": " + e.what());
  }
}

LabelSettings parse_labels(const Reader& r, LabelSettings out) {
  r.reject_unknown({"scheme", "length", "pool_begin", "pool_end"});
  out.scheme = parse_enum(r, "scheme", label_scheme_from_string, out.scheme);
  r.get_size("length", out.length);
  r.get_u64("pool_begin", out.pool_begin);
  r.get_u64("pool_end", out.pool_end);
  return out;
}

json labels_json(const LabelSettings& l) {
  return {{"scheme", to_string(l.scheme)}, {"length", l.length}, {"pool_begin", l.pool_begin}, {"pool_end", l.pool_end}};
}

}  // namespace

RunConfig parse_config(const std::string& json_text, bool check_paths) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  const Reader r(root, "");
  r.reject_unknown({"task", "data", "embedder", "attention", "labels", "memory", "reward", "curriculum", "optimizer",
                    "seeds", "threads", "log_interval", "checkpoint_interval", "output_dir", "eval"});
  RunConfig c;
  c.task = parse_enum(r, "task", task_from_string, c.task);

  if (r.has("data")) {
    const Reader d = r.child("data");
    d.reject_unknown({"root", "augment_rotations", "synthetic", "eval_classes"});
    d.get("root", c.data_root);
    d.get("augment_rotations", c.augment_rotations);
    d.get_size("eval_classes", c.eval_classes);
    if (d.has("synthetic")) {
      const Reader s = d.child("synthetic");
      s.reject_unknown({"n_classes", "dimension", "center_scale", "noise_sigma", "samples_per_class", "seed"});
      s.get_size("n_classes", c.synthetic.n_classes);
      s.get_size("dimension", c.synthetic.dimension);
      s.get_double("center_scale", c.synthetic.center_scale);
      s.get_double("noise_sigma", c.synthetic.noise_sigma);
      s.get_size("samples_per_class", c.synthetic.samples_per_class);
      s.get_u64("seed", c.synthetic.seed);
    }
  }

  if (r.has("embedder")) {
    const Reader e = r.child("embedder");
    e.reject_unknown({"kind", "input_shape", "hidden_size", "widths", "conv_filters"});
    c.embedder.kind = parse_enum(e, "kind", embedder_kind_from_string, c.embedder.kind);
    c.embedder.input_shape = size_list(e, "input_shape", c.embedder.input_shape);
    // An explicit section starts from no widths and a derived hidden_size.
    c.embedder.hidden_size = 0;
    c.embedder.widths.clear();
    e.get_size("hidden_size", c.embedder.hidden_size);
    c.embedder.widths = size_list(e, "widths", c.embedder.widths);
    c.embedder.conv_filters = size_list(e, "conv_filters", c.embedder.conv_filters);
  }
  if (r.has("attention")) {
    const Reader a = r.child("attention");
    a.reject_unknown({"hidden"});
    a.get_size("hidden", c.attention_hidden);
  }
  if (r.has("labels")) c.labels = parse_labels(r.child("labels"), c.labels);
  c.eval.labels = c.labels;
  if (r.has("memory")) {
    const Reader m = r.child("memory");
    m.reject_unknown({"slots"});
    m.get_size("slots", c.slots);
  }
  if (r.has("reward")) {
    const Reader w = r.child("reward");
    w.reject_unknown({"fresh_slot_penalty", "wrong_merge_penalty", "correct_merge_reward", "terminal_bonus"});
    w.get_double("fresh_slot_penalty", c.reward.fresh_slot_penalty);
    w.get_double("wrong_merge_penalty", c.reward.wrong_merge_penalty);
    w.get_double("correct_merge_reward", c.reward.correct_merge_reward);
    w.get_double("terminal_bonus", c.reward.terminal_bonus);
  }
  if (r.has("curriculum")) {
    const json& stages = r.raw("curriculum");
    if (!stages.is_array()) throw ConfigError("curriculum: expected an array of stages");
    c.curriculum.clear();
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const Reader s(stages[i], "curriculum[" + std::to_string(i) + "]");
      s.reject_unknown({"classes", "length", "episodes", "labeling"});
      CurriculumStage st;
      s.get_size("classes", st.n_classes);
      s.get_size("length", st.length);
      s.get_size("episodes", st.episodes);
      st.labeling = parse_enum(s, "labeling", labeling_from_string, st.labeling);
      c.curriculum.push_back(st);
    }
  }
  if (r.has("optimizer")) {
    const Reader o = r.child("optimizer");
    o.reject_unknown({"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "baseline", "baseline_decay"});
    o.get_double("learning_rate", c.optimizer.learning_rate);
    o.get_double("beta1", c.optimizer.beta1);
    o.get_double("beta2", c.optimizer.beta2);
    o.get_double("epsilon", c.optimizer.epsilon);
    o.get_size("batch_size", c.optimizer.batch_size);
    o.get("baseline", c.optimizer.use_baseline);
    o.get_double("baseline_decay", c.optimizer.baseline_decay);
  }
  if (r.has("seeds")) {
    const Reader s = r.child("seeds");
    s.reject_unknown({"init", "train", "eval"});
    s.get_u64("init", c.init_seed);
    s.get_u64("train", c.train_seed);
    s.get_u64("eval", c.eval_seed);
  }
  r.get_size("threads", c.threads);
  r.get_size("log_interval", c.log_interval);
  r.get_size("checkpoint_interval", c.checkpoint_interval);
  r.get("output_dir", c.output_dir);

  if (r.has("eval")) {
    const Reader e = r.child("eval");
    e.reject_unknown({"episodes", "n_way", "k_shot", "mann_classes", "mann_length", "mann_k_max", "zeroshot_classes",
                      "zeroshot_length", "labels", "tradeoff_episodes", "tradeoff_interval",
                      "tradeoff_learning_rate"});
    e.get_size("episodes", c.eval.episodes);
    e.get_size("n_way", c.eval.n_way);
    e.get_size("k_shot", c.eval.k_shot);
    e.get_size("mann_classes", c.eval.mann_classes);
    e.get_size("mann_length", c.eval.mann_length);
    e.get_size("mann_k_max", c.eval.mann_k_max);
    e.get_size("zeroshot_classes", c.eval.zeroshot_classes);
    e.get_size("zeroshot_length", c.eval.zeroshot_length);
    if (e.has("labels")) c.eval.labels = parse_labels(e.child("labels"), c.eval.labels);
    e.get_size("tradeoff_episodes", c.eval.tradeoff_episodes);
    e.get_size("tradeoff_interval", c.eval.tradeoff_interval);
    e.get_double("tradeoff_learning_rate", c.eval.tradeoff_learning_rate);
  }
  validate(c, check_paths);
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
  json stages = json::array();
  for (const auto& s : c.curriculum) {
    stages.push_back(
        {{"classes", s.n_classes}, {"length", s.length}, {"episodes", s.episodes}, {"labeling", to_string(s.labeling)}});
  }
  json j = {
      {"task", to_string(c.task)},
      {"data",
       {{"root", c.data_root},
        {"augment_rotations", c.augment_rotations},
        {"eval_classes", c.eval_classes},
        {"synthetic",
         {{"n_classes", c.synthetic.n_classes},
          {"dimension", c.synthetic.dimension},
          {"center_scale", c.synthetic.center_scale},
          {"noise_sigma", c.synthetic.noise_sigma},
          {"samples_per_class", c.synthetic.samples_per_class},
          {"seed", c.synthetic.seed}}}}},
      {"embedder",
       {{"kind", to_string(c.embedder.kind)},
        {"input_shape", c.embedder.input_shape},
        {"hidden_size", c.embedder.hidden_size},
        {"widths", c.embedder.widths},
        {"conv_filters", c.embedder.conv_filters}}},
      {"attention", {{"hidden", c.attention_hidden}}},
      {"labels", labels_json(c.labels)},
      {"memory", {{"slots", c.slots}}},
      {"reward",
       {{"fresh_slot_penalty", c.reward.fresh_slot_penalty},
        {"wrong_merge_penalty", c.reward.wrong_merge_penalty},
        {"correct_merge_reward", c.reward.correct_merge_reward},
        {"terminal_bonus", c.reward.terminal_bonus}}},
      {"curriculum", stages},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.epsilon},
        {"batch_size", c.optimizer.batch_size},
        {"baseline", c.optimizer.use_baseline},
        {"baseline_decay", c.optimizer.baseline_decay}}},
      {"seeds", {{"init", c.init_seed}, {"train", c.train_seed}, {"eval", c.eval_seed}}},
      {"threads", c.threads},
      {"log_interval", c.log_interval},
      {"checkpoint_interval", c.checkpoint_interval},
      {"output_dir", c.output_dir},
      {"eval",
       {{"episodes", c.eval.episodes},
        {"n_way", c.eval.n_way},
        {"k_shot", c.eval.k_shot},
        {"mann_classes", c.eval.mann_classes},
        {"mann_length", c.eval.mann_length},
        {"mann_k_max", c.eval.mann_k_max},
        {"zeroshot_classes", c.eval.zeroshot_classes},
        {"zeroshot_length", c.eval.zeroshot_length},
        {"labels", labels_json(c.eval.labels)},
        {"tradeoff_episodes", c.eval.tradeoff_episodes},
        {"tradeoff_interval", c.eval.tradeoff_interval},
        {"tradeoff_learning_rate", c.eval.tradeoff_learning_rate}}},
  };
  return j.dump(2);
}

fs::path data_root(const RunConfig& config) {
  if (!config.data_root.empty()) return config.data_root;
  if (const char* env = std::getenv("CONCEPT_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return {};
}

void validate(const RunConfig& c, bool check_paths) {
  try {
    c.embedder.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("embedder: ") + e.what());
  }
  if (c.attention_hidden == 0) throw ConfigError("attention.hidden: must be positive");
  if (c.labels.length == 0) throw ConfigError("labels.length: must be positive");
  if (c.eval.labels.length == 0) throw ConfigError("eval.labels.length: must be positive");
  if (c.curriculum.empty()) throw ConfigError("curriculum: at least one stage is required");
  for (std::size_t i = 0; i < c.curriculum.size(); ++i) {
    const auto& s = c.curriculum[i];
    const std::string at = "curriculum[" + std::to_string(i) + "]";
    if (s.n_classes == 0) throw ConfigError(at + ".classes: must be at least 1");
    if (s.length == 0) throw ConfigError(at + ".length: must be at least 1");
    if (s.episodes == 0) throw ConfigError(at + ".episodes: must be at least 1");
    if (c.slots != 0 && c.slots < s.n_classes) {
      throw ConfigError("memory.slots: " + std::to_string(c.slots) + " slots cannot hold the " +
                        std::to_string(s.n_classes) + " classes of " + at);
    }
  }
  if (!(c.optimizer.learning_rate >= 0.0)) throw ConfigError("optimizer.learning_rate: must be non-negative");
  if (c.optimizer.batch_size == 0) throw ConfigError("optimizer.batch_size: must be at least 1");
  if (!(c.optimizer.baseline_decay >= 0.0 && c.optimizer.baseline_decay < 1.0)) {
    throw ConfigError("optimizer.baseline_decay: must lie in [0, 1)");
  }
  if (c.threads == 0) throw ConfigError("threads: must be at least 1");
  if (c.log_interval == 0) throw ConfigError("log_interval: must be at least 1");
  if (c.eval.n_way == 0 || c.eval.k_shot == 0) throw ConfigError("eval.n_way / eval.k_shot: must be at least 1");
  if (c.eval.tradeoff_interval == 0) throw ConfigError("eval.tradeoff_interval: must be at least 1");

  if (c.task == Task::Omniglot) {
    if (!check_paths) return;
    const fs::path root = data_root(c);
    if (root.empty()) throw ConfigError("data.root: not set and CONCEPT_DATA_DIR is empty");
    if (!fs::is_directory(root)) throw ConfigError("data.root: directory " + root.string() + " does not exist");
  } else {
    try {
      c.synthetic.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("data.") + e.what());
    }
    if (c.eval_classes == 0 || c.eval_classes >= c.synthetic.n_classes) {
      throw ConfigError("data.eval_classes: must be between 1 and synthetic.n_classes - 1");
    }
    if (c.embedder.input_shape != Shape{c.synthetic.dimension}) {
      throw ConfigError("embedder.input_shape: must be [" + std::to_string(c.synthetic.dimension) +
                        "] to match data.synthetic.dimension");
    }
  }
}

TaskData load_task_data(const RunConfig& config) {
  if (config.task == Task::Omniglot) {
    OmniglotSplit split = load_omniglot(data_root(config), config.embedder.input_shape.back());
    if (config.augment_rotations) split.train = augment_rotations(split.train);
    return {std::move(split.train), std::move(split.eval)};
  }
  const SyntheticData data = make_synthetic(config.synthetic);
  const std::size_t cut = config.synthetic.n_classes - config.eval_classes;
  return {subset_classes(data.dataset, 0, cut), subset_classes(data.dataset, cut, config.synthetic.n_classes)};
}

Model make_model(const RunConfig& config) {
  return Model{Embedder(config.embedder, config.init_seed),
               LabelAttention(config.attention_hidden, mix_seed(config.init_seed, 0xa77e))};
}

TrainConfig make_train_config(const RunConfig& c) {
  TrainConfig t;
  t.curriculum = c.curriculum;
  t.reward = c.reward;
  t.optimizer = c.optimizer;
  t.scheme = c.labels.scheme;
  t.label_length = c.labels.length;
  t.pool_begin = c.labels.pool_begin;
  t.pool_end = c.labels.pool_end;
  t.slots = c.slots;
  t.seed = c.train_seed;
  t.threads = c.threads;
  t.log_interval = c.log_interval;
  t.checkpoint_interval = c.checkpoint_interval;
  return t;
}

EvalConfig make_eval_config(const RunConfig& c) {
  EvalConfig e;
  e.scheme = c.eval.labels.scheme;
  e.label_length = c.eval.labels.length;
  e.pool_begin = c.eval.labels.pool_begin;
  e.pool_end = c.eval.labels.pool_end;
  e.slots = c.slots;
  e.seed = c.eval_seed;
  e.threads = c.threads;
  return e;
}

TradeoffConfig make_tradeoff_config(const RunConfig& c) {
  TradeoffConfig t;
  t.finetune = make_train_config(c);
  t.finetune.curriculum = {
      CurriculumStage{c.eval.zeroshot_classes, c.eval.zeroshot_length, c.eval.tradeoff_episodes, Labeling::None}};
  t.finetune.optimizer.learning_rate = c.eval.tradeoff_learning_rate;
  t.finetune.seed = mix_seed(c.train_seed, 0x70ad);
  t.eval_interval = c.eval.tradeoff_interval;
  t.eval_episodes = c.eval.episodes;
  t.eval_classes = c.eval.zeroshot_classes;
  t.eval_length = c.eval.zeroshot_length;
  t.eval = make_eval_config(c);
  return t;
}

Checkpoint make_checkpoint(const RunConfig& config, const Model& model) {
  Checkpoint ckpt;
  ckpt.metadata = serialize_config(config);
  ckpt.sections.emplace_back("embedder", model.embedder.params());
  ckpt.sections.emplace_back("attention", model.attention.params());
  return ckpt;
}

Restored restore(const Checkpoint& checkpoint, const RunConfig* override_config) {
  const ParamSet* emb = checkpoint.find("embedder");
  const ParamSet* att = checkpoint.find("attention");
  if (emb == nullptr || att == nullptr) throw LoadError("checkpoint lacks the embedder or attention section");
  RunConfig config;
  if (override_config != nullptr) {
    config = *override_config;
  } else {
    try {
      config = parse_config(checkpoint.metadata, false);
    } catch (const ConfigError& e) {
      throw LoadError(std::string("checkpoint metadata is not a valid config: ") + e.what());
    }
  }
  return {config, Model{Embedder(config.embedder, *emb), LabelAttention(*att)}};
}

}  // namespace cmem
