#include "conceptmem/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "conceptmem/error.hpp"

namespace cmem {

std::vector<const Parameter*> Model::trainable() const {
  std::vector<const Parameter*> out;
  for (const auto& p : embedder.params().entries()) {
    if (p.trainable) out.push_back(&p);
  }
  for (const auto& p : attention.params().entries()) {
    if (p.trainable) out.push_back(&p);
  }
  return out;
}

std::vector<Parameter*> Model::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : embedder.params().entries()) {
    if (p.trainable) out.push_back(&p);
  }
  for (auto& p : attention.params().entries()) {
    if (p.trainable) out.push_back(&p);
  }
  return out;
}

double step_reward(const Memory& before, std::size_t slot, std::size_t true_class, const PurityRecord& purity,
                   const RewardConfig& config) {
  if (slot >= before.size()) throw ContractError("step_reward: slot " + std::to_string(slot) + " out of range");
  if (before.slot(slot).empty()) return config.fresh_slot_penalty;
  for (std::size_t c : purity.classes(slot)) {
    if (c != true_class) return config.wrong_merge_penalty;
  }
  return config.correct_merge_reward;
}

bool perfect_clustering(const PurityRecord& purity, std::span<const std::size_t> appeared_classes) {
  std::unordered_map<std::size_t, std::size_t> slots_per_class;
  for (std::size_t s = 0; s < purity.size(); ++s) {
    const auto& cls = purity.classes(s);
    if (cls.size() > 1) return false;
    if (cls.size() == 1) ++slots_per_class[*cls.begin()];
  }
  for (std::size_t c : appeared_classes) {
    auto it = slots_per_class.find(c);
    if (it == slots_per_class.end() || it->second != 1) return false;
  }
  return true;
}

double terminal_reward(const PurityRecord& purity, std::span<const std::size_t> appeared_classes,
                       const RewardConfig& config) {
  return perfect_clustering(purity, appeared_classes) ? config.terminal_bonus : 0.0;
}

EpisodeTrace run_episode(const Model& model, const Episode& episode, Memory& memory, const RunOptions& options,
                         Rng& rng) {
  if (episode.steps.empty()) throw ContractError("run_episode: empty episode");
  if (memory.occupied() != 0) throw ContractError("run_episode: memory must be reset before an episode");
  if (memory.hidden_size() != model.embedder.embedding_size()) {
    throw DimensionError("run_episode: memory slots hold " + std::to_string(memory.hidden_size()) +
                         " values, embedder produces " + std::to_string(model.embedder.embedding_size()));
  }
  if (options.mode == ActionMode::Forced && options.forced_actions.size() != episode.size()) {
    throw ContractError("run_episode: forced mode needs one action per step");
  }

  const bool sample = options.mode == ActionMode::Sample;
  const bool record = sample || options.record;
  EpisodeTrace trace;
  trace.mode = options.mode;
  auto tape = std::make_unique<Tape>(record);

  std::vector<Array> samples;
  samples.reserve(episode.size());
  for (const auto& s : episode.steps) samples.push_back(s.sample);
  const Var embeddings = model.embedder.forward(*tape, samples, sample ? ops::NormMode::Train : ops::NormMode::Eval,
                                                sample ? &trace.batch_stats : nullptr);
  const auto bound = model.attention.bind(*tape);

  const Var zero = tape->constant(Array({memory.hidden_size()}));
  std::vector<Var> prototypes(memory.size(), zero);
  PurityRecord purity(memory.size());
  std::vector<std::size_t> appeared;
  std::vector<Var> log_probs;

  for (std::size_t t = 0; t < episode.size(); ++t) {
    const EpisodeStep& step = episode.steps[t];
    const Var h = ops::row(embeddings, t);
    const Var logits = attention_logits(*tape, memory, prototypes, h, step.label.values, model.attention, bound);
    const Var logp = ops::log_softmax(logits);

    StepRecord rec;
    rec.probabilities.resize(memory.size());
    for (std::size_t i = 0; i < memory.size(); ++i) rec.probabilities[i] = std::exp(logp.value()[i]);
    switch (options.mode) {
      case ActionMode::Sample:
        rec.action = choose_slot(rec.probabilities, Selection::Sample, rng);
        break;
      case ActionMode::Greedy:
        rec.action = choose_slot(rec.probabilities, Selection::Greedy, rng);
        break;
      case ActionMode::Forced:
        rec.action = options.forced_actions[t];
        if (rec.action >= memory.size()) {
          throw ContractError("run_episode: forced action " + std::to_string(rec.action) + " out of range");
        }
        break;
    }
    rec.log_prob = logp.value()[rec.action];
    rec.reward = step_reward(memory, rec.action, step.class_id, purity, options.reward);
    if (record) log_probs.push_back(ops::select(logp, rec.action));

    const std::size_t count = memory.slot(rec.action).count;
    prototypes[rec.action] = ops::running_mean(prototypes[rec.action], h, count);
    memory.write(rec.action, h.value(), step.label.values);
    purity.add(rec.action, step.class_id);
    if (std::find(appeared.begin(), appeared.end(), step.class_id) == appeared.end()) {
      appeared.push_back(step.class_id);
    }
    trace.total_return += rec.reward;
    trace.steps.push_back(std::move(rec));
  }

  trace.perfect = perfect_clustering(purity, appeared);
  trace.terminal = trace.perfect ? options.reward.terminal_bonus : 0.0;
  trace.total_return += trace.terminal;
  if (record) {
    trace.log_prob_sum = ops::sum(ops::stack(log_probs));
    trace.tape = std::move(tape);
  }
  return trace;
}

Gradients zero_gradients(const Model& model) {
  Gradients g;
  for (const Parameter* p : model.trainable()) g.values.emplace_back(p->value.shape());
  return g;
}

Gradients reinforce_gradient(const Model& model, std::span<const EpisodeTrace> traces, double baseline) {
  if (traces.empty()) throw ContractError("reinforce_gradient: empty batch");
  Gradients out = zero_gradients(model);
  const auto params = model.trainable();
  std::unordered_map<const Parameter*, std::size_t> index;
  for (std::size_t i = 0; i < params.size(); ++i) index[params[i]] = i;

  const double inv_batch = 1.0 / static_cast<double>(traces.size());
  for (const auto& trace : traces) {
    if (trace.mode != ActionMode::Sample || !trace.has_record()) {
      throw ContractError("reinforce_gradient: traces must come from sample-mode runs with a record");
    }
    const double weight = (trace.total_return - baseline) * inv_batch;
    if (weight == 0.0) continue;
    trace.tape->backward(trace.log_prob_sum, Array::scalar(weight));
    trace.tape->for_each_parameter_grad([&](const Parameter& p, const Array& g) {
      auto it = index.find(&p);
      if (it != index.end()) out.values[it->second].add_inplace(g);
    });
  }
  return out;
}

OptimizerState make_optimizer(const Model& model, const OptimizerConfig& config) {
  if (!(config.learning_rate >= 0.0)) throw ConfigError("optimizer.learning_rate: must be non-negative");
  if (config.batch_size == 0) throw ConfigError("optimizer.batch_size: must be at least 1");
  OptimizerState s;
  s.config = config;
  for (const Parameter* p : model.trainable()) {
    s.first_moment.emplace_back(p->value.shape());
    s.second_moment.emplace_back(p->value.shape());
  }
  return s;
}

void apply_update(OptimizerState& state, Model& model, const Gradients& policy_gradient,
                  std::span<const double> returns) {
  auto params = model.trainable();
  if (policy_gradient.values.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ContractError("apply_update: gradient or optimizer state does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double v : policy_gradient.values[i].data()) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient for parameter '" + params[i]->name + "'");
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Array& theta = params[i]->value;
    Array& m = state.first_moment[i];
    Array& v = state.second_moment[i];
    const Array& g = policy_gradient.values[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      // Ascent on J is descent on -J.
      const double d = -g[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * d;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * d * d;
      theta[j] -= c.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.epsilon);
    }
  }
  if (c.use_baseline && !returns.empty()) {
    double mean = 0.0;
    for (double r : returns) mean += r;
    mean /= static_cast<double>(returns.size());
    state.baseline = c.baseline_decay * state.baseline + (1.0 - c.baseline_decay) * mean;
  }
}

std::size_t slots_for(const TrainConfig& config, std::size_t n_classes) {
  return config.slots != 0 ? config.slots : 2 * n_classes;
}

std::string TrainingLog::to_csv(bool include_wall_time) const {
  std::ostringstream out;
  out.precision(10);
  out << "stage,episode_batch,mean_return,perfect_rate";
  if (include_wall_time) out << ",wall_time_s";
  out << '\n';
  for (const auto& r : rows) {
    out << r.stage << ',' << r.episode_batch << ',' << r.mean_return << ',' << r.perfect_rate;
    if (include_wall_time) out << ',' << r.wall_time_s;
    out << '\n';
  }
  return out.str();
}

namespace {

constexpr std::uint64_t kActionStream = 0x5eed0fac7105ULL;
constexpr std::size_t kGradientChunks = 8;

struct BatchResult {
  std::vector<EpisodeTrace> traces;
  Gradients gradient;
};

void validate(const TrainConfig& config, const Dataset& dataset) {
  if (config.curriculum.empty()) throw ConfigError("curriculum: at least one stage is required");
  for (std::size_t i = 0; i < config.curriculum.size(); ++i) {
    const auto& s = config.curriculum[i];
    const std::string at = "curriculum[" + std::to_string(i) + "]";
    if (s.n_classes == 0) throw ConfigError(at + ".classes: must be at least 1");
    if (s.length == 0) throw ConfigError(at + ".length: must be at least 1");
    if (s.episodes == 0) throw ConfigError(at + ".episodes: must be at least 1");
    if (s.n_classes > dataset.num_classes()) {
      throw ConfigError(at + ".classes: " + std::to_string(s.n_classes) + " exceeds the " +
                        std::to_string(dataset.num_classes()) + " training classes");
    }
  }
  if (config.threads == 0) throw ConfigError("threads: must be at least 1");
  if (config.log_interval == 0) throw ConfigError("log_interval: must be at least 1");
}

}  // namespace

TrainingLog train(Model& model, const Dataset& dataset, const TrainConfig& config, OptimizerState* state,
                  std::uint64_t first_episode) {
  validate(config, dataset);
  OptimizerState local;
  if (state == nullptr) {
    local = make_optimizer(model, config.optimizer);
    state = &local;
  } else if (state->first_moment.empty()) {
    *state = make_optimizer(model, config.optimizer);
  }

  const auto start = std::chrono::steady_clock::now();
  TrainingLog log;
  std::uint64_t episode_index = first_episode;
  std::size_t batch_index = 0;

  for (std::size_t stage_no = 0; stage_no < config.curriculum.size(); ++stage_no) {
    const CurriculumStage& stage = config.curriculum[stage_no];
    const std::size_t slots = slots_for(config, stage.n_classes);
    double acc_return = 0.0;
    std::size_t acc_perfect = 0;
    std::size_t acc_episodes = 0;
    std::size_t acc_batches = 0;

    auto flush = [&] {
      if (acc_episodes == 0) return;
      LogRow row;
      row.stage = stage_no;
      row.episode_batch = batch_index;
      row.mean_return = acc_return / static_cast<double>(acc_episodes);
      row.perfect_rate = static_cast<double>(acc_perfect) / static_cast<double>(acc_episodes);
      row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log.rows.push_back(row);
      if (config.on_log) config.on_log(row);
      acc_return = 0.0;
      acc_perfect = 0;
      acc_episodes = 0;
      acc_batches = 0;
    };

    std::size_t remaining = stage.episodes;
    while (remaining > 0) {
      const std::size_t batch = std::min(state->config.batch_size, remaining);
      // The batch is cut into a fixed number of contiguous chunks that
      // depends only on its size, and chunk gradients are summed in chunk
      // order, so the result does not depend on the thread count.
      const std::size_t chunks = std::min(kGradientChunks, batch);
      const std::size_t workers = std::min(config.threads, chunks);
      std::vector<BatchResult> results(chunks);
      std::vector<std::exception_ptr> errors(workers);

      auto run_chunk = [&](std::size_t c) {
        auto& r = results[c];
        for (std::size_t j = c * batch / chunks; j < (c + 1) * batch / chunks; ++j) {
          const std::uint64_t idx = episode_index + j;
          EpisodeSpec spec;
          spec.n_classes = stage.n_classes;
          spec.length = stage.length;
          spec.labeling = stage.labeling;
          spec.scheme = config.scheme;
          spec.label_length = config.label_length;
          spec.pool_begin = config.pool_begin;
          spec.pool_end = config.pool_end;
          spec.seed = mix_seed(config.seed, idx);
          const Episode ep = sample_episode(dataset, spec);
          Memory memory(slots, model.embedder.embedding_size(), config.label_length);
          Rng rng(mix_seed(config.seed ^ kActionStream, idx));
          RunOptions opts;
          opts.mode = ActionMode::Sample;
          opts.reward = config.reward;
          r.traces.push_back(run_episode(model, ep, memory, opts, rng));
        }
        r.gradient = reinforce_gradient(model, r.traces, state->baseline);
        const double share = static_cast<double>(r.traces.size()) / static_cast<double>(batch);
        for (auto& g : r.gradient.values) {
          for (double& v : g.data()) v *= share;
        }
      };
      auto work = [&](std::size_t w) {
        try {
          for (std::size_t c = w; c < chunks; c += workers) run_chunk(c);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      };
      if (workers == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
      }
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }

      Gradients total = std::move(results[0].gradient);
      for (std::size_t c = 1; c < chunks; ++c) {
        for (std::size_t i = 0; i < total.values.size(); ++i) total.values[i].add_inplace(results[c].gradient.values[i]);
      }
      std::vector<const EpisodeTrace*> ordered;
      ordered.reserve(batch);
      for (const auto& r : results) {
        for (const auto& t : r.traces) ordered.push_back(&t);
      }
      std::vector<double> returns;
      returns.reserve(batch);
      for (const EpisodeTrace* t : ordered) {
        returns.push_back(t->total_return);
        acc_return += t->total_return;
        acc_perfect += t->perfect ? 1 : 0;
      }
      apply_update(*state, model, total, returns);
      for (const EpisodeTrace* t : ordered) model.embedder.apply_batch_stats(t->batch_stats);

      acc_episodes += batch;
      episode_index += batch;
      remaining -= batch;
      ++batch_index;
      ++acc_batches;
      if (acc_batches == config.log_interval || remaining == 0) flush();
      if (config.checkpoint_interval != 0 && batch_index % config.checkpoint_interval == 0 && config.on_checkpoint) {
        config.on_checkpoint(model, batch_index);
      }
    }
  }
  return log;
}

}  // namespace cmem
