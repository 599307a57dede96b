#include "conceptmem/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <sstream>
#include <thread>

#include "conceptmem/error.hpp"

namespace cmem {

namespace {

constexpr double kZ95 = 1.959963984540054;

double proportion_half_width(std::size_t correct, std::size_t n) {
  if (n == 0) return 0.0;
  const double p = static_cast<double>(correct) / static_cast<double>(n);
  return kZ95 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

// Calls f(i) for i in [0, n); results must be written to per-index storage.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::size_t slots_for(const EvalConfig& config, std::size_t n_classes) {
  return config.slots != 0 ? config.slots : 2 * n_classes;
}

std::size_t greedy_slot(const Model& model, const Memory& memory, const Array& h, const Array& y) {
  Rng unused(0);
  const auto probs = attend(memory, h, y, model.attention);
  return choose_slot(probs, Selection::Greedy, unused);
}

EpisodeSpec eval_spec(const EvalConfig& config, std::size_t n_classes, std::size_t length, Labeling labeling,
                      std::uint64_t seed) {
  EpisodeSpec spec;
  spec.n_classes = n_classes;
  spec.length = length;
  spec.labeling = labeling;
  spec.scheme = config.scheme;
  spec.label_length = config.label_length;
  spec.pool_begin = config.pool_begin;
  spec.pool_end = config.pool_end;
  spec.seed = seed;
  return spec;
}

}  // namespace

double ShotAccuracyReport::accuracy(std::size_t shot) const {
  if (shot >= counted.size() || counted[shot] == 0) return 0.0;
  return static_cast<double>(correct[shot]) / static_cast<double>(counted[shot]);
}

double ShotAccuracyReport::half_width(std::size_t shot) const {
  if (shot >= counted.size()) return 0.0;
  return proportion_half_width(correct[shot], counted[shot]);
}

std::size_t ShotAccuracyReport::total_counted() const {
  std::size_t n = 0;
  for (std::size_t c : counted) n += c;
  return n;
}

std::string ShotAccuracyReport::to_csv(std::size_t k_max) const {
  std::ostringstream out;
  out << "shot,accuracy,ci95,predictions\n";
  for (std::size_t j = 1; j <= k_max; ++j) {
    out << j << ',' << accuracy(j) << ',' << half_width(j) << ',' << (j < counted.size() ? counted[j] : 0) << '\n';
  }
  return out.str();
}

ShotAccuracyReport mann_eval(const Model& model, const Dataset& dataset, std::size_t n_episodes,
                             const EvalConfig& config, std::size_t n_classes, std::size_t length) {
  std::vector<ShotAccuracyReport> per_episode(n_episodes);
  parallel_for(n_episodes, config.threads, [&](std::size_t e) {
    const Episode ep =
        sample_episode(dataset, eval_spec(config, n_classes, length, Labeling::Full, mix_seed(config.seed, e)));
    std::vector<Array> samples;
    for (const auto& s : ep.steps) samples.push_back(s.sample);
    const auto hidden = model.embedder.embed_all(samples);
    Memory memory(slots_for(config, n_classes), model.embedder.embedding_size(), config.label_length);
    std::map<std::size_t, std::size_t> seen;
    ShotAccuracyReport& r = per_episode[e];
    r.episodes = 1;
    r.steps = ep.size();
    for (std::size_t t = 0; t < ep.size(); ++t) {
      const auto& step = ep.steps[t];
      const std::size_t prior = seen[step.class_id]++;
      if (memory.occupied() == 0) {
        ++r.skipped;
      } else {
        const Prediction p = classify(memory, hidden[t], config.scheme);
        if (r.counted.size() <= prior) {
          r.counted.resize(prior + 1, 0);
          r.correct.resize(prior + 1, 0);
        }
        ++r.counted[prior];
        if (p.label == step.label_id) ++r.correct[prior];
      }
      const std::size_t slot = greedy_slot(model, memory, hidden[t], step.true_label.values);
      memory.write(slot, hidden[t], step.true_label.values);
    }
  });

  ShotAccuracyReport total;
  for (const auto& r : per_episode) {
    total.episodes += r.episodes;
    total.steps += r.steps;
    total.skipped += r.skipped;
    if (total.counted.size() < r.counted.size()) {
      total.counted.resize(r.counted.size(), 0);
      total.correct.resize(r.counted.size(), 0);
    }
    for (std::size_t j = 0; j < r.counted.size(); ++j) {
      total.counted[j] += r.counted[j];
      total.correct[j] += r.correct[j];
    }
  }
  if (total.total_counted() + total.skipped != total.steps) {
    throw ContractError("mann_eval: prediction bookkeeping does not add up");
  }
  return total;
}

double NwayReport::accuracy() const {
  return episodes == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(episodes);
}

double NwayReport::ci95() const { return proportion_half_width(correct, episodes); }

std::string NwayReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "n,k,accuracy,ci95,episodes\n" << n << ',' << k << ',' << accuracy() << ',' << ci95() << ',' << episodes << '\n';
  return out.str();
}

NwayReport nway_kshot_eval(const Model& model, const Dataset& dataset, std::size_t n_classes, std::size_t k_shot,
                           std::size_t n_episodes, const EvalConfig& config) {
  std::vector<char> hit(n_episodes, 0);
  parallel_for(n_episodes, config.threads, [&](std::size_t e) {
    const NwayEpisode ep = nway_kshot_episode(dataset, n_classes, k_shot, config.scheme, config.label_length,
                                              mix_seed(config.seed, e), config.pool_begin, config.pool_end);
    std::vector<Array> samples;
    for (const auto& s : ep.support) samples.push_back(s.sample);
    samples.push_back(ep.query.sample);
    const auto hidden = model.embedder.embed_all(samples);
    Memory memory(slots_for(config, n_classes), model.embedder.embedding_size(), config.label_length);
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
      const Array& y = ep.support[i].label.values;
      memory.write(greedy_slot(model, memory, hidden[i], y), hidden[i], y);
    }
    const Prediction p = classify(memory, hidden.back(), config.scheme);
    hit[e] = p.label == ep.query.label_id ? 1 : 0;
  });
  NwayReport r;
  r.n = n_classes;
  r.k = k_shot;
  r.episodes = n_episodes;
  for (char h : hit) r.correct += static_cast<std::size_t>(h);
  return r;
}

NwayReport label_transfer_eval(const Model& model, const Dataset& dataset, std::size_t n_classes,
                               std::size_t k_shot, std::size_t n_episodes, const EvalConfig& config) {
  std::vector<char> hit(n_episodes, 0);
  parallel_for(n_episodes, config.threads, [&](std::size_t e) {
    const NwayEpisode ep = nway_kshot_episode(dataset, n_classes, k_shot, config.scheme, config.label_length,
                                              mix_seed(config.seed, e), config.pool_begin, config.pool_end);
    std::vector<Array> samples;
    for (const auto& s : ep.support) samples.push_back(s.sample);
    samples.push_back(ep.query.sample);
    const auto hidden = model.embedder.embed_all(samples);
    Memory memory(slots_for(config, n_classes), model.embedder.embedding_size(), config.label_length);
    PurityRecord purity(memory.size());
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
      const Array& y = ep.support[i].label.values;
      const std::size_t slot = greedy_slot(model, memory, hidden[i], y);
      memory.write(slot, hidden[i], y);
      purity.add(slot, ep.support[i].class_id);
    }
    const std::size_t slot = greedy_slot(model, memory, hidden.back(), ep.query.true_label.values);
    hit[e] = purity.classes(slot).count(ep.query.class_id) ? 1 : 0;
  });
  NwayReport r;
  r.n = n_classes;
  r.k = k_shot;
  r.episodes = n_episodes;
  for (char h : hit) r.correct += static_cast<std::size_t>(h);
  return r;
}

RoutingTally& RoutingTally::operator+=(const RoutingTally& other) {
  first_appearances += other.first_appearances;
  first_to_empty += other.first_to_empty;
  second_appearances += other.second_appearances;
  second_to_own_slot += other.second_to_own_slot;
  return *this;
}

RoutingTally tally_routing(std::span<const std::size_t> classes, std::span<const std::size_t> actions) {
  if (classes.size() != actions.size()) throw ContractError("tally_routing: one action per step required");
  RoutingTally t;
  std::map<std::size_t, std::size_t> occupied;  // slot -> writes
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> seen;  // class -> (appearances, first slot)
  for (std::size_t i = 0; i < classes.size(); ++i) {
    auto it = seen.find(classes[i]);
    if (it == seen.end()) {
      ++t.first_appearances;
      if (occupied[actions[i]] == 0) ++t.first_to_empty;
      seen.emplace(classes[i], std::make_pair(std::size_t{1}, actions[i]));
    } else {
      if (it->second.first == 1) {
        ++t.second_appearances;
        if (actions[i] == it->second.second) ++t.second_to_own_slot;
      }
      ++it->second.first;
    }
    ++occupied[actions[i]];
  }
  return t;
}

double f1(double zero_shot, double one_shot) {
  if (zero_shot < 0.0 || zero_shot > 1.0 || one_shot < 0.0 || one_shot > 1.0) {
    throw ContractError("f1: accuracies must lie in [0, 1]");
  }
  if (zero_shot + one_shot == 0.0) return 0.0;
  return 2.0 * zero_shot * one_shot / (zero_shot + one_shot);
}

FewZeroReport few_zero_report(const RoutingTally& tally) {
  FewZeroReport r;
  r.tally = tally;
  if (tally.first_appearances > 0) {
    r.zero_shot_accuracy = static_cast<double>(tally.first_to_empty) / static_cast<double>(tally.first_appearances);
  }
  if (tally.second_appearances > 0) {
    r.one_shot_accuracy =
        static_cast<double>(tally.second_to_own_slot) / static_cast<double>(tally.second_appearances);
  }
  r.f1 = f1(r.zero_shot_accuracy, r.one_shot_accuracy);
  return r;
}

FewZeroReport zeroshot_eval(const Model& model, const Dataset& dataset, std::size_t n_episodes,
                            const EvalConfig& config, std::size_t n_classes, std::size_t length) {
  std::vector<RoutingTally> tallies(n_episodes);
  parallel_for(n_episodes, config.threads, [&](std::size_t e) {
    const Episode ep =
        sample_episode(dataset, eval_spec(config, n_classes, length, Labeling::None, mix_seed(config.seed, e)));
    Memory memory(slots_for(config, n_classes), model.embedder.embedding_size(), config.label_length);
    Rng rng(0);
    RunOptions opts;
    opts.mode = ActionMode::Greedy;
    const EpisodeTrace trace = run_episode(model, ep, memory, opts, rng);
    std::vector<std::size_t> actions;
    for (const auto& s : trace.steps) actions.push_back(s.action);
    const auto classes = ep.class_sequence();
    tallies[e] = tally_routing(classes, actions);
  });
  RoutingTally total;
  for (const auto& t : tallies) total += t;
  return few_zero_report(total);
}

std::vector<TradeoffPoint> tradeoff_experiment(Model& model, const Dataset& train_set, const Dataset& eval_set,
                                               const TradeoffConfig& config) {
  if (config.finetune.curriculum.size() != 1) {
    throw ConfigError("tradeoff.finetune.curriculum: exactly one stage expected");
  }
  if (config.eval_interval == 0) throw ConfigError("tradeoff.eval_interval: must be at least 1");
  const std::size_t total = config.finetune.curriculum[0].episodes;

  auto measure = [&](std::size_t done) {
    const FewZeroReport r =
        zeroshot_eval(model, eval_set, config.eval_episodes, config.eval, config.eval_classes, config.eval_length);
    return TradeoffPoint{done, r.zero_shot_accuracy, r.one_shot_accuracy};
  };

  std::vector<TradeoffPoint> series{measure(0)};
  OptimizerState state = make_optimizer(model, config.finetune.optimizer);
  std::size_t done = 0;
  while (done < total) {
    const std::size_t chunk = std::min(config.eval_interval, total - done);
    TrainConfig part = config.finetune;
    part.curriculum[0].episodes = chunk;
    train(model, train_set, part, &state, done);
    done += chunk;
    series.push_back(measure(done));
  }
  return series;
}

std::string tradeoff_csv(std::span<const TradeoffPoint> series) {
  std::ostringstream out;
  out << "episodes,zero_shot,few_shot\n";
  for (const auto& p : series) out << p.episodes << ',' << p.zero_shot << ',' << p.few_shot << '\n';
  return out.str();
}

}  // namespace cmem
