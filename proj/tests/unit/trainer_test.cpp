#include <cmath>
#include <limits>

#include "conceptmem/data.hpp"
#include "conceptmem/error.hpp"
#include "conceptmem/trainer.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace cmem;

namespace {

/// Episode with class sequence `classes`; class c's samples are [c + 1] so
/// the identity embedding keeps classes apart.
Episode manual_episode(const std::vector<std::size_t>& classes, Labeling labeling = Labeling::None,
                       std::size_t label_length = 4) {
  Episode ep;
  ep.spec.label_length = label_length;
  ep.spec.labeling = labeling;
  std::set<std::size_t> seen;
  for (std::size_t c : classes) {
    EpisodeStep s;
    s.sample = Array::vector({static_cast<double>(c) + 1.0});
    s.class_id = c;
    s.label_id = c;
    s.true_label = encode_label(c, LabelScheme::OneHot, label_length);
    const bool first = seen.insert(c).second;
    const bool shown = labeling == Labeling::Full || (labeling == Labeling::Seed && first);
    s.label = shown ? s.true_label : unknown_label(label_length);
    ep.steps.push_back(s);
  }
  ep.classes.assign(seen.begin(), seen.end());
  return ep;
}

Model identity_model(std::size_t dim = 1, std::uint64_t seed = 1) {
  return Model{Embedder(EmbedderConfig::identity({dim}), seed), LabelAttention(8, seed)};
}

Model scaled_model(double gain) {
  EmbedderConfig c = EmbedderConfig::identity({1});
  c.kind = EmbedderKind::ScaledIdentity;
  Model m{Embedder(c, 1), LabelAttention(4, 1)};
  m.embedder.params().at("gain").value[0] = gain;
  return m;
}

EpisodeTrace forced(const Model& m, const Episode& ep, std::vector<std::size_t> actions, std::size_t slots) {
  Memory mem(slots, m.embedder.embedding_size(), ep.spec.label_length);
  RunOptions o;
  o.mode = ActionMode::Forced;
  o.forced_actions = std::move(actions);
  Rng rng(0);
  return run_episode(m, ep, mem, o, rng);
}

}  // namespace

TEST_CASE("step reward rules") {
  Memory m(3, 1, 2);
  PurityRecord purity(3);
  const RewardConfig cfg;
  CHECK(step_reward(m, 0, 0, purity, cfg) == -1.0);
  m.write(0, Array::vector({1}), Array({2}));
  purity.add(0, 0);
  CHECK(step_reward(m, 0, 1, purity, cfg) == -3.0);
  CHECK(step_reward(m, 0, 0, purity, cfg) == 0.0);
  CHECK_THROWS_AS(step_reward(m, 3, 0, purity, cfg), ContractError);
}

TEST_CASE("terminal reward rules") {
  const RewardConfig cfg;
  const std::vector<std::size_t> ab{0, 1};
  PurityRecord pure(3);
  pure.add(0, 0);
  pure.add(2, 1);
  CHECK(terminal_reward(pure, ab, cfg) == 100.0);
  PurityRecord split(3);
  split.add(0, 0);
  split.add(1, 0);
  split.add(2, 1);
  CHECK(terminal_reward(split, ab, cfg) == 0.0);
  PurityRecord mixed(3);
  mixed.add(0, 0);
  mixed.add(0, 1);
  CHECK(terminal_reward(mixed, ab, cfg) == 0.0);
}

TEST_CASE("run_episode returns") {
  const Model m = identity_model();
  const EpisodeTrace aab = forced(m, manual_episode({0, 0, 1}), {0, 0, 1}, 4);
  REQUIRE(aab.steps.size() == 3);
  CHECK(aab.steps[0].reward == -1.0);
  CHECK(aab.steps[1].reward == 0.0);
  CHECK(aab.steps[2].reward == -1.0);
  CHECK(aab.terminal == 100.0);
  CHECK(aab.total_return == 98.0);
  CHECK(aab.perfect);

  const EpisodeTrace ab = forced(m, manual_episode({0, 1}), {0, 0}, 4);
  CHECK(ab.steps[0].reward == -1.0);
  CHECK(ab.steps[1].reward == -3.0);
  CHECK(ab.terminal == 0.0);
  CHECK(ab.total_return == -4.0);
}

TEST_CASE("run_episode matches the brute-force path scorer on every path") {
  const Model m = identity_model();
  for (const auto& classes : std::vector<std::vector<std::size_t>>{{0, 1, 0}, {1, 1, 0, 0}, {0, 0, 0}, {0, 1}}) {
    const Episode ep = manual_episode(classes);
    oracle::for_each_path(classes.size(), 3, [&](const std::vector<std::size_t>& path) {
      const EpisodeTrace t = forced(m, ep, path, 3);
      const auto ref = oracle::score_path(classes, path);
      for (std::size_t i = 0; i < classes.size(); ++i) CHECK(t.steps[i].reward == ref.rewards[i]);
      CHECK(t.terminal == ref.terminal);
      CHECK(t.total_return == ref.total);
      CHECK(t.perfect == ref.perfect);
    });
  }
}

TEST_CASE("run_episode preconditions") {
  const Model m = identity_model();
  const Episode ep = manual_episode({0, 1});
  Memory mem(4, 1, 4);
  mem.write(0, Array::vector({1}), Array({4}));
  Rng rng(0);
  CHECK_THROWS_AS(run_episode(m, ep, mem, RunOptions{}, rng), ContractError);
  RunOptions o;
  o.mode = ActionMode::Forced;
  o.forced_actions = {0};
  Memory fresh(4, 1, 4);
  CHECK_THROWS_AS(run_episode(m, ep, fresh, o, rng), ContractError);
  Memory wrong(4, 2, 4);
  CHECK_THROWS_AS(run_episode(m, ep, wrong, RunOptions{}, rng), DimensionError);
}

TEST_CASE("greedy runs are deterministic and log-probabilities finite") {
  const Model m{Embedder(EmbedderConfig::mlp(1, {4, 3}), 3), LabelAttention(8, 3)};
  const Episode ep = manual_episode({0, 1, 0, 2, 1}, Labeling::Seed);
  Rng r1(0), r2(5);
  Memory a(6, 3, 4), b(6, 3, 4);
  const EpisodeTrace t1 = run_episode(m, ep, a, RunOptions{}, r1);
  const EpisodeTrace t2 = run_episode(m, ep, b, RunOptions{}, r2);
  REQUIRE(t1.steps.size() == t2.steps.size());
  for (std::size_t i = 0; i < t1.steps.size(); ++i) {
    CHECK(t1.steps[i].action == t2.steps[i].action);
    CHECK(t1.steps[i].probabilities == t2.steps[i].probabilities);
    CHECK(std::isfinite(t1.steps[i].log_prob));
  }
  CHECK(t1.total_return == t2.total_return);
}

TEST_CASE("return upper bound when every class appears") {
  const Model m{Embedder(EmbedderConfig::mlp(1, {4}), 2), LabelAttention(8, 2)};
  Dataset d;
  d.input_shape = {1};
  for (std::size_t c = 0; c < 6; ++c) d.classes.push_back(std::vector<Array>(10, Array::vector({double(c)})));
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    EpisodeSpec spec;
    spec.n_classes = 3;
    spec.length = 6;
    spec.labeling = Labeling::Seed;
    spec.require_all_classes = true;
    spec.seed = seed;
    const Episode ep = sample_episode(d, spec);
    Memory mem(6, 4, 10);
    RunOptions o;
    o.mode = ActionMode::Sample;
    Rng rng(seed);
    const EpisodeTrace t = run_episode(m, ep, mem, o, rng);
    CHECK(t.total_return <= 100.0 - 3.0);
  }
}

TEST_CASE("reinforce gradient identities") {
  const Model m = scaled_model(0.7);
  const Episode ep = manual_episode({0, 1, 0});
  auto sampled = [&](const RewardConfig& reward) {
    Memory mem(2, 1, 4);
    RunOptions o;
    o.mode = ActionMode::Sample;
    o.reward = reward;
    Rng rng(123);
    return run_episode(m, ep, mem, o, rng);
  };

  std::vector<EpisodeTrace> one;
  one.push_back(sampled(RewardConfig{}));
  const double G = one[0].total_return;
  const Gradients centered = reinforce_gradient(m, one, G);
  for (const auto& g : centered.values) {
    for (double v : g.data()) CHECK(v == 0.0);
  }

  // Same trajectory, returns on opposite sides of the baseline.
  RewardConfig high, low;
  high.fresh_slot_penalty = 50.0;
  low.fresh_slot_penalty = -50.0;
  std::vector<EpisodeTrace> pair;
  pair.push_back(sampled(high));
  pair.push_back(sampled(low));
  REQUIRE(pair[0].steps[0].action == pair[1].steps[0].action);
  REQUIRE(pair[0].total_return != pair[1].total_return);
  const double b = 0.5 * (pair[0].total_return + pair[1].total_return);
  const Gradients cancel = reinforce_gradient(m, pair, b);
  for (const auto& g : cancel.values) {
    for (double v : g.data()) CHECK(std::abs(v) <= 1e-12);
  }

  std::vector<EpisodeTrace> greedy;
  Memory mem(2, 1, 4);
  Rng rng(0);
  greedy.push_back(run_episode(m, ep, mem, RunOptions{}, rng));
  CHECK_THROWS_AS(reinforce_gradient(m, greedy, 0.0), ContractError);
}

TEST_CASE("reinforce gradient equals the score function of the sampled path") {
  // Single trace, b = 0: the estimate is G * d/dg sum_t log pi(a_t), which
  // central differences of the forced-path log-probability reproduce.
  const Episode ep = manual_episode({0, 1, 0});
  const Model m = scaled_model(0.9);
  Memory mem(2, 1, 4);
  RunOptions o;
  o.mode = ActionMode::Sample;
  Rng rng(7);
  std::vector<EpisodeTrace> traces;
  traces.push_back(run_episode(m, ep, mem, o, rng));
  std::vector<std::size_t> path;
  for (const auto& s : traces[0].steps) path.push_back(s.action);
  const Gradients g = reinforce_gradient(m, traces, 0.0);

  auto logp = [&](double gain) {
    const EpisodeTrace t = forced(scaled_model(gain), ep, path, 2);
    double s = 0.0;
    for (const auto& st : t.steps) s += st.log_prob;
    return s;
  };
  const double h = 1e-6;
  const double numeric = traces[0].total_return * (logp(0.9 + h) - logp(0.9 - h)) / (2 * h);
  REQUIRE(g.values.size() == m.trainable().size());
  CHECK(g.values[0][0] == doctest::Approx(numeric).epsilon(1e-6));
}

TEST_CASE("apply_update examples") {
  Model m{Embedder(EmbedderConfig::mlp(2, {3}), 4), LabelAttention(4, 4)};
  const Model original = m;
  const std::vector<double> returns{1.0, 3.0};

  OptimizerState s = make_optimizer(m, OptimizerConfig{});
  apply_update(s, m, zero_gradients(m), returns);
  CHECK(m.embedder.params() == original.embedder.params());
  CHECK(m.attention.params() == original.attention.params());
  CHECK(s.baseline == doctest::Approx(0.02));

  Gradients g = zero_gradients(m);
  for (auto& a : g.values) a.fill(0.5);
  OptimizerConfig frozen;
  frozen.learning_rate = 0.0;
  OptimizerState z = make_optimizer(m, frozen);
  apply_update(z, m, g, returns);
  CHECK(m.embedder.params() == original.embedder.params());

  Model a = original, b = original;
  OptimizerState sa = make_optimizer(a, OptimizerConfig{}), sb = make_optimizer(b, OptimizerConfig{});
  apply_update(sa, a, g, returns);
  apply_update(sb, b, g, returns);
  CHECK(a.embedder.params() == b.embedder.params());
  CHECK(a.attention.params() == b.attention.params());
  // Ascent: a positive gradient raises every parameter.
  CHECK(a.embedder.params().at("fc1.bias").value[0] > original.embedder.params().at("fc1.bias").value[0]);

  Gradients bad = zero_gradients(m);
  bad.values[1][0] = std::numeric_limits<double>::quiet_NaN();
  OptimizerState sn = make_optimizer(m, OptimizerConfig{});
  try {
    apply_update(sn, m, bad, returns);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("fc1.bias") != std::string::npos);
  }
}

TEST_CASE("train rejects empty or invalid curricula") {
  Model m = identity_model();
  Dataset d;
  d.input_shape = {1};
  d.classes.assign(3, std::vector<Array>(4, Array::vector({1})));
  TrainConfig cfg;
  CHECK_THROWS_AS(train(m, d, cfg), ConfigError);
  cfg.curriculum = {{5, 3, 10, Labeling::Full}};
  CHECK_THROWS_AS(train(m, d, cfg), ConfigError);
}

namespace {

struct SmallTask {
  Dataset data;
  TrainConfig cfg;
};

SmallTask two_class_task(std::size_t episodes) {
  SyntheticSpec spec;
  spec.n_classes = 10;
  spec.dimension = 4;
  spec.noise_sigma = 0.05;
  spec.samples_per_class = 10;
  spec.seed = 3;
  SmallTask t{make_synthetic(spec).dataset, {}};
  t.cfg.curriculum = {{2, 3, episodes, Labeling::Seed}};
  t.cfg.optimizer.learning_rate = 1e-2;
  t.cfg.seed = 9;
  t.cfg.log_interval = 5;
  return t;
}

}  // namespace

TEST_CASE("two-class curriculum reaches a high perfect-cluster rate") {
  SmallTask task = two_class_task(2000);
  Model m{Embedder(EmbedderConfig::mlp(4, {16, 8}), 1), LabelAttention(8, 2)};
  const TrainingLog log = train(m, task.data, task.cfg);
  REQUIRE_FALSE(log.rows.empty());
  double tail = 0.0;
  const std::size_t k = 4;
  for (std::size_t i = log.rows.size() - k; i < log.rows.size(); ++i) tail += log.rows[i].perfect_rate;
  CHECK(tail / k > 0.9);
  CHECK(log.to_csv().rfind("stage,episode_batch,mean_return,perfect_rate,wall_time_s\n", 0) == 0);
  CHECK(log.to_csv(false).rfind("stage,episode_batch,mean_return,perfect_rate\n", 0) == 0);
}

TEST_CASE("training results do not depend on the thread count") {
  SmallTask task = two_class_task(96);
  Model base{Embedder(EmbedderConfig::mlp(4, {8}), 1), LabelAttention(8, 2)};
  Model one = base, three = base;
  task.cfg.threads = 1;
  const TrainingLog l1 = train(one, task.data, task.cfg);
  task.cfg.threads = 3;
  const TrainingLog l3 = train(three, task.data, task.cfg);
  CHECK(one.embedder.params() == three.embedder.params());
  CHECK(one.attention.params() == three.attention.params());
  CHECK(l1.to_csv(false) == l3.to_csv(false));
}

TEST_CASE("checkpoint callback fires on its interval") {
  SmallTask task = two_class_task(64);
  task.cfg.optimizer.batch_size = 8;
  task.cfg.checkpoint_interval = 3;
  std::vector<std::size_t> batches;
  task.cfg.on_checkpoint = [&](const Model&, std::size_t b) { batches.push_back(b); };
  Model m{Embedder(EmbedderConfig::mlp(4, {8}), 1), LabelAttention(8, 2)};
  train(m, task.data, task.cfg);
  CHECK(batches == std::vector<std::size_t>{3, 6});
}
