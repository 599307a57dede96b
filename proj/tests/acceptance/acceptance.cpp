// Acceptance suite: one PASS/FAIL/SKIP line per criterion, exit status 1 if
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "conceptmem/cli.hpp"
#include "conceptmem/config.hpp"
#include "conceptmem/data.hpp"
#include "conceptmem/eval.hpp"
#include "conceptmem/gradcheck.hpp"
#include "conceptmem/memory.hpp"
#include "conceptmem/params.hpp"
#include "conceptmem/trainer.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace cmem;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

Outcome judge(bool ok, std::string detail) { return {ok ? Verdict::Pass : Verdict::Fail, std::move(detail)}; }

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

const fs::path& scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "conceptmem_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path config_path(const std::string& name) { return fs::path(CONCEPTMEM_SOURCE_DIR) / "configs" / name; }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Runs the command-line front end in-process; returns its exit code.
int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "conceptmem");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

/// Episode with class sequence `classes`, one-dimensional samples `xs` and
/// no labels shown.
Episode unlabeled_episode(const std::vector<std::size_t>& classes, const std::vector<double>& xs,
                          std::size_t label_length) {
  Episode ep;
  ep.spec.label_length = label_length;
  ep.spec.labeling = Labeling::None;
  std::set<std::size_t> seen;
  for (std::size_t t = 0; t < classes.size(); ++t) {
    EpisodeStep s;
    s.sample = Array::vector({xs[t]});
    s.class_id = classes[t];
    s.label_id = classes[t];
    s.true_label = encode_label(classes[t], LabelScheme::OneHot, label_length);
    s.label = unknown_label(label_length);
    seen.insert(classes[t]);
    ep.steps.push_back(s);
  }
  ep.classes.assign(seen.begin(), seen.end());
  return ep;
}

Outcome gradient_suite() {
  const Stopwatch clock;
  const auto summary = run_gradient_suite(100, 1e-4);
  const double secs = clock.seconds();
  bool ok = secs < 120.0 && !summary.empty();
  double worst = 0.0;
  std::string failed;
  for (const auto& s : summary) {
    worst = std::max(worst, s.worst_rel_error);
    if (!s.passed || s.seeds != 100) {
      ok = false;
      failed += " " + s.op;
    }
  }
  return judge(ok, std::to_string(summary.size()) + " ops x 100 seeds, worst rel err " + fmt("%.2e", worst) +
                       " (< 1e-4), " + fmt("%.1f s (< 120 s)", secs) + (failed.empty() ? "" : ", failing:" + failed));
}

Outcome memory_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  std::size_t count_mismatches = 0;
  for (int seq = 0; seq < 1000; ++seq) {
    const std::size_t L = 1 + rng.below(6), d = 1 + rng.below(8), T = 1 + rng.below(40);
    Memory m(L, d, 3);
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> actions;
    for (std::size_t t = 0; t < T; ++t) {
      Array h({d});
      for (auto& v : h.data()) v = rng.uniform(-10.0, 10.0);
      rows.push_back(h.values());
      actions.push_back(rng.below(L));
      m.write(actions.back(), h, Array({3}));
    }
    std::vector<std::size_t> counts;
    const auto means = oracle::slot_means(rows, actions, L, &counts);
    if (m.total_count() != T) ++count_mismatches;
    for (std::size_t s = 0; s < L; ++s) {
      if (m.slot(s).count != counts[s]) ++count_mismatches;
      for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::abs(m.slot(s).hidden[j] - means[s][j]));
    }
  }
  return judge(worst <= 1e-12 && count_mismatches == 0,
               "1000 sequences, max |mean error| " + fmt("%.2e", worst) + " (<= 1e-12), counter mismatches " +
                   std::to_string(count_mismatches));
}

Outcome return_oracle() {
  const Stopwatch clock;
  const Model model{Embedder(EmbedderConfig::identity({1}), 1), LabelAttention(4, 1)};
  std::size_t paths = 0, return_mismatches = 0, bonus_mismatches = 0;
  for (std::size_t T = 1; T <= 4; ++T) {
    // Every class sequence over at most two classes.
    oracle::for_each_path(T, 2, [&](const std::vector<std::size_t>& classes) {
      std::vector<double> xs;
      for (std::size_t c : classes) xs.push_back(static_cast<double>(c) + 1.0);
      const Episode ep = unlabeled_episode(classes, xs, 4);
      for (std::size_t L = 1; L <= 4; ++L) {
        oracle::for_each_path(T, L, [&](const std::vector<std::size_t>& actions) {
          Memory memory(L, 1, 4);
          RunOptions opts;
          opts.mode = ActionMode::Forced;
          opts.forced_actions = actions;
          Rng rng(0);
          const EpisodeTrace trace = run_episode(model, ep, memory, opts, rng);
          const oracle::PathScore expect = oracle::score_path(classes, actions);
          ++paths;
          if (trace.total_return != expect.total) ++return_mismatches;
          if ((trace.terminal != 0.0) != expect.perfect || trace.perfect != expect.perfect) ++bonus_mismatches;
        });
      }
    });
  }
  const double secs = clock.seconds();
  return judge(return_mismatches == 0 && bonus_mismatches == 0 && secs < 60.0,
               std::to_string(paths) + " paths, return mismatches " + std::to_string(return_mismatches) +
                   ", bonus mismatches " + std::to_string(bonus_mismatches) + ", " + fmt("%.1f s (< 60 s)", secs));
}

// Toy problem: h = g * x, two slots, unlabeled episode [A, B, A].
const std::vector<std::size_t> kToyClasses{0, 1, 0};
const std::vector<double> kToyInputs{1.0, -1.0, 0.8};

/// Exact expected return by enumerating all action paths. The policy is
/// recomputed here from its definition: softmax over slots of -|h - m_h|,
/// with m_h the mean of the embeddings written so far (0 when empty).
double toy_objective(double g) {
  double J = 0.0;
  oracle::for_each_path(kToyClasses.size(), 2, [&](const std::vector<std::size_t>& actions) {
    std::vector<double> sum(2, 0.0), count(2, 0.0);
    double prob = 1.0;
    for (std::size_t t = 0; t < actions.size(); ++t) {
      const double h = g * kToyInputs[t];
      double score[2], z = 0.0;
      for (int s = 0; s < 2; ++s) {
        const double m = count[s] > 0 ? sum[s] / count[s] : 0.0;
        score[s] = std::exp(-std::abs(h - m));
        z += score[s];
      }
      prob *= score[actions[t]] / z;
      sum[actions[t]] += h;
      count[actions[t]] += 1.0;
    }
    J += prob * oracle::score_path(kToyClasses, actions).total;
  });
  return J;
}

Outcome reinforce_toy() {
  constexpr double kGain = 1.5;
  constexpr double kStep = 1e-5;
  constexpr std::size_t kEpisodes = 100000, kChunk = 10000;
  const double exact = (toy_objective(kGain + kStep) - toy_objective(kGain - kStep)) / (2.0 * kStep);

  EmbedderConfig ec = EmbedderConfig::identity({1});
  ec.kind = EmbedderKind::ScaledIdentity;
  Model model{Embedder(ec, 1), LabelAttention(4, 1)};
  model.embedder.params().at("gain").value[0] = kGain;
  const Episode ep = unlabeled_episode(kToyClasses, kToyInputs, 2);

  Rng rng(99);
  double estimate = 0.0;
  for (std::size_t done = 0; done < kEpisodes; done += kChunk) {
    std::vector<EpisodeTrace> traces;
    traces.reserve(kChunk);
    for (std::size_t i = 0; i < kChunk; ++i) {
      Memory memory(2, 1, 2);
      RunOptions opts;
      opts.mode = ActionMode::Sample;
      traces.push_back(run_episode(model, ep, memory, opts, rng));
    }
    // Model::trainable() lists the embedder first; its only parameter is the gain.
    estimate += reinforce_gradient(model, traces, 0.0).values.at(0)[0] * (static_cast<double>(kChunk) / kEpisodes);
  }
  const double rel = std::abs(estimate - exact) / std::abs(exact);
  return judge(rel < 0.05, "exact dJ/dg " + fmt("%.4f", exact) + ", Monte Carlo over 1e5 episodes " +
                               fmt("%.4f", estimate) + ", rel err " + fmt("%.4f (< 0.05)", rel));
}

Outcome f1_table() {
  struct Row {
    double zero, one, reported;
  };
  const Row rows[] = {{0.684, 0.625, 0.653}, {0.364, 0.828, 0.506}, {0.049, 0.984, 0.093}};
  bool ok = true;
  std::string detail;
  for (const Row& r : rows) {
    const double v = f1(r.zero, r.one);
    ok = ok && std::abs(v - r.reported) <= 0.0005;
    detail += fmt("(%.1f, %.1f) -> %.2f vs %.1f; ", 100 * r.zero, 100 * r.one, 100 * v, 100 * r.reported);
  }
  return judge(ok, detail + "tolerance 0.05 points");
}

Outcome label_transfer() {
  const Stopwatch clock;
  const fs::path dir = scratch() / "label_transfer";
  if (cli({"train", config_path("label_transfer.json").string(), "-o", dir.string()}) != 0) {
    return {Verdict::Fail, "training run failed"};
  }
  const RunConfig config = load_config(config_path("label_transfer.json"));
  const Restored r = restore(load_checkpoint(dir / "checkpoint.bin"), &config);
  const TaskData data = load_task_data(config);
  const NwayReport rep = label_transfer_eval(r.model, data.eval, config.eval.n_way, config.eval.k_shot,
                                             config.eval.episodes, make_eval_config(config));
  const double secs = clock.seconds();
  return judge(rep.accuracy() >= 0.99 && rep.episodes == 1000 && secs < 600.0,
               "5-way 1-shot on binary length-15 labels, accuracy " + fmt("%.4f", rep.accuracy()) +
                   " over " + std::to_string(rep.episodes) + " episodes (>= 0.99), " + fmt("%.1f s (< 600 s)", secs));
}

struct SyntheticRun {
  RunConfig config;
  fs::path dir;
  double train_seconds = 0.0;
  bool ok = false;
};

/// Trains synthetic.json into one fixed output directory, so repeated runs
/// have identical configs, then moves the results to `name`.
SyntheticRun train_synthetic(const std::string& name) {
  SyntheticRun run;
  run.config = load_config(config_path("synthetic.json"));
  const fs::path out = scratch() / "synthetic";
  run.dir = scratch() / name;
  const Stopwatch clock;
  run.ok = cli({"train", config_path("synthetic.json").string(), "-o", out.string()}) == 0;
  run.train_seconds = clock.seconds();
  fs::rename(out, run.dir);
  return run;
}

Outcome synthetic_end_to_end(const SyntheticRun& run) {
  if (!run.ok) return {Verdict::Fail, "training run failed"};
  const RunConfig& config = run.config;
  const double separability = make_synthetic(config.synthetic).separability;
  const Stopwatch clock;
  const Restored r = restore(load_checkpoint(run.dir / "checkpoint.bin"), &config);
  const TaskData data = load_task_data(config);
  const NwayReport rep = nway_kshot_eval(r.model, data.eval, 5, 1, 2000, make_eval_config(config));
  const double secs = run.train_seconds + clock.seconds();
  return judge(separability >= 4.0 && rep.accuracy() >= 0.95 && config.threads == 1 && secs < 1800.0,
               "separability " + fmt("%.2f (>= 4)", separability) + ", 5-way 1-shot accuracy " +
                   fmt("%.4f", rep.accuracy()) + " over 2000 held-out episodes (>= 0.95), " +
                   fmt("%.1f s single-threaded (< 1800 s)", secs));
}

Outcome tradeoff_trend(const SyntheticRun& run) {
  if (!run.ok) return {Verdict::Fail, "criterion 7 checkpoint missing"};
  const RunConfig& config = run.config;
  Restored r = restore(load_checkpoint(run.dir / "checkpoint.bin"), &config);
  const TaskData data = load_task_data(config);
  const auto series = tradeoff_experiment(r.model, data.train, data.eval, make_tradeoff_config(config));
  if (series.size() < 2) return {Verdict::Fail, "trade-off series has no fine-tuning points"};
  const TradeoffPoint& first = series.front();
  const TradeoffPoint& last = series.back();
  const double rise = last.zero_shot - first.zero_shot;
  return judge(rise >= 0.20 && last.few_shot < first.few_shot,
               "zero-shot " + fmt("%.4f -> %.4f (rise %.4f >= 0.20)", first.zero_shot, last.zero_shot, rise) +
                   ", few-shot " + fmt("%.4f -> %.4f (must decrease)", first.few_shot, last.few_shot) + " after " +
                   std::to_string(last.episodes) + " unlabeled episodes");
}

Outcome protocol_sanity() {
  constexpr std::size_t kN = 5, kEpisodes = 2000;
  SyntheticSpec spec;
  spec.n_classes = 20;
  spec.dimension = 16;
  spec.center_scale = 0.0;
  spec.noise_sigma = 1.0;
  spec.samples_per_class = 20;
  spec.seed = 4;
  const Dataset noise = make_synthetic(spec).dataset;
  const Model random{Embedder(EmbedderConfig::mlp(16, {64, 32}), 17), LabelAttention(32, 17)};
  EvalConfig ec;
  const double acc = nway_kshot_eval(random, noise, kN, 1, kEpisodes, ec).accuracy();
  const double p = 1.0 / kN;
  const double band = oracle::three_sigma(p, kEpisodes);

  const Dataset orthogonal = oracle::orthogonal_dataset(12, 8);
  const Model exact{Embedder(EmbedderConfig::identity({12}), 1), oracle::latch_attention()};
  const double oracle_acc = nway_kshot_eval(exact, orthogonal, kN, 1, 500, ec).accuracy();
  return judge(std::abs(acc - p) <= band && oracle_acc == 1.0,
               "random model " + fmt("%.4f (1/N = %.2f +/- %.4f)", acc, p, band) + ", oracle model " +
                   fmt("%.4f (== 1)", oracle_acc));
}

std::string log_without_wall_time(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

Outcome determinism(const SyntheticRun& a, const SyntheticRun& b) {
  if (!a.ok || !b.ok) return {Verdict::Fail, "training run failed"};
  const std::string ca = read_file(a.dir / "checkpoint.bin"), cb = read_file(b.dir / "checkpoint.bin");
  const std::string la = log_without_wall_time(a.dir / "train_log.csv");
  const std::string lb = log_without_wall_time(b.dir / "train_log.csv");
  const bool same_ckpt = !ca.empty() && ca == cb;
  const bool same_log = la.size() > 1 && la == lb;
  return judge(same_ckpt && same_log, std::string("checkpoints ") + (same_ckpt ? "identical" : "differ") + " (" +
                                          std::to_string(ca.size()) + " bytes), logs " +
                                          (same_log ? "identical" : "differ") + " excluding wall_time_s");
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const std::string& id, const std::string& name, const Outcome& o) {
    const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
    if (o.verdict == Verdict::Fail) ++failures;
    std::cout << id << ' ' << tag << "  " << name << ": " << o.detail << std::endl;
  };
  auto guarded = [](const std::function<Outcome()>& f) -> Outcome {
    try {
      return f();
    } catch (const std::exception& e) {
      return {Verdict::Fail, std::string("exception: ") + e.what()};
    }
  };

  report("C1", "gradient suite", guarded(gradient_suite));
  report("C2", "memory oracle", guarded(memory_oracle));
  report("C3", "reward/return oracle", guarded(return_oracle));
  report("C4", "REINFORCE correctness", guarded(reinforce_toy));
  report("C5", "F1 reproduction", guarded(f1_table));
  report("C6", "label transfer", guarded(label_transfer));

  SyntheticRun first, second;
  const Outcome c7 = guarded([&] {
    first = train_synthetic("synthetic_a");
    return synthetic_end_to_end(first);
  });
  report("C7", "synthetic end-to-end", c7);
  report("C8", "trade-off trend", guarded([&] { return tradeoff_trend(first); }));
  report("C9", "protocol sanity", guarded(protocol_sanity));
  report("C10", "determinism", guarded([&] {
           second = train_synthetic("synthetic_b");
           return determinism(first, second);
         }));
  report("C11", "optional long run",
         {Verdict::Skip, "needs the Omniglot archive and about 8 CPU-hours; not part of CI"});

  std::cout << (failures == 0 ? "all criteria met" : std::to_string(failures) + " criterion(s) failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
