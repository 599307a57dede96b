#include "conceptmem/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "conceptmem/config.hpp"
#include "conceptmem/error.hpp"
#include "conceptmem/gradcheck.hpp"

namespace fs = std::filesystem;

namespace cmem {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text;
}

Checkpoint read_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw LoadError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

int cmd_train(const std::string& config_path, bool no_baseline, std::size_t threads, const std::string& output,
              std::ostream& out) {
  RunConfig config = load_config(config_path);
  if (no_baseline) config.optimizer.use_baseline = false;
  if (threads != 0) config.threads = threads;
  if (!output.empty()) config.output_dir = output;
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);

  const TaskData data = load_task_data(config);
  Model model = make_model(config);
  TrainConfig tc = make_train_config(config);
  tc.on_log = [&out](const LogRow& r) {
    out << "stage " << r.stage << " batch " << r.episode_batch << "  mean return " << std::fixed
        << std::setprecision(3) << r.mean_return << "  perfect " << r.perfect_rate << '\n';
    out.unsetf(std::ios::floatfield);
  };
  tc.on_checkpoint = [&](const Model& m, std::size_t batch) {
    save_checkpoint(make_checkpoint(config, m), dir / ("checkpoint_" + std::to_string(batch) + ".bin"));
  };
  const TrainingLog log = train(model, data.train, tc);
  write_text(dir / "train_log.csv", log.to_csv());
  save_checkpoint(make_checkpoint(config, model), dir / "checkpoint.bin");
  out << "wrote " << (dir / "checkpoint.bin").string() << " and " << (dir / "train_log.csv").string() << '\n';
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path, const std::string& protocol,
             std::size_t episodes, const std::string& output, std::ostream& out) {
  RunConfig config = load_config(config_path);
  Restored r = restore(read_checkpoint(checkpoint_path), &config);
  if (episodes != 0) config.eval.episodes = episodes;
  const fs::path dir = output.empty() ? fs::path(config.output_dir) : fs::path(output);
  const TaskData data = load_task_data(config);
  const EvalConfig ec = make_eval_config(config);

  if (protocol == "mann") {
    const auto rep = mann_eval(r.model, data.eval, config.eval.episodes, ec, config.eval.mann_classes,
                               config.eval.mann_length);
    write_text(dir / "mann_report.csv", rep.to_csv(config.eval.mann_k_max));
    out << "shot  accuracy  +/-95%   predictions\n";
    for (std::size_t j = 1; j <= config.eval.mann_k_max; ++j) {
      out << std::setw(4) << j << "  " << std::fixed << std::setprecision(4) << rep.accuracy(j) << "  "
          << rep.half_width(j) << "  " << (j < rep.counted.size() ? rep.counted[j] : 0) << '\n';
    }
  } else if (protocol == "nway" || protocol == "label-transfer") {
    const auto rep = protocol == "nway" ? nway_kshot_eval(r.model, data.eval, config.eval.n_way, config.eval.k_shot,
                                                          config.eval.episodes, ec)
                                        : label_transfer_eval(r.model, data.eval, config.eval.n_way,
                                                              config.eval.k_shot, config.eval.episodes, ec);
    const std::string name = protocol == "nway" ? "nway_report.csv" : "label_transfer_report.csv";
    write_text(dir / name, rep.to_csv());
    out << rep.n << "-way " << rep.k << "-shot accuracy " << std::fixed << std::setprecision(4) << rep.accuracy()
        << " +/- " << rep.ci95() << " over " << rep.episodes << " episodes\n";
  } else if (protocol == "zeroshot") {
    const auto rep = zeroshot_eval(r.model, data.eval, config.eval.episodes, ec, config.eval.zeroshot_classes,
                                   config.eval.zeroshot_length);
    std::ostringstream csv;
    csv << "zero_shot,one_shot,f1,first_appearances,second_appearances\n"
        << rep.zero_shot_accuracy << ',' << rep.one_shot_accuracy << ',' << rep.f1 << ','
        << rep.tally.first_appearances << ',' << rep.tally.second_appearances << '\n';
    write_text(dir / "zeroshot_report.csv", csv.str());
    out << "zero-shot " << std::fixed << std::setprecision(4) << rep.zero_shot_accuracy << "  one-shot "
        << rep.one_shot_accuracy << "  F1 " << rep.f1 << '\n';
  } else if (protocol == "tradeoff") {
    const TradeoffConfig tc = make_tradeoff_config(config);
    const auto series = tradeoff_experiment(r.model, data.train, data.eval, tc);
    write_text(dir / "tradeoff.csv", tradeoff_csv(series));
    out << "episodes  zero-shot  few-shot\n";
    for (const auto& p : series) {
      out << std::setw(8) << p.episodes << "  " << std::fixed << std::setprecision(4) << p.zero_shot << "     "
          << p.few_shot << '\n';
    }
  } else {
    throw UsageError("unknown protocol '" + protocol + "'");
  }
  return 0;
}

int cmd_inspect(const std::string& checkpoint_path, std::ostream& out) {
  const Checkpoint ckpt = read_checkpoint(checkpoint_path);
  for (const auto& [ns, params] : ckpt.sections) {
    out << "[" << ns << "] seed " << params.seed() << ", " << params.trainable_count() << " trainable values\n";
    for (const auto& p : params.entries()) {
      out << "  " << std::left << std::setw(24) << p.name << std::right << to_string(p.value.shape())
          << (p.trainable ? "" : "  (state)") << '\n';
    }
  }
  const Restored r = restore(ckpt);
  if (r.config.task == Task::Omniglot && data_root(r.config).empty()) {
    out << "no data root available; skipping the sample episode\n";
    return 0;
  }
  const TaskData data = load_task_data(r.config);
  const std::size_t n = std::min(r.config.eval.n_way, data.eval.num_classes());
  EpisodeSpec spec;
  spec.n_classes = n;
  spec.length = 2 * n;
  spec.labeling = Labeling::Seed;
  spec.scheme = r.config.eval.labels.scheme;
  spec.label_length = r.config.eval.labels.length;
  spec.pool_begin = r.config.eval.labels.pool_begin;
  spec.pool_end = r.config.eval.labels.pool_end;
  spec.seed = r.config.eval_seed;
  const Episode ep = sample_episode(data.eval, spec);
  Memory memory(r.config.slots != 0 ? r.config.slots : 2 * n, r.model.embedder.embedding_size(), spec.label_length);
  Rng rng(0);
  const EpisodeTrace trace = run_episode(r.model, ep, memory, RunOptions{}, rng);
  out << "greedy episode: classes";
  for (std::size_t c : ep.class_sequence()) out << ' ' << c;
  out << "\nactions";
  for (const auto& s : trace.steps) out << ' ' << s.action;
  out << "\nreturn " << trace.total_return << (trace.perfect ? " (perfect)" : "") << '\n';
  memory.dump(out);
  return 0;
}

int cmd_gradcheck(int seeds, double tol, std::ostream& out) {
  const auto suite = run_gradient_suite(seeds, tol);
  bool all = true;
  for (const auto& s : suite) {
    out << (s.passed ? "PASS " : "FAIL ") << std::left << std::setw(22) << s.op << std::right << " seeds "
        << s.seeds << "  worst rel err " << std::scientific << std::setprecision(2) << s.worst_rel_error << '\n';
    out.unsetf(std::ios::floatfield);
    all = all && s.passed;
  }
  return all ? 0 : 1;
}

int cmd_synth_gen(const std::string& spec_path, const std::string& dir, std::ostream& out) {
  std::ifstream in(spec_path);
  if (!in) throw ConfigError("cannot read synthetic spec " + spec_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  // Validated through the run-config parser so errors name the field.
  nlohmann::json wrapped = {{"data", {{"synthetic", j}, {"eval_classes", 1}}},
                            {"embedder", {{"kind", "identity"}, {"input_shape", {j.value("dimension", 16)}}}},
                            {"curriculum", nlohmann::json::array({{{"classes", 2}}})}};
  const RunConfig c = parse_config(wrapped.dump());
  const SyntheticData data = make_synthetic(c.synthetic);
  write_synthetic(data, c.synthetic, dir);
  out << "wrote " << data.dataset.num_classes() << " classes x " << c.synthetic.samples_per_class
      << " samples to " << dir << " (separability ratio " << data.separability << ")\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot concept learning with an episodic memory trained by policy gradients", "conceptmem"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, protocol, output, spec_path;
  bool no_baseline = false;
  std::size_t threads = 0, episodes = 0;
  int seeds = 100;
  double tol = 1e-4;

  auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
  train_cmd->add_option("config", config_path, "Run config JSON")->required();
  train_cmd->add_flag("--no-baseline", no_baseline, "Disable the moving-average baseline");
  train_cmd->add_option("--threads", threads, "Worker threads (overrides the config)");
  train_cmd->add_option("-o,--output", output, "Output directory (overrides the config)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("config", config_path, "Run config JSON")->required();
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval_cmd->add_option("--protocol", protocol, "Evaluation protocol")
      ->required()
      ->check(CLI::IsMember({"mann", "nway", "zeroshot", "tradeoff", "label-transfer"}));
  eval_cmd->add_option("--episodes", episodes, "Evaluation episodes (overrides the config)");
  eval_cmd->add_option("-o,--output", output, "Report directory (defaults to the config's output_dir)");

  auto* inspect_cmd = app.add_subcommand("inspect", "Show checkpoint contents and one greedy episode");
  inspect_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "Check every differentiable op against finite differences");
  grad_cmd->add_option("--seeds", seeds, "Random cases per op")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--tolerance", tol, "Relative error tolerance")->check(CLI::PositiveNumber);

  auto* synth_cmd = app.add_subcommand("synth-gen", "Write a synthetic Gaussian dataset as CSV");
  synth_cmd->add_option("spec", spec_path, "Synthetic spec JSON")->required();
  synth_cmd->add_option("-o,--output", output, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(config_path, no_baseline, threads, output, out);
    if (*eval_cmd) return cmd_eval(config_path, checkpoint_path, protocol, episodes, output, out);
    if (*inspect_cmd) return cmd_inspect(checkpoint_path, out);
    if (*grad_cmd) return cmd_gradcheck(seeds, tol, out);
    if (*synth_cmd) return cmd_synth_gen(spec_path, output, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace cmem
